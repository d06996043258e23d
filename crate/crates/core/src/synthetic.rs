//! Deterministic synthetic scenes and sessions shared by tests, the
//! acceptance suite and the CLI fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{orientation_from_forward, EulerAngles, EulerOrder, GlobalGaze, Vec3};
use crate::trace::{EyeSample, Pose, Session, TraceSample};

fn base_sample(i: usize, t: f64, position: Vec3, orientation: EulerAngles) -> TraceSample {
    TraceSample {
        frame: i as u64,
        timestamp: t,
        headset: Pose { position, orientation },
        eye_left: EyeSample { direction: EulerAngles::default(), confidence: 1.0 },
        eye_right: EyeSample { direction: EulerAngles::default(), confidence: 1.0 },
        ..Default::default()
    }
}

/// Session whose headset at `positions[i]` looks straight at `target(i)`;
/// samples are spaced at 1/144 s. Returns the session and its gaze rays.
pub fn session_looking_at(
    positions: &[Vec3],
    target: impl Fn(usize) -> Vec3,
) -> (Session, Vec<GlobalGaze>) {
    let samples: Vec<TraceSample> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let o = orientation_from_forward(target(i) - *p, 0.0, EulerOrder::default());
            base_sample(i, i as f64 / 144.0, *p, o)
        })
        .collect();
    let s = Session::new("synthetic", "synthetic", samples);
    let gaze = s.gaze_rays(EulerOrder::default());
    (s, gaze)
}

/// Three occupied 1 m cubes in front of a viewer who sweeps the head from
/// −40° to +40° yaw over 10 samples; eyes are offset ±2° with unequal
/// confidence so the binocular fusion and gaze composition are exercised.
pub fn three_cube_sweep() -> (Vec<Vec3>, Session, Vec<GlobalGaze>) {
    let centers = [Vec3::new(3.5, -1.5, 1.5), Vec3::new(3.5, 0.5, 1.5), Vec3::new(3.5, 2.5, 1.5)];
    let mut scene = Vec::new();
    for (n, c) in centers.iter().enumerate() {
        for m in 0..(4 + 2 * n) {
            let o = (m as f64 * 0.37).sin() * 0.4;
            scene.push(*c + Vec3::new(o, -o * 0.5, o * 0.25));
        }
    }
    let samples: Vec<TraceSample> = (0..10)
        .map(|i| {
            let yaw = -40.0 + 80.0 * i as f64 / 9.0;
            let mut s = base_sample(
                i,
                i as f64 * 0.1,
                Vec3::new(0.1 * i as f64 - 0.5, 0.5, 1.6),
                EulerAngles::new(yaw, -3.0, 0.0),
            );
            s.eye_left = EyeSample { direction: EulerAngles::new(2.0, 1.0, 0.0), confidence: 0.9 };
            s.eye_right = EyeSample { direction: EulerAngles::new(-2.0, 1.0, 0.0), confidence: 0.6 };
            s
        })
        .collect();
    let s = Session::new("synthetic", "three_cube", samples);
    let gaze = s.gaze_rays(EulerOrder::default());
    (scene, s, gaze)
}

/// Random cloud in front of the origin and `n` random viewing samples.
pub fn random_viewing(seed: u64, n: usize) -> (Vec<Vec3>, Session, Vec<GlobalGaze>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene: Vec<Vec3> = (0..60)
        .map(|_| Vec3::new(rng.gen_range(1.0..4.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0)))
        .collect();
    let samples: Vec<TraceSample> = (0..n)
        .map(|i| {
            let p = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(1.4..1.8));
            let o = EulerAngles::new(rng.gen_range(-60.0..60.0), rng.gen_range(-20.0..20.0), 0.0);
            base_sample(i, i as f64 / 144.0, p, o)
        })
        .collect();
    let s = Session::new("synthetic", "random", samples);
    let gaze = s.gaze_rays(EulerOrder::default());
    (scene, s, gaze)
}

/// Session sampled at `rate` Hz for `duration` seconds from a pose function of time.
pub fn session_from_fn(
    rate: f64,
    duration: f64,
    pose: impl Fn(f64) -> (Vec3, EulerAngles),
) -> Session {
    let n = (duration * rate).round() as usize;
    let samples = (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            let (p, o) = pose(t);
            base_sample(i, t, p, o)
        })
        .collect();
    let mut s = Session::new("synthetic", "synthetic", samples);
    s.nominal_rate = rate;
    s
}

/// Viewer standing still at head height.
pub fn stationary(rate: f64, duration: f64) -> Session {
    session_from_fn(rate, duration, |_| (Vec3::new(0.2, -0.3, 1.65), EulerAngles::new(15.0, -5.0, 0.0)))
}

/// Viewer walking along +x at `speed` m/s while facing +x.
pub fn straight_walk(rate: f64, duration: f64, speed: f64) -> Session {
    session_from_fn(rate, duration, |t| (Vec3::new(speed * t, 0.0, 1.6), EulerAngles::default()))
}

/// Viewer orbiting a point while looking at it, with gaze pitched toward the floor.
pub fn orbit(rate: f64, duration: f64, radius: f64, period: f64) -> Session {
    session_from_fn(rate, duration, |t| {
        let a = std::f64::consts::TAU * t / period;
        let p = Vec3::new(radius * a.cos(), radius * a.sin(), 1.6);
        let yaw = (a + std::f64::consts::PI).to_degrees();
        (p, EulerAngles::new(yaw, 10.0, 0.0))
    })
}
