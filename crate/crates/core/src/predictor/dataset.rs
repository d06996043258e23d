//! Training windows cut from resampled sessions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{PredictorConfig, ViewportState};
use crate::error::{Error, Result};
use crate::geometry::{EulerOrder, GlobalGaze, Vec3};
use crate::trace::Session;

/// One supervised example: `n` observed states with their gaze rays, the
/// scene frame on screen at the last observed step, and `t` future states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub user_id: String,
    pub video_id: String,
    pub history: Vec<ViewportState>,
    pub gaze: Vec<GlobalGaze>,
    pub scene: Vec<Vec3>,
    pub target: Vec<ViewportState>,
}

impl Window {
    pub fn last(&self) -> &ViewportState {
        self.history.last().expect("window has history")
    }
}

/// Evenly strided subset of at most `k` points, keeping input order.
pub fn subsample_points(points: &[Vec3], k: usize) -> Vec<Vec3> {
    if points.len() <= k {
        return points.to_vec();
    }
    (0..k).map(|i| points[i * points.len() / k]).collect()
}

pub fn state_of(s: &crate::trace::TraceSample) -> ViewportState {
    ViewportState { position: s.headset.position, orientation: s.headset.orientation }
}

/// Cuts every `stride`-th window of `history_len + horizon` consecutive samples.
/// The session is expected at `cfg.rate_hz`; frame `k` of the session shows
/// scene frame `k mod frames.len()`.
pub fn build_windows(
    s: &Session,
    frames: &[Vec<Vec3>],
    cfg: &PredictorConfig,
    stride: usize,
) -> Result<Vec<Window>> {
    cfg.validate()?;
    if frames.is_empty() || frames.iter().any(|f| f.is_empty()) {
        return Err(Error::EmptyScene);
    }
    let (n, t) = (cfg.history_len, cfg.horizon);
    if s.samples.len() < n + t {
        return Err(Error::InsufficientSamples { needed: n + t, got: s.samples.len() });
    }
    let stride = stride.max(1);
    let order = EulerOrder::default();
    let mut out = Vec::new();
    let mut start = 0;
    while start + n + t <= s.samples.len() {
        let hist = &s.samples[start..start + n];
        let fut = &s.samples[start + n..start + n + t];
        let frame = hist[n - 1].frame as usize % frames.len();
        out.push(Window {
            user_id: s.user_id.clone(),
            video_id: s.video_id.clone(),
            history: hist.iter().map(state_of).collect(),
            gaze: hist.iter().map(|x| x.global_gaze(order).0).collect(),
            scene: subsample_points(&frames[frame], cfg.scene_points),
            target: fut.iter().map(state_of).collect(),
        });
        start += stride;
    }
    Ok(out)
}

/// Leave-users-out split: the last `ceil(fraction · users)` users in sorted
/// order go to validation, keeping at least one training user.
pub fn split_by_user(windows: Vec<Window>, fraction: f64) -> (Vec<Window>, Vec<Window>) {
    let users: Vec<String> =
        windows.iter().map(|w| w.user_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if users.len() < 2 {
        return (windows, Vec::new());
    }
    let k = ((fraction.clamp(0.0, 1.0) * users.len() as f64).ceil() as usize).min(users.len() - 1);
    let held: BTreeSet<&String> = users[users.len() - k..].iter().collect();
    windows.into_iter().partition(|w| !held.contains(&w.user_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn windows_cover_session() {
        let s = synthetic::straight_walk(30.0, 1.0, 1.0);
        let cfg = PredictorConfig { history_len: 5, horizon: 3, ..PredictorConfig::tiny() };
        let frames = vec![vec![Vec3::X; 30]];
        let w = build_windows(&s, &frames, &cfg, 2).unwrap();
        assert_eq!(w.len(), (31 - 8) / 2 + 1);
        assert_eq!(w[1].history[0].position, s.samples[2].headset.position);
        assert_eq!(w[1].target[0].position, s.samples[7].headset.position);
        assert_eq!(w[0].scene.len(), cfg.scene_points);
        assert!(matches!(build_windows(&s, &[], &cfg, 1), Err(Error::EmptyScene)));
    }

    #[test]
    fn split_holds_out_whole_users() {
        let s = synthetic::stationary(30.0, 0.5);
        let cfg = PredictorConfig { history_len: 2, horizon: 1, ..PredictorConfig::tiny() };
        let mut all = Vec::new();
        for u in ["a", "b", "c", "d"] {
            let mut s = s.clone();
            s.user_id = u.into();
            all.extend(build_windows(&s, &[vec![Vec3::X; 30]], &cfg, 4).unwrap());
        }
        let (train, val) = split_by_user(all, 0.25);
        assert!(val.iter().all(|w| w.user_id == "d"));
        assert!(train.iter().all(|w| w.user_id != "d"));
        assert!(!val.is_empty());
    }
}
