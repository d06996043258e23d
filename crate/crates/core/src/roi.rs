//! Volumetric ROI: cube decomposition of a point-cloud scene, gaze-cone hit
//! counting and per-cube ROI levels `F_a = ρ_c · f_g / D_c` with
//! `f_g = Σ N_g / N_sample`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{in_frustum, EulerOrder, GlobalGaze, Vec3};
use crate::trace::Session;

pub const DEFAULT_EDGE_M: f64 = 0.25;
pub const DEFAULT_TAU0: f64 = 4.0;
pub const DEFAULT_D_REF_M: f64 = 1.0;
/// Cubes hit in fewer samples than this are left out of ROI distributions.
pub const DEFAULT_MIN_HITS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CubeIndex {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl CubeIndex {
    pub const fn new(i: u32, j: u32, k: u32) -> Self {
        Self { i, j, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeStats {
    pub point_count: u64,
    /// Points per cubic meter.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub edge: f64,
    pub dims: [u32; 3],
    pub cubes: BTreeMap<CubeIndex, CubeStats>,
}

impl VoxelGrid {
    pub fn center(&self, c: CubeIndex) -> Vec3 {
        self.origin
            + Vec3::new(
                (c.i as f64 + 0.5) * self.edge,
                (c.j as f64 + 0.5) * self.edge,
                (c.k as f64 + 0.5) * self.edge,
            )
    }

    /// Cube containing `p`, or `None` when `p` is outside the grid bounds.
    pub fn index_of(&self, p: Vec3) -> Option<CubeIndex> {
        let mut idx = [0u32; 3];
        for (axis, slot) in idx.iter_mut().enumerate() {
            let f = ((p.get(axis) - self.origin.get(axis)) / self.edge).floor();
            if !(f >= 0.0 && f < self.dims[axis] as f64) {
                return None;
            }
            *slot = f as u32;
        }
        Some(CubeIndex::new(idx[0], idx[1], idx[2]))
    }

    pub fn total_points(&self) -> u64 {
        self.cubes.values().map(|c| c.point_count).sum()
    }

    pub fn volume(&self) -> f64 {
        self.edge * self.edge * self.edge
    }

    /// Per-cube point counts of another cloud (e.g. one frame) binned on this grid.
    /// Points outside the grid are ignored.
    pub fn bin_counts(&self, points: &[Vec3]) -> BTreeMap<CubeIndex, u64> {
        let mut out = BTreeMap::new();
        for p in points {
            if let Some(c) = self.index_of(*p) {
                *out.entry(c).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Voxelizes a cloud into cubes of side `edge`; the grid origin snaps to a
/// multiple of `edge` below the minimum corner.
pub fn build_grid(points: &[Vec3], edge: f64) -> Result<VoxelGrid> {
    if points.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(edge > 0.0 && edge.is_finite()) {
        return Err(Error::InvalidConfig(format!("cube edge must be positive, got {edge}")));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p.get(a));
            hi[a] = hi[a].max(p.get(a));
        }
    }
    let origin = Vec3::from_array(lo.map(|v| (v / edge).floor() * edge));
    let mut dims = [0u32; 3];
    for a in 0..3 {
        dims[a] = ((hi[a] - origin.get(a)) / edge).floor() as u32 + 1;
    }
    let bin = |p: &Vec3| {
        let idx: [u32; 3] = std::array::from_fn(|a| {
            let f = ((p.get(a) - origin.get(a)) / edge).floor().max(0.0) as u32;
            f.min(dims[a] - 1)
        });
        CubeIndex::new(idx[0], idx[1], idx[2])
    };
    let mut counts: BTreeMap<CubeIndex, u64> = BTreeMap::new();
    for p in points {
        *counts.entry(bin(p)).or_insert(0) += 1;
    }
    let volume = edge * edge * edge;
    let cubes = counts
        .into_iter()
        .map(|(c, n)| (c, CubeStats { point_count: n, density: n as f64 / volume }))
        .collect();
    Ok(VoxelGrid { origin, edge, dims, cubes })
}

/// Minimum-occupancy rule for effective cubes.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdRule {
    Fixed { min_points: f64 },
    /// `τ(D̄) = τ₀·(D̄/D_ref)²` clamped to `[τ₀, 16·τ₀]`, with `D̄` the cube's
    /// mean distance to the headset trajectory.
    DistanceAdaptive { tau0: f64, d_ref: f64, trajectory: Vec<Vec3> },
}

impl ThresholdRule {
    pub fn threshold_for(&self, center: Vec3) -> f64 {
        match self {
            ThresholdRule::Fixed { min_points } => *min_points,
            ThresholdRule::DistanceAdaptive { tau0, d_ref, trajectory } => {
                if trajectory.is_empty() {
                    return *tau0;
                }
                let mean = trajectory.iter().map(|p| p.distance(center)).sum::<f64>()
                    / trajectory.len() as f64;
                (tau0 * (mean / d_ref).powi(2)).clamp(*tau0, 16.0 * tau0)
            }
        }
    }
}

pub fn filter_cubes(grid: &VoxelGrid, rule: &ThresholdRule) -> BTreeSet<CubeIndex> {
    grid.cubes
        .iter()
        .filter(|(c, s)| s.point_count as f64 >= rule.threshold_for(grid.center(**c)))
        .map(|(c, _)| *c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HitStats {
    /// `N_g`: samples whose gaze cone contains the cube center.
    pub hits: u64,
    /// Σ headset–center distance over hit samples, in sample order.
    pub distance_sum: f64,
    /// Σ 1/distance over hit samples.
    pub inv_distance_sum: f64,
    /// Σ per-frame density over hit samples (only with frame-aligned clouds).
    pub density_sum: f64,
}

impl HitStats {
    /// `D_c`: mean headset–center distance over hit samples.
    pub fn mean_distance(&self) -> Option<f64> {
        (self.hits > 0).then(|| self.distance_sum / self.hits as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitCounts {
    pub per_cube: BTreeMap<CubeIndex, HitStats>,
    pub n_samples: usize,
    pub per_frame_density: bool,
}

/// Per-frame cube occupancy used when the scene is frame-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDensity {
    pub frames: Vec<BTreeMap<CubeIndex, u64>>,
    pub volume: f64,
}

impl FrameDensity {
    pub fn new(grid: &VoxelGrid, frames: &[Vec<Vec3>]) -> Self {
        Self {
            frames: frames.iter().map(|f| grid.bin_counts(f)).collect(),
            volume: grid.volume(),
        }
    }

    fn density(&self, frame: u64, c: &CubeIndex) -> f64 {
        let f = &self.frames[(frame as usize) % self.frames.len()];
        f.get(c).copied().unwrap_or(0) as f64 / self.volume
    }
}

/// Counts, per cube, the samples whose cone (apex at the gaze origin) contains
/// the cube center. A cube whose center coincides with the apex is not hit.
pub fn count_hits(
    session: &Session,
    gaze: &[GlobalGaze],
    grid: &VoxelGrid,
    cubes: &BTreeSet<CubeIndex>,
    half_angle_deg: f64,
) -> Result<HitCounts> {
    count_hits_with(session, gaze, grid, cubes, half_angle_deg, None)
}

pub fn count_hits_with(
    session: &Session,
    gaze: &[GlobalGaze],
    grid: &VoxelGrid,
    cubes: &BTreeSet<CubeIndex>,
    half_angle_deg: f64,
    frames: Option<&FrameDensity>,
) -> Result<HitCounts> {
    if gaze.len() != session.samples.len() {
        return Err(Error::MisalignedInputs(format!(
            "{} gaze rays for {} samples",
            gaze.len(),
            session.samples.len()
        )));
    }
    if let Some(f) = frames {
        if f.frames.is_empty() {
            return Err(Error::EmptyScene);
        }
    }
    let cube_list: Vec<CubeIndex> = cubes.iter().copied().collect();
    let stats: Vec<HitStats> = cube_list
        .par_iter()
        .map(|c| {
            let center = grid.center(*c);
            let mut st = HitStats::default();
            for (sample, g) in session.samples.iter().zip(gaze) {
                if let Ok(true) = in_frustum(g, center, half_angle_deg) {
                    let d = center.distance(sample.headset.position);
                    st.hits += 1;
                    st.distance_sum += d;
                    st.inv_distance_sum += 1.0 / d;
                    if let Some(f) = frames {
                        st.density_sum += f.density(sample.frame, c);
                    }
                }
            }
            st
        })
        .collect();
    Ok(HitCounts {
        per_cube: cube_list.into_iter().zip(stats).collect(),
        n_samples: session.samples.len(),
        per_frame_density: frames.is_some(),
    })
}

/// How the viewer distance enters the ROI level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// `F_a = ρ_c · f_g / D̄_c` with `D̄_c` the mean distance over hit samples.
    #[default]
    MeanHit,
    /// `F_a = ρ_c · Σ_hits (1/D_c(i)) / N_sample`.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub center: Vec3,
    pub point_count: u64,
    pub density: f64,
    pub hits: u64,
    pub f_g: f64,
    pub mean_distance: Option<f64>,
    pub f_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiMap {
    pub origin: Vec3,
    pub edge: f64,
    pub n_sample: usize,
    pub entries: BTreeMap<CubeIndex, RoiEntry>,
}

/// Converts hit counts into ROI levels for every counted cube.
pub fn roi_levels(counts: &HitCounts, grid: &VoxelGrid, mode: DistanceMode) -> Result<RoiMap> {
    let n_sample = counts.n_samples;
    if n_sample == 0 {
        return Err(Error::EmptySession);
    }
    let n = n_sample as f64;
    let mut entries = BTreeMap::new();
    for (c, h) in &counts.per_cube {
        let stats = grid.cubes.get(c).copied().unwrap_or(CubeStats { point_count: 0, density: 0.0 });
        let density = if counts.per_frame_density && h.hits > 0 {
            h.density_sum / h.hits as f64
        } else {
            stats.density
        };
        let f_g = h.hits as f64 / n;
        let mean_distance = h.mean_distance();
        let f_a = match (h.hits, mode, mean_distance) {
            (0, _, _) | (_, _, None) => 0.0,
            (_, DistanceMode::MeanHit, Some(d)) => density * f_g / d,
            (_, DistanceMode::PerSample, Some(_)) => density * h.inv_distance_sum / n,
        };
        entries.insert(
            *c,
            RoiEntry {
                center: grid.center(*c),
                point_count: stats.point_count,
                density,
                hits: h.hits,
                f_g,
                mean_distance,
                f_a,
            },
        );
    }
    Ok(RoiMap { origin: grid.origin, edge: grid.edge, n_sample, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiDistribution {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub cubes: usize,
}

/// Histogram and moments of `F_a` over cubes hit in at least `min_hits` samples
/// (`min_hits = 0` keeps every cube, including unhit ones).
pub fn roi_distribution(m: &RoiMap, bins: usize, min_hits: u64) -> Result<RoiDistribution> {
    let values: Vec<f64> = m
        .entries
        .values()
        .filter(|e| e.hits >= min_hits)
        .map(|e| e.f_a)
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyMap);
    }
    let bins = bins.max(1);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for v in &values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(RoiDistribution { edges, counts, mean, std_dev: var.sqrt(), cubes: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiOptions {
    pub edge: f64,
    pub half_angle: f64,
    pub tau0: f64,
    pub d_ref: f64,
    pub adaptive_threshold: bool,
    pub distance_mode: DistanceMode,
    pub euler_order: EulerOrder,
}

impl Default for RoiOptions {
    fn default() -> Self {
        Self {
            edge: DEFAULT_EDGE_M,
            half_angle: crate::geometry::DEFAULT_HALF_ANGLE_DEG,
            tau0: DEFAULT_TAU0,
            d_ref: DEFAULT_D_REF_M,
            adaptive_threshold: true,
            distance_mode: DistanceMode::MeanHit,
            euler_order: EulerOrder::RollPitchYaw,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoiResult {
    pub grid: VoxelGrid,
    pub effective: BTreeSet<CubeIndex>,
    pub map: RoiMap,
}

/// Full pipeline: segment the scene, filter near-empty cubes, count gaze hits
/// and compute ROI levels. With more than one frame the grid is built on the
/// union and densities follow the frame each sample was viewing.
pub fn compute_roi(session: &Session, frames: &[Vec<Vec3>], opts: &RoiOptions) -> Result<RoiResult> {
    let union: Vec<Vec3> = frames.iter().flatten().copied().collect();
    let grid = build_grid(&union, opts.edge)?;
    let trajectory: Vec<Vec3> = session.samples.iter().map(|s| s.headset.position).collect();
    let rule = if opts.adaptive_threshold {
        ThresholdRule::DistanceAdaptive { tau0: opts.tau0, d_ref: opts.d_ref, trajectory }
    } else {
        ThresholdRule::Fixed { min_points: opts.tau0 }
    };
    let effective = filter_cubes(&grid, &rule);
    let gaze = session.gaze_rays(opts.euler_order);
    let per_frame = (frames.len() > 1).then(|| FrameDensity::new(&grid, frames));
    let counts = count_hits_with(session, &gaze, &grid, &effective, opts.half_angle, per_frame.as_ref())?;
    let map = roi_levels(&counts, &grid, opts.distance_mode)?;
    Ok(RoiResult { grid, effective, map })
}

fn opt_real(v: Option<f64>) -> String {
    v.map(|d| format!("{d}")).unwrap_or_default()
}

pub fn roi_csv(m: &RoiMap) -> String {
    let mut out = String::from("i,j,k,cx,cy,cz,point_count,density,hits,f_g,mean_distance,f_a\n");
    for (c, e) in &m.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.i,
            c.j,
            c.k,
            e.center.x,
            e.center.y,
            e.center.z,
            e.point_count,
            e.density,
            e.hits,
            e.f_g,
            opt_real(e.mean_distance),
            e.f_a
        );
    }
    out
}

pub fn histogram_csv(d: &RoiDistribution) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (b, count) in d.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", d.edges[b], d.edges[b + 1], count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_between;
    use crate::synthetic;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_single_cube() {
        let g = build_grid(&[Vec3::ZERO], 1.0).unwrap();
        assert_eq!(g.cubes.len(), 1);
        let s = g.cubes[&CubeIndex::new(0, 0, 0)];
        assert_eq!(s.point_count, 1);
        assert_eq!(s.density, 1.0);
        assert!(matches!(build_grid(&[], 1.0), Err(Error::EmptyScene)));
    }

    #[test]
    fn eight_centers_eight_cubes() {
        let mut pts = Vec::new();
        for x in [0.5, 1.5] {
            for y in [0.5, 1.5] {
                for z in [0.5, 1.5] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        let g = build_grid(&pts, 1.0).unwrap();
        assert_eq!(g.cubes.len(), 8);
        assert!(g.cubes.values().all(|c| c.point_count == 1));
    }

    #[test]
    fn uniform_cloud_conserves_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0)))
            .collect();
        let g = build_grid(&pts, 0.5).unwrap();
        assert_eq!(g.total_points(), 1000);
        // brute-force oracle: recount by direct cube-interval membership
        for (c, s) in &g.cubes {
            let lo = g.center(*c) - Vec3::new(0.25, 0.25, 0.25);
            let n = pts
                .iter()
                .filter(|p| (0..3).all(|a| p.get(a) >= lo.get(a) && p.get(a) < lo.get(a) + 0.5))
                .count() as u64;
            assert_eq!(n, s.point_count);
        }
    }

    #[test]
    fn threshold_rules() {
        let mut pts = vec![Vec3::new(0.5, 0.5, 0.5); 5];
        pts.extend(vec![Vec3::new(1.5, 0.5, 0.5); 5]);
        let g = build_grid(&pts, 1.0).unwrap();
        assert_eq!(filter_cubes(&g, &ThresholdRule::Fixed { min_points: 1.0 }).len(), 2);
        assert!(filter_cubes(&g, &ThresholdRule::Fixed { min_points: 10.0 }).is_empty());

        let far = build_grid(&vec![Vec3::new(2.5, 0.5, 0.5); 12], 1.0).unwrap();
        // cube center (2.5,0.5,0.5) is 2m from a trajectory sitting at (0.5,0.5,0.5)
        let rule = ThresholdRule::DistanceAdaptive {
            tau0: 4.0,
            d_ref: 1.0,
            trajectory: vec![Vec3::new(0.5, 0.5, 0.5)],
        };
        assert_eq!(rule.threshold_for(Vec3::new(2.5, 0.5, 0.5)), 16.0);
        assert!(filter_cubes(&far, &rule).is_empty());
        // clamp bounds
        assert_eq!(rule.threshold_for(Vec3::new(0.5, 0.5, 0.6)), 4.0);
        assert_eq!(rule.threshold_for(Vec3::new(100.0, 0.5, 0.5)), 64.0);
    }

    fn all_cubes(g: &VoxelGrid) -> BTreeSet<CubeIndex> {
        g.cubes.keys().copied().collect()
    }

    #[test]
    fn fixating_one_cube_hits_every_sample() {
        let g = build_grid(&[Vec3::new(3.5, 0.5, 1.5), Vec3::new(-3.5, 0.5, 1.5)], 1.0).unwrap();
        let target = g.index_of(Vec3::new(3.5, 0.5, 1.5)).unwrap();
        let behind = g.index_of(Vec3::new(-3.5, 0.5, 1.5)).unwrap();
        let center = g.center(target);
        let positions: Vec<Vec3> = (0..12).map(|i| Vec3::new(0.0, i as f64 * 0.05, 1.6)).collect();
        let (session, gaze) = synthetic::session_looking_at(&positions, |_| center);
        let h = count_hits(&session, &gaze, &g, &all_cubes(&g), 30.0).unwrap();
        assert_eq!(h.per_cube[&target].hits, 12);
        assert_eq!(h.per_cube[&behind].hits, 0);
        assert!(matches!(
            count_hits(&session, &gaze[1..], &g, &all_cubes(&g), 30.0),
            Err(Error::MisalignedInputs(_))
        ));
    }

    #[test]
    fn sweep_matches_pairwise_enumeration() {
        let (scene, session, gaze) = synthetic::three_cube_sweep();
        let g = build_grid(&scene, 1.0).unwrap();
        let cubes = all_cubes(&g);
        let h = count_hits(&session, &gaze, &g, &cubes, 30.0).unwrap();
        for c in &cubes {
            let center = g.center(*c);
            // independent acos-of-normalized-dot enumeration over every (sample, cube) pair
            let expected = gaze
                .iter()
                .filter(|r| {
                    let v = center - r.origin;
                    let cos = v.dot(r.direction) / (v.norm() * r.direction.norm());
                    cos.clamp(-1.0, 1.0).acos() <= 30f64.to_radians()
                })
                .count() as u64;
            assert_eq!(h.per_cube[c].hits, expected, "cube {c:?}");
        }
        assert!(h.per_cube.values().any(|s| s.hits > 0));
    }

    #[test]
    fn roi_level_formula() {
        let mut counts = HitCounts { per_cube: BTreeMap::new(), n_samples: 4, per_frame_density: false };
        let c = CubeIndex::new(0, 0, 0);
        counts.per_cube.insert(c, HitStats { hits: 2, distance_sum: 4.0, inv_distance_sum: 1.0, density_sum: 0.0 });
        // one cube of edge 0.5 with 1 point → ρ = 8 pt/m³
        let g = build_grid(&[Vec3::new(0.1, 0.1, 0.1)], 0.5).unwrap();
        let m = roi_levels(&counts, &g, DistanceMode::MeanHit).unwrap();
        let e = m.entries[&c];
        assert_eq!(e.density, 8.0);
        assert_eq!(e.f_g, 0.5);
        assert_eq!(e.mean_distance, Some(2.0));
        assert_eq!(e.f_a, 2.0);

        counts.per_cube.insert(c, HitStats::default());
        let m = roi_levels(&counts, &g, DistanceMode::MeanHit).unwrap();
        assert_eq!(m.entries[&c].f_a, 0.0);
    }

    fn map_from(values: &[(f64, u64)]) -> RoiMap {
        let entries = values
            .iter()
            .enumerate()
            .map(|(i, &(f_a, hits))| {
                (
                    CubeIndex::new(i as u32, 0, 0),
                    RoiEntry {
                        center: Vec3::ZERO,
                        point_count: 1,
                        density: 1.0,
                        hits,
                        f_g: 0.0,
                        mean_distance: None,
                        f_a,
                    },
                )
            })
            .collect();
        RoiMap { origin: Vec3::ZERO, edge: 1.0, n_sample: 10, entries }
    }

    #[test]
    fn distribution_moments() {
        let d = roi_distribution(&map_from(&[(3.0, 9), (3.0, 9), (3.0, 9)]), 4, 5).unwrap();
        assert_eq!(d.mean, 3.0);
        assert_eq!(d.std_dev, 0.0);
        assert_eq!(d.counts.iter().sum::<u64>(), 3);

        let d = roi_distribution(&map_from(&[(0.0, 0), (0.0, 0), (10.0, 8)]), 5, 0).unwrap();
        assert!((d.mean - 10.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.counts, vec![2, 0, 0, 0, 1]);

        assert!(matches!(roi_distribution(&map_from(&[(1.0, 1)]), 5, 5), Err(Error::EmptyMap)));
    }

    #[test]
    fn distribution_matches_recomputation() {
        let (scene, session, _) = synthetic::three_cube_sweep();
        let r = compute_roi(&session, &[scene], &RoiOptions { edge: 1.0, tau0: 1.0, adaptive_threshold: false, ..Default::default() }).unwrap();
        let fa: Vec<f64> = r.map.entries.values().filter(|e| e.hits >= 1).map(|e| e.f_a).collect();
        let d = roi_distribution(&r.map, 3, 1).unwrap();
        let mean = fa.iter().sum::<f64>() / fa.len() as f64;
        let sd = (fa.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / fa.len() as f64).sqrt();
        assert_eq!(d.mean, mean);
        assert_eq!(d.std_dev, sd);
        assert_eq!(d.cubes, fa.len());
    }

    #[test]
    fn per_sample_distance_mode() {
        let (scene, session, gaze) = synthetic::three_cube_sweep();
        let g = build_grid(&scene, 1.0).unwrap();
        let h = count_hits(&session, &gaze, &g, &all_cubes(&g), 30.0).unwrap();
        let m = roi_levels(&h, &g, DistanceMode::PerSample).unwrap();
        for (c, e) in &m.entries {
            let center = g.center(*c);
            let mut inv = 0.0;
            for (s, r) in session.samples.iter().zip(&gaze) {
                if angle_between(center - r.origin, r.direction).to_degrees() <= 30.0 {
                    inv += 1.0 / center.distance(s.headset.position);
                }
            }
            let expected = e.density * inv / session.len() as f64;
            assert!((e.f_a - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
        }
    }

    #[test]
    fn frame_aligned_density_follows_viewed_frame() {
        // frame 0 has 1 point in the cube, frame 1 has 3
        let p = Vec3::new(3.5, 0.5, 1.5);
        let frames = vec![vec![p], vec![p, p, p]];
        let positions: Vec<Vec3> = (0..4).map(|_| Vec3::new(0.0, 0.5, 1.5)).collect();
        let (mut session, _) = synthetic::session_looking_at(&positions, |_| p);
        for (i, s) in session.samples.iter_mut().enumerate() {
            s.frame = i as u64 % 2;
        }
        let r = compute_roi(&session, &frames, &RoiOptions { edge: 1.0, tau0: 1.0, adaptive_threshold: false, ..Default::default() }).unwrap();
        let e = r.map.entries.values().next().unwrap();
        assert_eq!(e.density, 2.0); // mean of 1 and 3 points per m³
    }

    proptest! {
        #[test]
        fn conservation_any_edge(n in 1usize..300, edge in 0.05f64..2.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..3.0)))
                .collect();
            let g = build_grid(&pts, edge).unwrap();
            prop_assert_eq!(g.total_points(), n as u64);
            for (c, s) in &g.cubes {
                prop_assert!(c.i < g.dims[0] && c.j < g.dims[1] && c.k < g.dims[2]);
                prop_assert_eq!(s.density, s.point_count as f64 / (edge * edge * edge));
            }
        }

        #[test]
        fn hits_are_order_invariant_and_frequencies_bounded(seed in 0u64..500, split in 1usize..9) {
            let (scene, session, gaze) = synthetic::random_viewing(seed, 10);
            let g = build_grid(&scene, 0.5).unwrap();
            let cubes = all_cubes(&g);
            let h = count_hits(&session, &gaze, &g, &cubes, 30.0).unwrap();
            let m = roi_levels(&h, &g, DistanceMode::MeanHit).unwrap();
            for e in m.entries.values() {
                prop_assert!((0.0..=1.0).contains(&e.f_g));
                if e.hits == 0 { prop_assert_eq!(e.f_a, 0.0); }
                else { prop_assert!(e.mean_distance.unwrap() > 0.0); }
            }
            // reversed sample order: identical counts
            let mut rs = session.clone();
            rs.samples.reverse();
            let rg: Vec<GlobalGaze> = gaze.iter().rev().copied().collect();
            let hr = count_hits(&rs, &rg, &g, &cubes, 30.0).unwrap();
            for (c, s) in &h.per_cube {
                prop_assert_eq!(s.hits, hr.per_cube[c].hits);
                let a = s.mean_distance().unwrap_or(0.0);
                let b = hr.per_cube[c].mean_distance().unwrap_or(0.0);
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
            // union of disjoint subsets: sample-weighted mean of frequencies
            let (s1, s2) = (
                Session { samples: session.samples[..split].to_vec(), ..session.clone() },
                Session { samples: session.samples[split..].to_vec(), ..session.clone() },
            );
            let h1 = count_hits(&s1, &gaze[..split], &g, &cubes, 30.0).unwrap();
            let h2 = count_hits(&s2, &gaze[split..], &g, &cubes, 30.0).unwrap();
            let m1 = roi_levels(&h1, &g, DistanceMode::MeanHit).unwrap();
            let m2 = roi_levels(&h2, &g, DistanceMode::MeanHit).unwrap();
            for (c, e) in &m.entries {
                let w = (split as f64 * m1.entries[c].f_g + (10 - split) as f64 * m2.entries[c].f_g) / 10.0;
                prop_assert!((e.f_g - w).abs() < 1e-15);
            }
        }

        #[test]
        fn doubling_cloud_doubles_levels(seed in 0u64..300) {
            let (scene, session, gaze) = synthetic::random_viewing(seed, 8);
            let doubled: Vec<Vec3> = scene.iter().chain(scene.iter()).copied().collect();
            let g1 = build_grid(&scene, 0.5).unwrap();
            let g2 = build_grid(&doubled, 0.5).unwrap();
            let cubes = all_cubes(&g1);
            let m1 = roi_levels(&count_hits(&session, &gaze, &g1, &cubes, 30.0).unwrap(), &g1, DistanceMode::MeanHit).unwrap();
            let m2 = roi_levels(&count_hits(&session, &gaze, &g2, &cubes, 30.0).unwrap(), &g2, DistanceMode::MeanHit).unwrap();
            for (c, e) in &m1.entries {
                let d = m2.entries[c];
                prop_assert_eq!(d.density, 2.0 * e.density);
                prop_assert_eq!(d.f_g, e.f_g);
                prop_assert_eq!(d.f_a, 2.0 * e.f_a);
            }
        }

        #[test]
        fn level_monotone_in_inputs(rho in 0.1f64..100.0, hits in 1u64..50, extra in 1u64..50, d in 0.2f64..10.0) {
            let g = build_grid(&[Vec3::new(0.1, 0.1, 0.1)], 1.0).unwrap();
            let c = CubeIndex::new(0, 0, 0);
            let mk = |h: u64, dist: f64, density_scale: f64| {
                let mut gg = g.clone();
                gg.cubes.get_mut(&c).unwrap().density = rho * density_scale;
                let mut counts = HitCounts { per_cube: BTreeMap::new(), n_samples: 100, per_frame_density: false };
                counts.per_cube.insert(c, HitStats { hits: h, distance_sum: dist * h as f64, inv_distance_sum: 0.0, density_sum: 0.0 });
                roi_levels(&counts, &gg, DistanceMode::MeanHit).unwrap().entries[&c].f_a
            };
            let base = mk(hits, d, 1.0);
            prop_assert!(mk(hits + extra, d, 1.0) > base);
            prop_assert!(mk(hits, d * 1.5, 1.0) < base);
            prop_assert!(mk(hits, d, 1.5) > base);
        }
    }
}
