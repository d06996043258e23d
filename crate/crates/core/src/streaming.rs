//! Cube-based streaming simulation driven by viewport prediction.
//!
//! Every frame, the cubes whose centres fall in the predicted gaze cone are
//! considered visible and receive bits in descending ROI order; what the
//! viewer actually looked at (the same cone on recorded gaze) scores the plan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{in_frustum, EulerOrder, GlobalGaze, Vec3};
use crate::predictor::baselines::fit_line;
use crate::predictor::dataset::{state_of, subsample_points, Window};
use crate::predictor::{Predictor, ViewportState};
use crate::roi::{CubeIndex, RoiMap};
use crate::trace::Session;

/// Bits per point per frame for levels `1..=L`; level 0 sends nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLadder {
    pub bits_per_point: Vec<f64>,
}

impl Default for QualityLadder {
    fn default() -> Self {
        Self { bits_per_point: vec![2.0, 4.0, 8.0, 16.0] }
    }
}

impl QualityLadder {
    pub fn new(bits_per_point: Vec<f64>) -> Result<Self> {
        let l = Self { bits_per_point };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for &b in &self.bits_per_point {
            if !(b > prev) || !b.is_finite() {
                return Err(Error::InvalidConfig("ladder costs must be finite and strictly increasing above 0".into()));
            }
            prev = b;
        }
        if self.bits_per_point.is_empty() {
            return Err(Error::InvalidConfig("ladder needs at least one level".into()));
        }
        Ok(())
    }

    pub fn top(&self) -> usize {
        self.bits_per_point.len()
    }

    pub fn cost(&self, level: usize, points: u64) -> f64 {
        if level == 0 { 0.0 } else { self.bits_per_point[level - 1] * points as f64 }
    }
}

/// Effective cubes whose centres lie inside the cone of each frame's ray.
pub fn cull(
    rays: &[GlobalGaze],
    roi: &RoiMap,
    half_angle_deg: f64,
    expected_frames: usize,
) -> Result<Vec<BTreeSet<CubeIndex>>> {
    if rays.len() != expected_frames {
        return Err(Error::FrameMismatch { predicted: rays.len(), expected: expected_frames });
    }
    rays.iter().map(|r| visible_cubes(r, roi, half_angle_deg)).collect()
}

pub fn visible_cubes(ray: &GlobalGaze, roi: &RoiMap, half_angle_deg: f64) -> Result<BTreeSet<CubeIndex>> {
    let mut out = BTreeSet::new();
    for (c, e) in &roi.entries {
        match in_frustum(ray, e.center, half_angle_deg) {
            Ok(true) => {
                out.insert(*c);
            }
            Ok(false) | Err(Error::DegeneratePoint) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Level of every cube that is sent; absent cubes are at level 0.
    pub levels: BTreeMap<CubeIndex, usize>,
    pub bits: f64,
    pub budget: f64,
}

impl AllocationPlan {
    pub fn level(&self, c: &CubeIndex) -> usize {
        self.levels.get(c).copied().unwrap_or(0)
    }
}

/// Visible cubes in descending `F_a`, ties by ascending index.
pub fn priority_order(visible: &BTreeSet<CubeIndex>, roi: &RoiMap) -> Vec<CubeIndex> {
    let mut v: Vec<CubeIndex> = visible.iter().copied().collect();
    let fa = |c: &CubeIndex| roi.entries.get(c).map_or(0.0, |e| e.f_a);
    v.sort_by(|a, b| fa(b).total_cmp(&fa(a)).then(a.cmp(b)));
    v
}

/// Raises visible cubes one level at a time in priority order, taking each
/// cube to the top before moving on, and stops at the first upgrade the
/// budget cannot cover. Plans for larger budgets extend plans for smaller ones.
pub fn allocate(visible: &BTreeSet<CubeIndex>, roi: &RoiMap, ladder: &QualityLadder, budget: f64) -> AllocationPlan {
    let mut levels = BTreeMap::new();
    let mut bits = 0.0;
    'cubes: for c in priority_order(visible, roi) {
        let points = roi.entries.get(&c).map_or(0, |e| e.point_count);
        for level in 1..=ladder.top() {
            let step = ladder.cost(level, points) - ladder.cost(level - 1, points);
            if bits + step > budget {
                break 'cubes;
            }
            bits += step;
            levels.insert(c, level);
        }
    }
    AllocationPlan { levels, bits, budget }
}

/// Produces one predicted ray per frame for a block of frames.
pub trait RayPredictor: Sync {
    fn name(&self) -> String;

    /// `start` is the first frame of the block; implementations may only look at
    /// samples before `start` (sample 0 when `start == 0`), except the oracle.
    fn predict_block(&self, session: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>>;
}

fn history_end(start: usize) -> usize {
    start.max(1)
}

/// Looks at the recorded gaze of the frames being predicted.
pub struct OraclePredictor;

impl RayPredictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_block(&self, _: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>> {
        Ok(gaze[start..start + len].to_vec())
    }
}

/// Recorded gaze delayed by a fixed number of frames (clamped at frame 0).
pub struct LaggedOracle {
    pub lag: usize,
}

impl RayPredictor for LaggedOracle {
    fn name(&self) -> String {
        format!("lagged_oracle_{}", self.lag)
    }

    fn predict_block(&self, _: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>> {
        Ok((start..start + len).map(|f| gaze[f.saturating_sub(self.lag)]).collect())
    }
}

/// Repeats the last gaze ray observed before the block.
pub struct PersistencePredictor;

impl RayPredictor for PersistencePredictor {
    fn name(&self) -> String {
        "persistence".into()
    }

    fn predict_block(&self, _: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>> {
        Ok(vec![gaze[history_end(start) - 1]; len])
    }
}

/// Per-component linear extrapolation of the last `window` gaze rays.
pub struct LinearRegressionPredictor {
    pub window: usize,
}

impl RayPredictor for LinearRegressionPredictor {
    fn name(&self) -> String {
        "linear_regression".into()
    }

    fn predict_block(&self, _: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>> {
        let end = history_end(start);
        let hist = &gaze[end.saturating_sub(self.window.max(1))..end];
        if hist.len() < 2 {
            return Ok(vec![hist[hist.len() - 1]; len]);
        }
        let comps: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let ys: Vec<f64> = hist
                    .iter()
                    .map(|g| if k < 3 { g.origin.get(k) } else { g.direction.get(k - 3) })
                    .collect();
                fit_line(&ys)
            })
            .collect();
        let last = hist[hist.len() - 1];
        Ok((0..len)
            .map(|j| {
                let x = (hist.len() + start - end + j) as f64;
                let v = |k: usize| comps[k].0 + comps[k].1 * x;
                let origin = Vec3::new(v(0), v(1), v(2));
                GlobalGaze::new(origin, Vec3::new(v(3), v(4), v(5))).unwrap_or(last)
            })
            .collect())
    }
}

/// Trained viewport predictor; its forecast headset forward rays stand in
/// for gaze. Needs `history_len` samples before the block, otherwise the
/// block falls back to persistence.
pub struct ModelPredictor<'a> {
    pub model: &'a Predictor,
    pub frames: &'a [Vec<Vec3>],
}

impl RayPredictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        format!("model_{}", self.model.cfg.ablation.name())
    }

    fn predict_block(&self, s: &Session, gaze: &[GlobalGaze], start: usize, len: usize) -> Result<Vec<GlobalGaze>> {
        let cfg = &self.model.cfg;
        let n = cfg.history_len;
        if start < n || self.frames.is_empty() {
            return PersistencePredictor.predict_block(s, gaze, start, len);
        }
        let hist = &s.samples[start - n..start];
        let frame = hist[n - 1].frame as usize % self.frames.len();
        let w = Window {
            user_id: s.user_id.clone(),
            video_id: s.video_id.clone(),
            history: hist.iter().map(state_of).collect(),
            gaze: gaze[start - n..start].to_vec(),
            scene: subsample_points(&self.frames[frame], cfg.scene_points),
            target: Vec::new(),
        };
        let pred = self.model.predict(&w)?;
        let order = EulerOrder::default();
        let ray = |st: &ViewportState| GlobalGaze { origin: st.position, direction: st.forward(order) };
        Ok((0..len).map(|j| ray(&pred.states[j.min(pred.states.len() - 1)])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub half_angle_deg: f64,
    /// Bits available per frame.
    pub budget: f64,
    /// Frames covered by one prediction.
    pub horizon: usize,
    /// Frames between prediction refreshes; 0 means once per horizon, 1 slides every frame.
    pub refresh: usize,
    pub keep_trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { half_angle_deg: 30.0, budget: f64::INFINITY, horizon: 30, refresh: 0, keep_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub predicted_visible: usize,
    pub viewed: usize,
    pub sent: usize,
    pub viewed_and_sent: usize,
    pub bits: f64,
    pub viewed_quality_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub predictor: String,
    pub frames: usize,
    pub budget_bits_per_frame: f64,
    pub bits_used: f64,
    /// Bits for sending every effective cube at the top level on every frame.
    pub bits_full: f64,
    pub bandwidth_saved: f64,
    /// Fraction of viewed cubes that were sent at any level.
    pub recall: f64,
    /// Mean level of viewed cubes divided by the top level; unsent cubes count 0.
    pub mean_quality: f64,
    pub trace: Vec<FrameRecord>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_csv(reports: &[SimReport]) -> String {
        let mut out = String::from("predictor,budget,frames,bits_used,bits_full,bandwidth_saved,recall,mean_quality\n");
        for r in reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.predictor, r.budget_bits_per_frame, r.frames, r.bits_used, r.bits_full, r.bandwidth_saved, r.recall, r.mean_quality
            );
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("frame,predicted_visible,viewed,sent,viewed_and_sent,bits,viewed_quality_sum\n");
        for f in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.frame, f.predicted_visible, f.viewed, f.sent, f.viewed_and_sent, f.bits, f.viewed_quality_sum
            );
        }
        out
    }
}

/// Predict → cull → allocate → score, frame by frame.
pub fn simulate(
    session: &Session,
    gaze: &[GlobalGaze],
    predictor: &dyn RayPredictor,
    roi: &RoiMap,
    ladder: &QualityLadder,
    opts: &SimOptions,
) -> Result<SimReport> {
    ladder.validate()?;
    if roi.entries.is_empty() {
        return Err(Error::EmptyMap);
    }
    let frames = session.samples.len();
    if frames == 0 {
        return Err(Error::EmptySession);
    }
    if gaze.len() != frames {
        return Err(Error::MisalignedInputs(format!("{} gaze rays for {frames} samples", gaze.len())));
    }
    if !(opts.budget >= 0.0) {
        return Err(Error::InvalidConfig("budget must be non-negative".into()));
    }
    let h = opts.horizon.max(1);
    let step = if opts.refresh == 0 { h } else { opts.refresh.min(h) };
    let mut predicted = Vec::with_capacity(frames);
    for start in (0..frames).step_by(step) {
        let len = h.min(frames - start);
        let block = predictor.predict_block(session, gaze, start, len)?;
        if block.len() != len {
            return Err(Error::FrameMismatch { predicted: block.len(), expected: len });
        }
        predicted.extend_from_slice(&block[..step.min(len)]);
    }
    let visible = cull(&predicted, roi, opts.half_angle_deg, frames)?;
    let viewed = cull(gaze, roi, opts.half_angle_deg, frames)?;
    let top = ladder.top() as f64;
    let records: Vec<FrameRecord> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let plan = allocate(&visible[f], roi, ladder, opts.budget);
            let hit = viewed[f].iter().filter(|c| plan.level(c) > 0).count();
            let quality: f64 = viewed[f].iter().map(|c| plan.level(c) as f64 / top).sum();
            FrameRecord {
                frame: f,
                predicted_visible: visible[f].len(),
                viewed: viewed[f].len(),
                sent: plan.levels.len(),
                viewed_and_sent: hit,
                bits: plan.bits,
                viewed_quality_sum: quality,
            }
        })
        .collect();
    let full_frame: f64 = roi.entries.values().map(|e| ladder.cost(ladder.top(), e.point_count)).sum();
    let bits_full = full_frame * frames as f64;
    let bits_used: f64 = records.iter().map(|r| r.bits).sum();
    let viewed_total: usize = records.iter().map(|r| r.viewed).sum();
    let hits: usize = records.iter().map(|r| r.viewed_and_sent).sum();
    let quality: f64 = records.iter().map(|r| r.viewed_quality_sum).sum();
    let (recall, mean_quality) = if viewed_total == 0 {
        (1.0, 1.0)
    } else {
        (hits as f64 / viewed_total as f64, quality / viewed_total as f64)
    };
    let bandwidth_saved = if bits_full > 0.0 { 1.0 - bits_used / bits_full } else { 0.0 };
    debug_assert!(bits_used <= bits_full + 1e-6 * bits_full.max(1.0));
    Ok(SimReport {
        predictor: predictor.name(),
        frames,
        budget_bits_per_frame: opts.budget,
        bits_used,
        bits_full,
        bandwidth_saved,
        recall,
        mean_quality,
        trace: if opts.keep_trace { records } else { Vec::new() },
    })
}
