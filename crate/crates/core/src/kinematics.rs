//! Movement and rotation analytics over a session's headset track.
//!
//! Body-relative axes follow the viewer: lateral is the headset's right-hand
//! direction, "vertical to the body" is its horizontal forward direction and
//! up-down is the world vertical. Each step is decomposed in the heading
//! (yaw-only frame) of the step's starting sample.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{
    euler_to_matrix, euler_to_matrix_with, forward_vector, EulerAngles, EulerOrder, GlobalGaze,
    RIGHT,
};
use crate::trace::Session;

pub const DEFAULT_CELL_M: f64 = 0.1;
pub const CAPTURE_AREA_M: f64 = 5.0;
/// Allowed deviation of any step from the mean step, as a fraction of it.
pub const MAX_RATE_JITTER: f64 = 0.1;

/// Cumulative path lengths per body axis; index `k` covers samples `0..=k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MovementSeries {
    pub timestamps: Vec<f64>,
    pub lateral: Vec<f64>,
    pub forward: Vec<f64>,
    pub up_down: Vec<f64>,
    pub total: Vec<f64>,
}

impl MovementSeries {
    pub fn final_totals(&self) -> [f64; 4] {
        let last = |v: &Vec<f64>| v.last().copied().unwrap_or(0.0);
        [last(&self.lateral), last(&self.forward), last(&self.up_down), last(&self.total)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,lateral,forward,up_down,total\n");
        for k in 0..self.timestamps.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.timestamps[k], self.lateral[k], self.forward[k], self.up_down[k], self.total[k]
            );
        }
        out
    }
}

fn heading_axes(yaw: f64) -> (crate::Vec3, crate::Vec3) {
    let r = euler_to_matrix(EulerAngles::new(yaw, 0.0, 0.0));
    (forward_vector(&r), r.apply(RIGHT))
}

pub fn axis_distances(s: &Session) -> Result<MovementSeries> {
    if s.samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: s.samples.len() });
    }
    let mut out = MovementSeries::default();
    let (mut lat, mut fwd, mut up, mut tot) = (0.0, 0.0, 0.0, 0.0);
    out.timestamps.push(s.samples[0].timestamp);
    for series in [&mut out.lateral, &mut out.forward, &mut out.up_down, &mut out.total] {
        series.push(0.0);
    }
    for w in s.samples.windows(2) {
        let d = w[1].headset.position - w[0].headset.position;
        let (f, r) = heading_axes(w[0].headset.orientation.yaw);
        lat += d.dot(r).abs();
        fwd += d.dot(f).abs();
        up += d.z.abs();
        tot += d.norm();
        out.timestamps.push(w[1].timestamp);
        out.lateral.push(lat);
        out.forward.push(fwd);
        out.up_down.push(up);
        out.total.push(tot);
    }
    Ok(out)
}

/// Path length of the headset position in meters.
pub fn total_distance(s: &Session) -> Result<f64> {
    if s.samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: s.samples.len() });
    }
    Ok(s.samples
        .windows(2)
        .map(|w| (w[1].headset.position - w[0].headset.position).norm())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RotationSeries {
    /// Step midpoints and geodesic angular speed in °/s.
    pub velocity_t: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Interior sample times and |Δ angular speed| / Δt in °/s².
    pub acceleration_t: Vec<f64>,
    pub acceleration: Vec<f64>,
}

impl RotationSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,timestamp,value\n");
        for (t, v) in self.velocity_t.iter().zip(&self.velocity) {
            let _ = writeln!(out, "velocity_deg_s,{t},{v}");
        }
        for (t, v) in self.acceleration_t.iter().zip(&self.acceleration) {
            let _ = writeln!(out, "acceleration_deg_s2,{t},{v}");
        }
        out
    }
}

/// Checks that every step is within [`MAX_RATE_JITTER`] of the mean step.
pub fn check_uniform_rate(s: &Session) -> Result<f64> {
    let n = s.samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = s.duration() / (n - 1) as f64;
    let jitter = s
        .samples
        .windows(2)
        .map(|w| ((w[1].timestamp - w[0].timestamp) - mean).abs())
        .fold(0.0, f64::max);
    let limit = MAX_RATE_JITTER * mean;
    if jitter > limit || mean <= 0.0 {
        return Err(Error::NonUniformRate { jitter, limit });
    }
    Ok(mean)
}

pub fn rotational_acceleration(s: &Session) -> Result<RotationSeries> {
    rotational_acceleration_with(s, EulerOrder::default())
}

/// Angular speed from the geodesic angle between successive orientations,
/// and acceleration from successive speed differences.
pub fn rotational_acceleration_with(s: &Session, order: EulerOrder) -> Result<RotationSeries> {
    if s.samples.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: s.samples.len() });
    }
    check_uniform_rate(s)?;
    let mats: Vec<_> = s
        .samples
        .iter()
        .map(|x| euler_to_matrix_with(x.headset.orientation, order))
        .collect();
    let mut out = RotationSeries::default();
    for k in 0..mats.len() - 1 {
        let (t0, t1) = (s.samples[k].timestamp, s.samples[k + 1].timestamp);
        let angle = mats[k].geodesic_angle(&mats[k + 1]).to_degrees();
        out.velocity_t.push(0.5 * (t0 + t1));
        out.velocity.push(angle / (t1 - t0));
    }
    for k in 0..out.velocity.len() - 1 {
        let dt = out.velocity_t[k + 1] - out.velocity_t[k];
        out.acceleration_t.push(s.samples[k + 1].timestamp);
        out.acceleration.push((out.velocity[k + 1] - out.velocity[k]).abs() / dt);
    }
    Ok(out)
}

/// Empirical CDF: distinct sorted values with the fraction of samples ≤ value.
pub fn cdf(series: &[f64]) -> Result<Vec<(f64, f64)>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut v = series.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        if i + 1 < n && v[i + 1] == *x {
            continue;
        }
        let frac = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        out.push((*x, frac));
    }
    Ok(out)
}

pub fn cdf_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("value,fraction\n");
    for (v, f) in points {
        let _ = writeln!(out, "{v},{f}");
    }
    out
}

/// Floor-plane grid: cell `(ix, iy)` spans
/// `[x0 + ix·cell, x0 + (ix+1)·cell) × [y0 + iy·cell, y0 + (iy+1)·cell)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorGrid {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl FloorGrid {
    /// The 5×5 m capture area centred on the origin.
    pub fn capture_area(cell: f64) -> Self {
        let n = (CAPTURE_AREA_M / cell).round().max(1.0) as usize;
        Self { x0: -CAPTURE_AREA_M / 2.0, y0: -CAPTURE_AREA_M / 2.0, cell, nx: n, ny: n }
    }

    /// Smallest cell-aligned grid covering every headset position of `s`.
    pub fn covering(s: &Session, cell: f64) -> Self {
        let (mut lx, mut ly, mut hx, mut hy) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for x in &s.samples {
            let p = x.headset.position;
            lx = lx.min(p.x);
            ly = ly.min(p.y);
            hx = hx.max(p.x);
            hy = hy.max(p.y);
        }
        if !lx.is_finite() {
            return Self { x0: 0.0, y0: 0.0, cell, nx: 1, ny: 1 };
        }
        let x0 = (lx / cell).floor() * cell;
        let y0 = (ly / cell).floor() * cell;
        let nx = ((hx - x0) / cell).floor() as usize + 1;
        let ny = ((hy - y0) / cell).floor() as usize + 1;
        Self { x0, y0, cell, nx, ny }
    }

    /// Cell of a floor point, clamped into the grid; the flag is true when clamping occurred.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize, bool) {
        let fx = ((x - self.x0) / self.cell).floor();
        let fy = ((y - self.y0) / self.cell).floor();
        let cx = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        (cx, cy, fx != cx as f64 || fy != cy as f64)
    }

    pub fn cell_bounds(&self, ix: usize, iy: usize) -> (f64, f64, f64, f64) {
        let x = self.x0 + ix as f64 * self.cell;
        let y = self.y0 + iy as f64 * self.cell;
        (x, y, x + self.cell, y + self.cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellHeatmap {
    pub grid: FloorGrid,
    /// Seconds per cell, row-major with row index = `iy`.
    pub dwell: Vec<f64>,
    /// Sample intervals whose position fell outside the grid and were clamped.
    pub clamped: usize,
}

impl DwellHeatmap {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.dwell[iy * self.grid.nx + ix]
    }

    pub fn total(&self) -> f64 {
        self.dwell.iter().sum()
    }

    /// CSV matrix, first row = max-y edge.
    pub fn to_csv(&self) -> String {
        matrix_csv(self.grid, |ix, iy| format!("{}", self.at(ix, iy)))
    }

    /// 8-bit binary PGM scaled to the maximum cell, first row = max-y edge.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.dwell.iter().copied().fold(0.0, f64::max);
        pgm(self.grid, |ix, iy| {
            if max > 0.0 { (255.0 * self.at(ix, iy) / max).round() as u8 } else { 0 }
        })
    }
}

fn matrix_csv(g: FloorGrid, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::new();
    for iy in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx).map(|ix| cell(ix, iy)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn pgm(g: FloorGrid, value: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    for iy in (0..g.ny).rev() {
        for ix in 0..g.nx {
            out.push(value(ix, iy));
        }
    }
    out
}

/// Dwell time on a grid fitted to the trajectory.
pub fn dwell_heatmap(s: &Session, cell: f64) -> Result<DwellHeatmap> {
    check_cell(cell)?;
    dwell_heatmap_in(s, FloorGrid::covering(s, cell))
}

/// Credits each sample interval to the cell under the interval's starting position.
pub fn dwell_heatmap_in(s: &Session, grid: FloorGrid) -> Result<DwellHeatmap> {
    check_cell(grid.cell)?;
    let mut dwell = vec![0.0; grid.nx * grid.ny];
    let mut clamped = 0;
    for w in s.samples.windows(2) {
        let p = w[0].headset.position;
        let (ix, iy, c) = grid.cell_of(p.x, p.y);
        clamped += c as usize;
        dwell[iy * grid.nx + ix] += w[1].timestamp - w[0].timestamp;
    }
    Ok(DwellHeatmap { grid, dwell, clamped })
}

fn check_cell(cell: f64) -> Result<()> {
    if cell > 0.0 && cell.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("cell size must be positive, got {cell}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionMask {
    pub grid: FloorGrid,
    pub visited: Vec<bool>,
    pub gazed: Vec<bool>,
}

impl IntersectionMask {
    pub fn at(&self, ix: usize, iy: usize) -> bool {
        let i = iy * self.grid.nx + ix;
        self.visited[i] && self.gazed[i]
    }

    pub fn count(&self) -> usize {
        (0..self.visited.len()).filter(|&i| self.visited[i] && self.gazed[i]).count()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(self.grid, |ix, iy| if self.at(ix, iy) { "1".into() } else { "0".into() })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        pgm(self.grid, |ix, iy| if self.at(ix, iy) { 255 } else { 0 })
    }
}

/// Floor-plane trace of a downward gaze ray: from below the eye to where the
/// ray meets the floor. Rays that never descend to the floor leave no trace.
pub fn gaze_floor_segment(g: &GlobalGaze, floor_z: f64) -> Option<((f64, f64), (f64, f64))> {
    let h = g.origin.z - floor_z;
    if g.direction.z >= 0.0 || h < 0.0 {
        return None;
    }
    let t = h / -g.direction.z;
    let hit = g.origin + g.direction * t;
    Some(((g.origin.x, g.origin.y), (hit.x, hit.y)))
}

/// Slab test: does the segment touch the axis-aligned rectangle?
fn segment_hits_rect(a: (f64, f64), b: (f64, f64), rect: (f64, f64, f64, f64)) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = (b.0 - a.0, b.1 - a.1);
    for (p, dp, lo, hi) in [(a.0, d.0, rect.0, rect.2), (a.1, d.1, rect.1, rect.3)] {
        if dp == 0.0 {
            if p < lo || p > hi {
                return false;
            }
        } else {
            let (mut e0, mut e1) = ((lo - p) / dp, (hi - p) / dp);
            if e0 > e1 {
                std::mem::swap(&mut e0, &mut e1);
            }
            t0 = t0.max(e0);
            t1 = t1.min(e1);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Marks floor cells that are both visited by the headset and crossed (within
/// `tolerance`) by the floor trace of at least one gaze ray.
pub fn gaze_trajectory_intersection(
    s: &Session,
    gaze: &[GlobalGaze],
    cell: f64,
    tolerance: f64,
    floor_z: f64,
) -> Result<IntersectionMask> {
    if gaze.len() != s.samples.len() {
        return Err(Error::MisalignedInputs(format!(
            "{} gaze rays for {} samples",
            gaze.len(),
            s.samples.len()
        )));
    }
    check_cell(cell)?;
    let grid = FloorGrid::covering(s, cell);
    let n = grid.nx * grid.ny;
    let mut visited = vec![false; n];
    for x in &s.samples {
        let (ix, iy, _) = grid.cell_of(x.headset.position.x, x.headset.position.y);
        visited[iy * grid.nx + ix] = true;
    }
    let mut gazed = vec![false; n];
    for g in gaze {
        let Some((a, b)) = gaze_floor_segment(g, floor_z) else { continue };
        let span = |lo: f64, hi: f64, o: f64, cnt: usize| {
            let l = (((lo - tolerance - o) / cell).floor().max(0.0)) as usize;
            let h = (((hi + tolerance - o) / cell).floor()).min(cnt as f64 - 1.0);
            if h < 0.0 { (1, 0) } else { (l, h as usize) }
        };
        let (xl, xh) = span(a.0.min(b.0), a.0.max(b.0), grid.x0, grid.nx);
        let (yl, yh) = span(a.1.min(b.1), a.1.max(b.1), grid.y0, grid.ny);
        for iy in yl..=yh.min(grid.ny - 1) {
            for ix in xl..=xh.min(grid.nx - 1) {
                let i = iy * grid.nx + ix;
                if gazed[i] || !visited[i] {
                    continue;
                }
                let (x0, y0, x1, y1) = grid.cell_bounds(ix, iy);
                let r = (x0 - tolerance, y0 - tolerance, x1 + tolerance, y1 + tolerance);
                if segment_hits_rect(a, b, r) {
                    gazed[i] = true;
                }
            }
        }
    }
    Ok(IntersectionMask { grid, visited, gazed })
}

/// Default intersection tolerance: one cell diagonal.
pub fn default_tolerance(cell: f64) -> f64 {
    cell * std::f64::consts::SQRT_2
}
