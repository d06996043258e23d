//! Trace data model: parsing, validation, axis mapping and resampling.
//!
//! A trace file is UTF-8 CSV with a mandatory header and one row per sample.
//! The 28 columns are, in canonical order:
//!
//! ```text
//! frame, timestamp,
//! hmd_x, hmd_y, hmd_z, hmd_yaw, hmd_pitch, hmd_roll,
//! lctl_x, lctl_y, lctl_z, lctl_yaw, lctl_pitch, lctl_roll,
//! rctl_x, rctl_y, rctl_z, rctl_yaw, rctl_pitch, rctl_roll,
//! leye_yaw, leye_pitch, leye_roll, leye_conf,
//! reye_yaw, reye_pitch, reye_roll, reye_conf
//! ```
//!
//! The column order is a toolkit convention. Columns are resolved by header
//! name, so files with a different order (or renamed columns, via
//! [`TraceSchema`]) parse as long as every name is present exactly once.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    combine_eyes, euler_to_matrix_with, forward_vector, EulerAngles, EulerOrder,
    GlobalGaze, Vec3,
};

/// Nominal capture rate of the headset eye tracker.
pub const NOMINAL_RATE_HZ: f64 = 144.0;
pub const FIELD_COUNT: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: EulerAngles,
}

impl Pose {
    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }
}

/// Eye-in-head rotation plus tracker confidence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EyeSample {
    pub direction: EulerAngles,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSample {
    pub frame: u64,
    pub timestamp: f64,
    pub headset: Pose,
    pub controller_left: Pose,
    pub controller_right: Pose,
    pub eye_left: EyeSample,
    pub eye_right: EyeSample,
}

impl TraceSample {
    fn to_fields(&self) -> [f64; FIELD_COUNT - 1] {
        let mut out = [0.0; FIELD_COUNT - 1];
        out[0] = self.timestamp;
        let mut i = 1;
        for pose in [&self.headset, &self.controller_left, &self.controller_right] {
            let p = pose.position;
            let o = pose.orientation;
            out[i..i + 6].copy_from_slice(&[p.x, p.y, p.z, o.yaw, o.pitch, o.roll]);
            i += 6;
        }
        for eye in [&self.eye_left, &self.eye_right] {
            let d = eye.direction;
            out[i..i + 4].copy_from_slice(&[d.yaw, d.pitch, d.roll, eye.confidence]);
            i += 4;
        }
        out
    }

    fn from_fields(frame: u64, f: &[f64; FIELD_COUNT - 1]) -> Self {
        let pose = |i: usize| Pose {
            position: Vec3::new(f[i], f[i + 1], f[i + 2]),
            orientation: EulerAngles::new(f[i + 3], f[i + 4], f[i + 5]),
        };
        let eye = |i: usize| EyeSample {
            direction: EulerAngles::new(f[i], f[i + 1], f[i + 2]),
            confidence: f[i + 3],
        };
        TraceSample {
            frame,
            timestamp: f[0],
            headset: pose(1),
            controller_left: pose(7),
            controller_right: pose(13),
            eye_left: eye(19),
            eye_right: eye(23),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.headset.is_finite()
            && self.controller_left.is_finite()
            && self.controller_right.is_finite()
            && self.eye_left.direction.is_finite()
            && self.eye_right.direction.is_finite()
            && self.eye_left.confidence.is_finite()
            && self.eye_right.confidence.is_finite()
    }

    /// World-frame viewing ray from the confidence-weighted binocular gaze.
    /// Falls back to headset-forward when neither eye is usable; the flag
    /// reports whether the fallback was taken.
    pub fn global_gaze(&self, order: EulerOrder) -> (GlobalGaze, bool) {
        let rh = euler_to_matrix_with(self.headset.orientation, order);
        let eye_dir = |e: &EyeSample| forward_vector(&euler_to_matrix_with(e.direction, order));
        let local = combine_eyes(
            (eye_dir(&self.eye_left), self.eye_left.confidence),
            (eye_dir(&self.eye_right), self.eye_right.confidence),
        );
        let (dir, fallback) = match local {
            Ok(d) => (rh.apply(d), false),
            Err(_) => (forward_vector(&rh), true),
        };
        match GlobalGaze::new(self.headset.position, dir) {
            Some(g) => (g, fallback),
            None => (self.headset_ray(order), true),
        }
    }

    pub fn headset_ray(&self, order: EulerOrder) -> GlobalGaze {
        let f = forward_vector(&euler_to_matrix_with(self.headset.orientation, order));
        GlobalGaze { origin: self.headset.position, direction: f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub video_id: String,
    pub samples: Vec<TraceSample>,
    pub nominal_rate: f64,
}

impl Session {
    pub fn new(user_id: impl Into<String>, video_id: impl Into<String>, samples: Vec<TraceSample>) -> Self {
        Self {
            user_id: user_id.into(),
            video_id: video_id.into(),
            samples,
            nominal_rate: NOMINAL_RATE_HZ,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    pub fn gaze_rays(&self, order: EulerOrder) -> Vec<GlobalGaze> {
        self.samples.iter().map(|s| s.global_gaze(order).0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementClass {
    Static,
    Small,
    Middle,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub name: String,
    pub actor_count: u32,
    pub frame_count: u32,
    pub movement_class: MovementClass,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig(format!("video {:?} has zero frames", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeBracket {
    #[serde(rename = "under_20")]
    Under20,
    #[serde(rename = "20_25")]
    From20To25,
    #[serde(rename = "26_30")]
    From26To30,
    #[serde(rename = "over_30")]
    Over30,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceBracket {
    Never,
    Rarely,
    Sometimes,
    Often,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub gender: Gender,
    pub age_bracket: AgeBracket,
    pub vr_experience_bracket: ExperienceBracket,
    pub vv_experience_bracket: ExperienceBracket,
}

/// Per-dataset metadata file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    #[serde(default)]
    pub videos: Vec<VideoMeta>,
    #[serde(default)]
    pub users: Vec<UserProfile>,
}

impl DatasetMeta {
    pub fn from_json(text: &str) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(text)?;
        for v in &meta.videos {
            v.validate()?;
        }
        Ok(meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Header names for the 28 trace fields, in canonical field order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSchema {
    pub columns: Vec<String>,
}

pub const CANONICAL_COLUMNS: [&str; FIELD_COUNT] = [
    "frame", "timestamp",
    "hmd_x", "hmd_y", "hmd_z", "hmd_yaw", "hmd_pitch", "hmd_roll",
    "lctl_x", "lctl_y", "lctl_z", "lctl_yaw", "lctl_pitch", "lctl_roll",
    "rctl_x", "rctl_y", "rctl_z", "rctl_yaw", "rctl_pitch", "rctl_roll",
    "leye_yaw", "leye_pitch", "leye_roll", "leye_conf",
    "reye_yaw", "reye_pitch", "reye_roll", "reye_conf",
];

impl Default for TraceSchema {
    fn default() -> Self {
        Self { columns: CANONICAL_COLUMNS.iter().map(|s| s.to_string()).collect() }
    }
}

impl TraceSchema {
    /// Maps each canonical field to its position in `header`.
    fn resolve(&self, header: &csv::StringRecord) -> Result<Vec<usize>> {
        if self.columns.len() != FIELD_COUNT {
            return Err(Error::SchemaMismatch(format!(
                "schema declares {} columns, expected {FIELD_COUNT}",
                self.columns.len()
            )));
        }
        if header.len() != FIELD_COUNT {
            return Err(Error::SchemaMismatch(format!(
                "header has {} columns, expected {FIELD_COUNT}",
                header.len()
            )));
        }
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, h) in header.iter().enumerate() {
            if by_name.insert(h.trim(), i).is_some() {
                return Err(Error::SchemaMismatch(format!("duplicate column {h:?}")));
            }
        }
        self.columns
            .iter()
            .map(|c| {
                by_name
                    .get(c.as_str())
                    .copied()
                    .ok_or_else(|| Error::SchemaMismatch(format!("missing column {c:?}")))
            })
            .collect()
    }
}

/// Parses CSV trace text into a session. Sample order and timestamps are kept verbatim.
pub fn parse_trace(
    text: &str,
    schema: &TraceSchema,
    user_id: &str,
    video_id: &str,
) -> Result<Session> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::SchemaMismatch(format!("unreadable header: {e}")))?
        .clone();
    let index = schema.resolve(&header)?;
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            line,
            column: String::new(),
            reason: e.to_string(),
        })?;
        if rec.len() != FIELD_COUNT {
            return Err(Error::SchemaMismatch(format!(
                "line {line} has {} fields, expected {FIELD_COUNT}",
                rec.len()
            )));
        }
        let cell = |field: usize| rec.get(index[field]).unwrap_or("").trim();
        let frame: u64 = cell(0).parse().map_err(|_| Error::MalformedRow {
            line,
            column: schema.columns[0].clone(),
            reason: format!("not a non-negative integer: {:?}", cell(0)),
        })?;
        let mut values = [0.0; FIELD_COUNT - 1];
        for (k, v) in values.iter_mut().enumerate() {
            let raw = cell(k + 1);
            let parsed: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                line,
                column: schema.columns[k + 1].clone(),
                reason: format!("not a number: {raw:?}"),
            })?;
            if !parsed.is_finite() {
                return Err(Error::MalformedRow {
                    line,
                    column: schema.columns[k + 1].clone(),
                    reason: format!("non-finite value {raw:?}"),
                });
            }
            *v = parsed;
        }
        samples.push(TraceSample::from_fields(frame, &values));
    }
    Ok(Session::new(user_id, video_id, samples))
}

/// Writes a session in the canonical column order. Reals use the shortest
/// representation that round-trips exactly.
pub fn serialize_trace(s: &Session) -> String {
    let mut out = String::with_capacity(64 + s.samples.len() * 256);
    out.push_str(&CANONICAL_COLUMNS.join(","));
    out.push('\n');
    for sample in &s.samples {
        out.push_str(&sample.frame.to_string());
        for v in sample.to_fields() {
            out.push(',');
            out.push_str(&format_real(v));
        }
        out.push('\n');
    }
    out
}

/// Shortest round-trip decimal form of a finite real.
pub fn format_real(v: f64) -> String {
    if v == 0.0 && v.is_sign_negative() {
        return "-0".to_string();
    }
    format!("{v}")
}

pub fn load_trace(path: &Path, schema: &TraceSchema, user_id: &str, video_id: &str) -> Result<Session> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text, schema, user_id, video_id)
}

/// What to do with eye samples whose confidence is out of range or low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazePolicy {
    /// Clamp confidences to [0,1]; zero those below the threshold so the
    /// downstream gaze falls back to headset-forward.
    Mask,
    /// Clamp confidences to [0,1] and keep everything else.
    Clamp,
    /// Drop samples where no eye has an in-range confidence at or above the threshold.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub gaze: GazePolicy,
    pub min_confidence: f64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self { gaze: GazePolicy::Mask, min_confidence: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub duplicates: usize,
    pub out_of_order: usize,
    pub non_finite: usize,
    pub clamped: usize,
    pub masked: usize,
    pub dropped_low_confidence: usize,
}

impl ValidationReport {
    pub fn total(&self) -> usize {
        self.duplicates
            + self.out_of_order
            + self.non_finite
            + self.clamped
            + self.masked
            + self.dropped_low_confidence
    }
}

/// Repairs a session: drops non-finite rows and non-increasing timestamps
/// (keeping the first occurrence) and applies the gaze policy.
pub fn validate_session(s: &Session, policy: &ValidationPolicy) -> Result<(Session, ValidationReport)> {
    let mut report = ValidationReport::default();
    let mut kept: Vec<TraceSample> = Vec::with_capacity(s.samples.len());
    for sample in &s.samples {
        if !sample.is_finite() {
            report.non_finite += 1;
            continue;
        }
        if let Some(prev) = kept.last() {
            if sample.timestamp == prev.timestamp {
                report.duplicates += 1;
                continue;
            }
            if sample.timestamp < prev.timestamp {
                report.out_of_order += 1;
                continue;
            }
        }
        let mut sample = *sample;
        match policy.gaze {
            GazePolicy::Drop => {
                let usable = |c: f64| (0.0..=1.0).contains(&c) && c >= policy.min_confidence;
                if !usable(sample.eye_left.confidence) && !usable(sample.eye_right.confidence) {
                    report.dropped_low_confidence += 1;
                    continue;
                }
            }
            GazePolicy::Clamp | GazePolicy::Mask => {
                for eye in [&mut sample.eye_left, &mut sample.eye_right] {
                    let c = eye.confidence.clamp(0.0, 1.0);
                    if c != eye.confidence {
                        report.clamped += 1;
                        eye.confidence = c;
                    }
                    if policy.gaze == GazePolicy::Mask && c < policy.min_confidence && c != 0.0 {
                        report.masked += 1;
                        eye.confidence = 0.0;
                    }
                }
            }
        }
        kept.push(sample);
    }
    if kept.is_empty() {
        return Err(Error::EmptySession);
    }
    Ok((
        Session {
            user_id: s.user_id.clone(),
            video_id: s.video_id.clone(),
            samples: kept,
            nominal_rate: s.nominal_rate,
        },
        report,
    ))
}

/// Circular interpolation of an angle in degrees along the shorter arc.
pub fn lerp_angle_deg(a: f64, b: f64, f: f64) -> f64 {
    let delta = (b - a + 180.0).rem_euclid(360.0) - 180.0;
    if delta == 0.0 || f == 0.0 {
        return a;
    }
    let v = a + f * delta;
    if (0.0..360.0).contains(&a) {
        v.rem_euclid(360.0)
    } else {
        let w = (v + 180.0).rem_euclid(360.0) - 180.0;
        if w == -180.0 { 180.0 } else { w }
    }
}

fn lerp_euler(a: EulerAngles, b: EulerAngles, f: f64) -> EulerAngles {
    EulerAngles::new(
        lerp_angle_deg(a.yaw, b.yaw, f),
        lerp_angle_deg(a.pitch, b.pitch, f),
        lerp_angle_deg(a.roll, b.roll, f),
    )
}

fn lerp_pose(a: &Pose, b: &Pose, f: f64) -> Pose {
    Pose {
        position: a.position.lerp(b.position, f),
        orientation: lerp_euler(a.orientation, b.orientation, f),
    }
}

fn interpolate(a: &TraceSample, b: &TraceSample, t: f64) -> TraceSample {
    let f = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let conf = a.eye_left.confidence.min(b.eye_left.confidence);
    let conf_r = a.eye_right.confidence.min(b.eye_right.confidence);
    TraceSample {
        frame: a.frame,
        timestamp: t,
        headset: lerp_pose(&a.headset, &b.headset, f),
        controller_left: lerp_pose(&a.controller_left, &b.controller_left, f),
        controller_right: lerp_pose(&a.controller_right, &b.controller_right, f),
        eye_left: EyeSample {
            direction: lerp_euler(a.eye_left.direction, b.eye_left.direction, f),
            confidence: conf,
        },
        eye_right: EyeSample {
            direction: lerp_euler(a.eye_right.direction, b.eye_right.direction, f),
            confidence: conf_r,
        },
    }
}

/// Resamples onto the uniform grid `t0 + k/rate` covering the input span.
/// Grid points that coincide with an input timestamp reproduce that sample.
pub fn resample(s: &Session, rate: f64) -> Result<Session> {
    if s.samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: s.samples.len() });
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidConfig(format!("resample rate must be positive, got {rate}")));
    }
    let t0 = s.samples[0].timestamp;
    let t_end = s.samples[s.samples.len() - 1].timestamp;
    let steps = ((t_end - t0) * rate + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut j = 0usize;
    for k in 0..=steps {
        let t = (t0 + k as f64 / rate).min(t_end);
        while j + 2 < s.samples.len() && s.samples[j + 1].timestamp <= t {
            j += 1;
        }
        let a = &s.samples[j];
        let b = &s.samples[j + 1];
        // grid points within rounding of an input timestamp reproduce that sample
        let snap = 1e-9 / rate;
        let sample = if (t - a.timestamp).abs() <= snap {
            *a
        } else if (t - b.timestamp).abs() <= snap {
            *b
        } else {
            interpolate(a, b, t)
        };
        out.push(sample);
    }
    Ok(Session {
        user_id: s.user_id.clone(),
        video_id: s.video_id.clone(),
        samples: out,
        nominal_rate: rate,
    })
}

/// Signed permutation of the coordinate axes: target axis `j` takes
/// `sign[j] * source[perm[j]]`.
///
/// Euler angles are labelled by role (yaw about up, pitch about lateral,
/// roll about forward), so remapping keeps the labels and negates all three
/// when the map changes handedness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    pub perm: [usize; 3],
    pub sign: [i8; 3],
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap { perm: [0, 1, 2], sign: [1, 1, 1] };
    /// y-up source engine to the z-up analysis frame.
    pub const Y_UP_TO_Z_UP: AxisMap = AxisMap { perm: [0, 2, 1], sign: [1, 1, 1] };

    pub fn new(perm: [usize; 3], sign: [i8; 3]) -> Result<Self> {
        let m = AxisMap { perm, sign };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let mut seen = [false; 3];
        for (&p, &s) in self.perm.iter().zip(&self.sign) {
            if p > 2 || seen[p] {
                return Err(Error::InvalidMapping(format!("{:?} is not a permutation", self.perm)));
            }
            if s != 1 && s != -1 {
                return Err(Error::InvalidMapping(format!("sign {s} must be ±1")));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Parses `"x,z,y"` or `"x,-z,y"` style specs (one entry per target axis).
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidMapping(format!("{spec:?}: need three comma-separated axes")));
        }
        let mut perm = [0; 3];
        let mut sign = [1i8; 3];
        for (j, p) in parts.iter().enumerate() {
            let (s, name) = match p.strip_prefix('-') {
                Some(rest) => (-1, rest),
                None => (1, p.strip_prefix('+').unwrap_or(p)),
            };
            perm[j] = match name {
                "x" | "X" => 0,
                "y" | "Y" => 1,
                "z" | "Z" => 2,
                _ => return Err(Error::InvalidMapping(format!("unknown axis {p:?}"))),
            };
            sign[j] = s;
        }
        Self::new(perm, sign)
    }

    pub fn inverse(&self) -> AxisMap {
        let mut perm = [0; 3];
        let mut sign = [1; 3];
        for j in 0..3 {
            perm[self.perm[j]] = j;
            sign[self.perm[j]] = self.sign[j];
        }
        AxisMap { perm, sign }
    }

    fn determinant(&self) -> i8 {
        let mut inversions = 0;
        for a in 0..3 {
            for b in a + 1..3 {
                if self.perm[a] > self.perm[b] {
                    inversions += 1;
                }
            }
        }
        let parity = if inversions % 2 == 0 { 1 } else { -1 };
        parity * self.sign[0] * self.sign[1] * self.sign[2]
    }

    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        let src = v.to_array();
        let out: [f64; 3] = std::array::from_fn(|j| {
            let x = src[self.perm[j]];
            if self.sign[j] < 0 { -x } else { x }
        });
        Vec3::from_array(out)
    }

    pub fn apply_angles(&self, a: EulerAngles) -> EulerAngles {
        // angles keep their roles; a handedness change reverses every sense
        if self.determinant() < 0 {
            EulerAngles::new(-a.yaw, -a.pitch, -a.roll)
        } else {
            a
        }
    }

    fn apply_pose(&self, p: &Pose) -> Pose {
        Pose { position: self.apply_vec(p.position), orientation: self.apply_angles(p.orientation) }
    }
}

impl Default for AxisMap {
    fn default() -> Self {
        AxisMap::Y_UP_TO_Z_UP
    }
}

pub fn axis_map(s: &Session, m: &AxisMap) -> Result<Session> {
    m.check()?;
    let samples = s
        .samples
        .iter()
        .map(|x| TraceSample {
            headset: m.apply_pose(&x.headset),
            controller_left: m.apply_pose(&x.controller_left),
            controller_right: m.apply_pose(&x.controller_right),
            eye_left: EyeSample { direction: m.apply_angles(x.eye_left.direction), ..x.eye_left },
            eye_right: EyeSample { direction: m.apply_angles(x.eye_right.direction), ..x.eye_right },
            ..*x
        })
        .collect();
    Ok(Session { samples, ..s.clone() })
}
