//! Resolved run configuration: built-in defaults, overridden by a `--config`
//! TOML file, overridden by command-line flags.

use serde::{Deserialize, Serialize};
use std::path::Path;

use vvtrace::geometry::{EulerOrder, DEFAULT_HALF_ANGLE_DEG};
use vvtrace::kinematics::DEFAULT_CELL_M;
use vvtrace::predictor::PredictorConfig;
use vvtrace::roi::{DistanceMode, DEFAULT_D_REF_M, DEFAULT_EDGE_M, DEFAULT_MIN_HITS, DEFAULT_TAU0};
use vvtrace::trace::{GazePolicy, NOMINAL_RATE_HZ};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trace: TraceSection,
    pub roi: RoiSection,
    pub kinematics: KinematicsSection,
    pub dataset: DatasetSection,
    pub predictor: PredictorConfig,
    pub streaming: StreamingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Source-to-analysis axis map, one source axis per target axis.
    pub axis_map: String,
    pub euler_order: EulerOrder,
    pub gaze_policy: GazePolicy,
    pub min_confidence: f64,
    pub resample_hz: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            axis_map: "x,z,y".into(),
            euler_order: EulerOrder::RollPitchYaw,
            gaze_policy: GazePolicy::Mask,
            min_confidence: 0.5,
            resample_hz: NOMINAL_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiSection {
    pub edge: f64,
    pub half_angle: f64,
    pub tau0: f64,
    pub d_ref: f64,
    pub adaptive_threshold: bool,
    pub distance_mode: DistanceMode,
    pub histogram_bins: usize,
    pub min_hits: u64,
}

impl Default for RoiSection {
    fn default() -> Self {
        Self {
            edge: DEFAULT_EDGE_M,
            half_angle: DEFAULT_HALF_ANGLE_DEG,
            tau0: DEFAULT_TAU0,
            d_ref: DEFAULT_D_REF_M,
            adaptive_threshold: true,
            distance_mode: DistanceMode::MeanHit,
            histogram_bins: 20,
            min_hits: DEFAULT_MIN_HITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsSection {
    pub cell: f64,
    pub floor_z: f64,
    /// Gaze/trajectory intersection tolerance; one cell diagonal when absent.
    pub tolerance: Option<f64>,
    /// Fixed capture-area grid instead of one fitted to the trajectory.
    pub capture_area: bool,
}

impl Default for KinematicsSection {
    fn default() -> Self {
        Self { cell: DEFAULT_CELL_M, floor_z: 0.0, tolerance: None, capture_area: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub window_stride: usize,
    pub validation_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { window_stride: 10, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamingSection {
    /// Bits per frame; each value is one run of the sweep.
    pub budgets: Vec<f64>,
    pub ladder: Vec<f64>,
    pub horizon: usize,
    /// Frames between prediction refreshes; 0 means once per horizon.
    pub refresh: usize,
    pub half_angle: f64,
    pub predictor: String,
    pub lag: usize,
    pub regression_window: usize,
}

impl Default for StreamingSection {
    fn default() -> Self {
        Self {
            budgets: vec![1e3, 1e4, 1e5, 1e6, 1e7],
            ladder: vec![2.0, 4.0, 8.0, 16.0],
            horizon: 30,
            refresh: 0,
            half_angle: DEFAULT_HALF_ANGLE_DEG,
            predictor: "persistence".into(),
            lag: 10,
            regression_window: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}
