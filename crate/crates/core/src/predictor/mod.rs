//! Gaze-assisted cross-modal viewport predictor.
//!
//! A window of `n` past viewport states, the gaze rays recorded over that
//! window and one sampled point-cloud frame are encoded, fused by
//! bidirectional cross-attention and decoded into `t` future states. The
//! decoder predicts deltas over the last observed state, so a zero output
//! layer reproduces the persistence forecast exactly.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix_with, forward_vector, EulerAngles, EulerOrder, Vec3};

pub use baselines::{linear_regression, persistence, MlpBaseline};
pub use dataset::{build_windows, split_by_user, Window};
pub use metrics::{evaluate_maea, MaeaReport};
pub use model::{ParamStore, Predictor};
pub use train::{ablate, train, AblationReport, TrainOutcome};

/// One 6-DoF viewport sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewportState {
    pub position: Vec3,
    pub orientation: EulerAngles,
}

impl ViewportState {
    pub fn forward(&self, order: EulerOrder) -> Vec3 {
        forward_vector(&euler_to_matrix_with(self.orientation, order))
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }
}

/// Viewport states at a fixed rate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewportTrajectory {
    pub rate_hz: f64,
    pub states: Vec<ViewportState>,
}

impl ViewportTrajectory {
    pub fn new(rate_hz: f64, states: Vec<ViewportState>) -> Self {
        Self { rate_hz, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Which parts of the full model are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub no_gaze: bool,
    pub no_point_encoder: bool,
    pub no_cross_modal: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags =
        AblationFlags { no_gaze: false, no_point_encoder: false, no_cross_modal: false };

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.no_gaze {
            parts.push("no_gaze");
        }
        if self.no_point_encoder {
            parts.push("no_point_encoder");
        }
        if self.no_cross_modal {
            parts.push("no_cross_modal");
        }
        if parts.is_empty() { "full".into() } else { parts.join("+") }
    }

    /// The full model followed by each single ablation.
    pub fn report_variants() -> [AblationFlags; 4] {
        let f = AblationFlags::FULL;
        [
            f,
            AblationFlags { no_gaze: true, ..f },
            AblationFlags { no_point_encoder: true, ..f },
            AblationFlags { no_cross_modal: true, ..f },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to zero over the run.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// History window `n`, in steps.
    pub history_len: usize,
    /// Forecast horizon `t`, in steps.
    pub horizon: usize,
    pub rate_hz: f64,
    pub embed_dim: usize,
    pub heads: usize,
    pub fusion_layers: usize,
    pub scene_points: usize,
    pub sa_levels: usize,
    /// Points per set-abstraction group; also the minimum cloud size.
    pub group_size: usize,
    /// Grouping radius of the first level in meters; doubles per level.
    pub sa_radius: f64,
    pub head_hidden: usize,
    pub half_angle_deg: f64,
    /// Weight of the angular term (degrees) against the positional term (meters).
    pub orientation_weight: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            history_len: 90,
            horizon: 30,
            rate_hz: 30.0,
            embed_dim: 64,
            heads: 4,
            fusion_layers: 2,
            scene_points: 256,
            sa_levels: 2,
            group_size: 16,
            sa_radius: 0.5,
            head_hidden: 128,
            half_angle_deg: 30.0,
            orientation_weight: 0.1,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            epochs: 50,
            seed: 0,
            ablation: AblationFlags::FULL,
        }
    }
}

impl PredictorConfig {
    /// A configuration small enough for unit tests and quick experiments.
    pub fn tiny() -> Self {
        Self {
            history_len: 4,
            horizon: 3,
            embed_dim: 12,
            heads: 2,
            fusion_layers: 1,
            scene_points: 24,
            sa_levels: 2,
            group_size: 4,
            sa_radius: 0.5,
            head_hidden: 16,
            learning_rate: 1e-2,
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.history_len == 0 || self.horizon == 0 {
            return bad("history_len and horizon must be at least 1".into());
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.ablation.no_point_encoder && self.embed_dim < 12 {
            return bad("raw-coordinate statistics need embed_dim >= 12".into());
        }
        if self.group_size == 0 || self.scene_points < self.group_size {
            return bad("scene_points must be at least group_size > 0".into());
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be positive".into());
        }
        if !(self.rate_hz > 0.0) || !(self.sa_radius > 0.0) {
            return bad("rate_hz and sa_radius must be positive".into());
        }
        if !(self.half_angle_deg >= 0.0 && self.half_angle_deg <= 180.0) {
            return bad("half_angle_deg must lie in [0, 180]".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative".into());
        }
        if !(self.orientation_weight >= 0.0) {
            return bad("orientation_weight must be non-negative".into());
        }
        Ok(())
    }
}
