//! Analytics and prediction toolkit for six-DoF volumetric video viewing traces.
//!
//! The crate is organised along the processing pipeline:
//!
//! * [`trace`] ingests, validates, axis-maps and resamples headset/gaze recordings.
//! * [`geometry`] builds rotation matrices, composes gaze into the world frame and
//!   answers cone-membership queries.
//! * [`roi`] voxelizes point-cloud scenes and computes per-cube volumetric ROI levels.
//! * [`kinematics`] derives movement distances, rotational acceleration, CDFs and
//!   aerial dwell heatmaps.
//! * [`predictor`] is the gaze-assisted cross-modal viewport predictor with its
//!   baselines, metric and ablation harness.
//! * [`streaming`] culls and allocates cube bitrates from predicted viewports and
//!   scores them against recorded gaze.
//!
//! The canonical analysis frame is right-handed and z-up, with +x as the headset
//! forward axis.

pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod ply;
pub mod predictor;
pub mod roi;
pub mod streaming;
pub mod synthetic;
pub mod trace;

pub use error::{Error, Result};
pub use geometry::{EulerAngles, GlobalGaze, RotationMatrix, Vec3};
pub use trace::{Session, TraceSample};

/// Version of the on-disk formats (trace CSV, ROI CSV, checkpoints, manifests).
pub const FORMAT_VERSION: u32 = 1;
