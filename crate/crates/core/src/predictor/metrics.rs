//! Trajectory error metrics.

use serde::{Deserialize, Serialize};

use super::{ViewportState, ViewportTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, EulerOrder};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaeaReport {
    /// Mean angle between predicted and true viewing directions, degrees.
    pub maea_deg: f64,
    /// Mean Euclidean position error, meters.
    pub position_mae_m: f64,
}

pub fn viewing_angle_deg(a: &ViewportState, b: &ViewportState) -> f64 {
    let order = EulerOrder::default();
    angle_between(a.forward(order), b.forward(order)).to_degrees()
}

pub fn evaluate_maea(pred: &ViewportTrajectory, truth: &ViewportTrajectory) -> Result<MaeaReport> {
    evaluate_states(&pred.states, &truth.states)
}

pub fn evaluate_states(pred: &[ViewportState], truth: &[ViewportState]) -> Result<MaeaReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = pred.len() as f64;
    let mut r = MaeaReport::default();
    for (p, t) in pred.iter().zip(truth) {
        r.maea_deg += viewing_angle_deg(p, t);
        r.position_mae_m += p.position.distance(t.position);
    }
    r.maea_deg /= n;
    r.position_mae_m /= n;
    Ok(r)
}

/// Mean of several reports weighted equally per trajectory.
pub fn mean_report(reports: &[MaeaReport]) -> Result<MaeaReport> {
    if reports.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = reports.len() as f64;
    Ok(MaeaReport {
        maea_deg: reports.iter().map(|r| r.maea_deg).sum::<f64>() / n,
        position_mae_m: reports.iter().map(|r| r.position_mae_m).sum::<f64>() / n,
    })
}
