//! Reference forecasters: persistence, per-dimension linear regression and a
//! small multilayer perceptron.

use std::collections::BTreeMap;

use super::dataset::Window;
use super::model::{name_rng, viewport_features, ParamStore};
use super::tape::{Tape, Tensor, Var};
use super::train::{optimize, trajectory_loss, Grads};
use super::{PredictorConfig, ViewportState, ViewportTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{orientation_from_forward, EulerOrder, Vec3};

/// Repeats the last observed state `t` times.
pub fn persistence(history: &[ViewportState], t: usize) -> Result<ViewportTrajectory> {
    let last = *history.last().ok_or(Error::InsufficientHistory { needed: 1, got: 0 })?;
    Ok(ViewportTrajectory::new(0.0, vec![last; t]))
}

/// Least-squares line through `ys` sampled at `0, 1, …`; returns (intercept, slope).
pub fn fit_line(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (ym - slope * xm, slope)
}

/// Fits a line per dimension (position, forward-vector components and
/// unwrapped roll) over the window and extrapolates `t` steps.
pub fn linear_regression(history: &[ViewportState], t: usize, rate_hz: f64) -> Result<ViewportTrajectory> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory { needed: 2, got: history.len() });
    }
    let order = EulerOrder::default();
    let n = history.len();
    let mut dims: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 7];
    let mut roll = history[0].orientation.roll;
    for (k, s) in history.iter().enumerate() {
        let f = s.forward(order);
        if k > 0 {
            // continuous roll: previous value plus the short-arc step
            roll += (s.orientation.roll - history[k - 1].orientation.roll + 180.0).rem_euclid(360.0) - 180.0;
        }
        for (d, v) in [s.position.x, s.position.y, s.position.z, f.x, f.y, f.z, roll].into_iter().enumerate() {
            dims[d].push(v);
        }
    }
    let lines: Vec<(f64, f64)> = dims.iter().map(|d| fit_line(d)).collect();
    let at = |d: usize, x: f64| lines[d].0 + lines[d].1 * x;
    let last_fwd = history[n - 1].forward(order);
    let states = (0..t)
        .map(|j| {
            let x = (n + j) as f64;
            let position = Vec3::new(at(0, x), at(1, x), at(2, x));
            let f = Vec3::new(at(3, x), at(4, x), at(5, x)).normalized().unwrap_or(last_fwd);
            ViewportState { position, orientation: orientation_from_forward(f, at(6, x), order) }
        })
        .collect();
    Ok(ViewportTrajectory::new(rate_hz, states))
}

/// Two-layer perceptron from the flattened window features to `t × 6` deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBaseline {
    pub history_len: usize,
    pub horizon: usize,
    pub rate_hz: f64,
    pub params: ParamStore,
}

impl MlpBaseline {
    pub fn new(cfg: &PredictorConfig) -> Self {
        use rand::Rng;
        let input = 6 * cfg.history_len;
        let mut rng = name_rng(cfg.seed, "mlp.hidden.w");
        let lim = (6.0 / (input + cfg.head_hidden) as f64).sqrt();
        let w1 = (0..input * cfg.head_hidden).map(|_| rng.gen_range(-lim..lim)).collect();
        let mut tensors = BTreeMap::new();
        tensors.insert("mlp.hidden.w".to_string(), Tensor::from_vec(input, cfg.head_hidden, w1));
        tensors.insert("mlp.hidden.b".to_string(), Tensor::zeros(1, cfg.head_hidden));
        tensors.insert("mlp.out.w".to_string(), Tensor::zeros(cfg.head_hidden, 6 * cfg.horizon));
        tensors.insert("mlp.out.b".to_string(), Tensor::zeros(1, 6 * cfg.horizon));
        Self {
            history_len: cfg.history_len,
            horizon: cfg.horizon,
            rate_hz: cfg.rate_hz,
            params: ParamStore { tensors },
        }
    }

    fn input(&self, history: &[ViewportState]) -> Result<Tensor> {
        if history.len() != self.history_len {
            return Err(Error::InsufficientHistory { needed: self.history_len, got: history.len() });
        }
        let f = viewport_features(history);
        Ok(Tensor::from_vec(1, f.len(), f.data))
    }

    fn graph(tape: &mut Tape, p: &BTreeMap<String, Var>, x: Tensor) -> Var {
        let x = tape.leaf(x);
        let h = tape.matmul(x, p["mlp.hidden.w"]);
        let h = tape.add_row(h, p["mlp.hidden.b"]);
        let h = tape.relu(h);
        let y = tape.matmul(h, p["mlp.out.w"]);
        tape.add_row(y, p["mlp.out.b"])
    }

    pub fn deltas(&self, history: &[ViewportState]) -> Result<Tensor> {
        let x = self.input(history)?;
        let mut tape = Tape::new();
        let vars = self.params.tensors.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
        let out = Self::graph(&mut tape, &vars, x);
        let y = tape.value(out);
        Ok(Tensor::from_vec(self.horizon, 6, y.data.clone()))
    }

    pub fn predict(&self, history: &[ViewportState]) -> Result<ViewportTrajectory> {
        let d = self.deltas(history)?;
        let order = EulerOrder::default();
        let last = history[history.len() - 1];
        let lf = last.forward(order);
        let states = (0..self.horizon)
            .map(|j| {
                let r = d.row(j);
                let position = last.position + Vec3::new(r[0], r[1], r[2]);
                let orientation = if r[3..].iter().all(|&v| v == 0.0) {
                    last.orientation
                } else {
                    match (lf + Vec3::new(r[3], r[4], r[5])).normalized() {
                        Some(f) => orientation_from_forward(f, last.orientation.roll, order),
                        None => last.orientation,
                    }
                };
                ViewportState { position, orientation }
            })
            .collect();
        Ok(ViewportTrajectory::new(self.rate_hz, states))
    }

    /// Trains with the predictor's loss, optimiser and schedule.
    pub fn train(data: &[Window], cfg: &PredictorConfig) -> Result<(Self, Vec<f64>)> {
        let mut model = Self::new(cfg);
        let items: Vec<(Tensor, &Window)> =
            data.iter().map(|w| Ok((model.input(&w.history)?, w))).collect::<Result<_>>()?;
        let weight = cfg.orientation_weight;
        let curve = optimize(&mut model.params, &items, cfg, false, |p, (x, w)| {
            let mut tape = Tape::new();
            let vars: BTreeMap<String, Var> =
                p.tensors.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
            let out = Self::graph(&mut tape, &vars, x.clone());
            let last = *w.last();
            let (loss, seed) =
                trajectory_loss(tape.value(out), &last, last.forward(EulerOrder::default()), &w.target, weight);
            let grads = tape.backward(out, seed);
            let named: Grads = vars
                .iter()
                .map(|(k, v)| {
                    let t = &p.tensors[k];
                    (k.clone(), grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
                })
                .collect();
            (loss, named)
        })?;
        Ok((model, curve))
    }
}
