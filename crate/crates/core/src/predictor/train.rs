//! Loss, optimiser, training loop and the ablation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::baselines::{linear_regression, persistence, MlpBaseline};
use super::dataset::Window;
use super::metrics::{evaluate_states, mean_report, MaeaReport};
use super::model::{prepare, Bound, Graph, ParamStore, Predictor, Prepared};
use super::tape::{Tape, Tensor};
use super::{AblationFlags, LrSchedule, PredictorConfig, ViewportState};
use crate::error::{Error, Result};
use crate::geometry::{EulerOrder, Vec3};

/// Mean over steps of the mean absolute position error (meters) plus
/// `weight` × the angle (degrees) between predicted and true forward vectors.
/// Returns the loss and its gradient with respect to the `t × 6` deltas
/// (any shape holding `6t` values row-major).
pub fn trajectory_loss(
    deltas: &Tensor,
    last: &ViewportState,
    last_forward: Vec3,
    target: &[ViewportState],
    weight: f64,
) -> (f64, Tensor) {
    let t = target.len();
    assert_eq!(deltas.len(), 6 * t, "deltas do not match the horizon");
    let order = EulerOrder::default();
    let mut grad = Tensor::zeros(deltas.rows, deltas.cols);
    let mut loss = 0.0;
    let inv_t = 1.0 / t as f64;
    for (j, truth) in target.iter().enumerate() {
        let d = &deltas.data[6 * j..6 * j + 6];
        let want = truth.position - last.position;
        for k in 0..3 {
            let e = d[k] - want.get(k);
            loss += inv_t * e.abs() / 3.0;
            grad.data[6 * j + k] = if e == 0.0 { 0.0 } else { inv_t * e.signum() / 3.0 };
        }
        let w = last_forward + Vec3::new(d[3], d[4], d[5]);
        let wn = w.norm();
        if wn == 0.0 {
            loss += inv_t * weight * 90.0;
            continue;
        }
        let u = w * (1.0 / wn);
        let v = truth.forward(order);
        let (a, b) = (u - v, u + v);
        let (na, nb) = (a.norm(), b.norm());
        let theta = 2.0 * na.atan2(nb);
        let deg = 180.0 / std::f64::consts::PI;
        loss += inv_t * weight * theta * deg;
        // dθ/du = 2 (|b| â − |a| b̂) / (|a|² + |b|²)
        let denom = na * na + nb * nb;
        let mut gu = Vec3::ZERO;
        if na > 0.0 {
            gu = gu + a * (nb / na);
        }
        if nb > 0.0 {
            gu = gu - b * (na / nb);
        }
        gu = gu * (2.0 / denom);
        // through u = w/|w|
        let gw = (gu - u * u.dot(gu)) * (1.0 / wn);
        for k in 0..3 {
            grad.data[6 * j + 3 + k] = inv_t * weight * deg * gw.get(k);
        }
    }
    (loss, grad)
}

pub type Grads = BTreeMap<String, Tensor>;

struct Adam {
    m: Grads,
    v: Grads,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(p: &ParamStore) -> Self {
        let zeros: Grads = p.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.rows, t.cols))).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, p: &mut ParamStore, g: &Grads, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (name, t) in p.tensors.iter_mut() {
            let (m, v, gr) = (self.m.get_mut(name).unwrap(), self.v.get_mut(name).unwrap(), &g[name]);
            for i in 0..t.data.len() {
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gr.data[i];
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gr.data[i] * gr.data[i];
                t.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

pub(crate) fn learning_rate(cfg: &PredictorConfig, epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::Cosine => {
            let frac = epoch as f64 / cfg.epochs.max(1) as f64;
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// Full-batch Adam. Per-item results are reduced in item order, so the
/// parallel and sequential paths produce identical bits.
pub(crate) fn optimize<I: Sync>(
    params: &mut ParamStore,
    items: &[I],
    cfg: &PredictorConfig,
    parallel: bool,
    item_grad: impl Fn(&ParamStore, &I) -> (f64, Grads) + Sync,
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut adam = Adam::new(params);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let n = items.len() as f64;
    for epoch in 0..cfg.epochs {
        let results: Vec<(f64, Grads)> = if parallel {
            items.par_iter().map(|it| item_grad(params, it)).collect()
        } else {
            items.iter().map(|it| item_grad(params, it)).collect()
        };
        let mut loss = 0.0;
        let mut total: Grads =
            params.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.rows, t.cols))).collect();
        for (i, (l, g)) in results.iter().enumerate() {
            let finite = l.is_finite() && g.values().all(Tensor::is_finite);
            if !finite {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    diagnostics: format!(
                        "item {i}: loss {l}, max |param| {:.3e}, learning rate {}",
                        params.max_abs(),
                        learning_rate(cfg, epoch)
                    ),
                });
            }
            loss += l;
            for (k, t) in g {
                let acc = total.get_mut(k).expect("gradient for unknown tensor");
                for (a, b) in acc.data.iter_mut().zip(&t.data) {
                    *a += b;
                }
            }
        }
        total.values_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v /= n));
        curve.push(loss / n);
        adam.update(params, &total, learning_rate(cfg, epoch));
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                diagnostics: format!("parameters became non-finite after the update (loss {})", loss / n),
            });
        }
    }
    Ok(curve)
}

struct Item {
    prep: Prepared,
    target: Vec<ViewportState>,
}

fn predictor_grad(cfg: &PredictorConfig, params: &ParamStore, it: &Item) -> (f64, Grads) {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params);
    let out = Graph { tape: &mut tape, params: &bound, cfg }.forward(&it.prep);
    let (loss, seed) =
        trajectory_loss(tape.value(out), &it.prep.last, it.prep.last_forward, &it.target, cfg.orientation_weight);
    let grads = tape.backward(out, seed);
    let named = bound
        .iter()
        .map(|(k, v)| {
            let t = &params.tensors[k];
            (k.clone(), grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
        })
        .collect();
    (loss, named)
}

/// Training loss of one window and its gradient for every parameter tensor.
pub fn loss_and_gradients(model: &Predictor, w: &Window) -> Result<(f64, Grads)> {
    let cfg = &model.cfg;
    let it = Item { prep: prepare(w, cfg)?, target: w.target.clone() };
    if it.target.len() != cfg.horizon {
        return Err(Error::ShapeMismatch(format!("target has {} steps, horizon is {}", it.target.len(), cfg.horizon)));
    }
    Ok(predictor_grad(cfg, &model.params, &it))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Predictor,
    /// Mean training loss at the start of every epoch.
    pub losses: Vec<f64>,
}

pub fn train(data: &[Window], cfg: &PredictorConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, false)
}

pub fn train_with(data: &[Window], cfg: &PredictorConfig, parallel: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let items: Vec<Item> = data
        .iter()
        .map(|w| {
            if w.target.len() != cfg.horizon {
                return Err(Error::ShapeMismatch(format!("target has {} steps, horizon is {}", w.target.len(), cfg.horizon)));
            }
            Ok(Item { prep: prepare(w, cfg)?, target: w.target.clone() })
        })
        .collect::<Result<_>>()?;
    let mut model = Predictor::new(cfg.clone())?;
    let losses = optimize(&mut model.params, &items, cfg, parallel, |p, it| predictor_grad(cfg, p, it))?;
    Ok(TrainOutcome { model, losses })
}

pub fn evaluate_model(model: &Predictor, data: &[Window]) -> Result<MaeaReport> {
    let reports = data
        .iter()
        .map(|w| evaluate_states(&model.predict(w)?.states, &w.target))
        .collect::<Result<Vec<_>>>()?;
    mean_report(&reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub parameters: usize,
    pub maea_deg: f64,
    pub position_mae_m: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// "validation" for held-out users, "training" when no user could be held out.
    pub evaluated_on: String,
    pub train_windows: usize,
    pub eval_windows: usize,
    pub rows: Vec<AblationRow>,
    pub baselines: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,variant,parameters,maea_deg,position_mae_m,final_loss\n");
        for (kind, rows) in [("ablation", &self.rows), ("baseline", &self.baselines)] {
            for r in rows {
                let _ = writeln!(
                    out,
                    "{kind},{},{},{},{},{}",
                    r.variant, r.parameters, r.maea_deg, r.position_mae_m, r.final_loss
                );
            }
        }
        out
    }
}

/// Trains the full model and each single ablation with the same seed and
/// scores them, plus the baselines, on the evaluation windows.
pub fn ablate(train_set: &[Window], eval_set: &[Window], cfg: &PredictorConfig) -> Result<AblationReport> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (eval, evaluated_on) =
        if eval_set.is_empty() { (train_set, "training") } else { (eval_set, "validation") };
    let mut rows = Vec::new();
    for flags in AblationFlags::report_variants() {
        let vcfg = PredictorConfig { ablation: flags, ..cfg.clone() };
        let out = train(train_set, &vcfg)?;
        let r = evaluate_model(&out.model, eval)?;
        rows.push(AblationRow {
            variant: flags.name(),
            parameters: out.model.param_count(),
            maea_deg: r.maea_deg,
            position_mae_m: r.position_mae_m,
            final_loss: out.losses.last().copied().unwrap_or(f64::NAN),
        });
    }
    let mut baselines = Vec::new();
    let score = |f: &dyn Fn(&Window) -> Result<Vec<ViewportState>>| -> Result<MaeaReport> {
        let reports = eval.iter().map(|w| evaluate_states(&f(w)?, &w.target)).collect::<Result<Vec<_>>>()?;
        mean_report(&reports)
    };
    let t = cfg.horizon;
    for (name, r) in [
        ("persistence", score(&|w| Ok(persistence(&w.history, t)?.states))?),
        ("linear_regression", score(&|w| Ok(linear_regression(&w.history, t, cfg.rate_hz)?.states))?),
    ] {
        baselines.push(AblationRow {
            variant: name.into(),
            parameters: 0,
            maea_deg: r.maea_deg,
            position_mae_m: r.position_mae_m,
            final_loss: f64::NAN,
        });
    }
    let (mlp, curve) = MlpBaseline::train(train_set, cfg)?;
    let r = score(&|w| Ok(mlp.predict(&w.history)?.states))?;
    baselines.push(AblationRow {
        variant: "mlp".into(),
        parameters: mlp.params.count(),
        maea_deg: r.maea_deg,
        position_mae_m: r.position_mae_m,
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
    });
    Ok(AblationReport {
        evaluated_on: evaluated_on.into(),
        train_windows: train_set.len(),
        eval_windows: eval.len(),
        rows,
        baselines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use rand::{Rng, SeedableRng};

    fn turning_window(cfg: &PredictorConfig) -> Window {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = cfg.history_len;
        let state = |k: usize| ViewportState {
            position: Vec3::new(0.02 * k as f64, 0.01 * k as f64, 1.6),
            orientation: EulerAngles::new(2.0 * k as f64, 1.0, 0.0),
        };
        let history: Vec<_> = (0..n).map(state).collect();
        Window {
            user_id: "u".into(),
            video_id: "v".into(),
            gaze: history
                .iter()
                .map(|h| crate::GlobalGaze { origin: h.position, direction: h.forward(EulerOrder::default()) })
                .collect(),
            history,
            scene: (0..cfg.scene_points)
                .map(|_| Vec3::new(rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.5)))
                .collect(),
            target: (n..n + cfg.horizon).map(state).collect(),
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = 3;
        let last = ViewportState { position: Vec3::new(0.1, 0.2, 1.6), orientation: EulerAngles::new(10.0, 5.0, 0.0) };
        let lf = last.forward(EulerOrder::default());
        let target: Vec<_> = (0..t)
            .map(|j| ViewportState {
                position: Vec3::new(0.3 * j as f64, 0.1, 1.5),
                orientation: EulerAngles::new(20.0 + j as f64, -4.0, 0.0),
            })
            .collect();
        let d = Tensor::from_vec(t, 6, (0..6 * t).map(|_| rng.gen_range(-0.3..0.3)).collect());
        let (_, g) = trajectory_loss(&d, &last, lf, &target, 0.1);
        let h = 1e-7;
        for e in 0..d.len() {
            let mut p = d.clone();
            p.data[e] += h;
            let mut m = d.clone();
            m.data[e] -= h;
            let num = (trajectory_loss(&p, &last, lf, &target, 0.1).0 - trajectory_loss(&m, &last, lf, &target, 0.1).0) / (2.0 * h);
            let err = (g.data[e] - num).abs() / g.data[e].abs().max(num.abs()).max(1e-6);
            assert!(err < 1e-4, "elem {e}: {} vs {num}", g.data[e]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let cfg = PredictorConfig { learning_rate: 0.0, epochs: 5, ..PredictorConfig::tiny() };
        let out = train(&[turning_window(&cfg)], &cfg).unwrap();
        assert!(out.losses.iter().all(|&l| l == out.losses[0]));
        assert!(matches!(train(&[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn training_is_deterministic_and_thread_independent() {
        let cfg = PredictorConfig { epochs: 8, ..PredictorConfig::tiny() };
        let data = vec![turning_window(&cfg), turning_window(&PredictorConfig { seed: 3, ..cfg.clone() })];
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        let c = train_with(&data, &cfg, true).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model, b.model);
        assert_eq!(a.losses, c.losses);
        assert_eq!(a.model, c.model);
    }

    #[test]
    fn overfits_a_single_trajectory() {
        let cfg = PredictorConfig { epochs: 500, learning_rate: 1e-2, ..PredictorConfig::tiny() };
        let out = train(&[turning_window(&cfg)], &cfg).unwrap();
        let best = out.losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "best loss {best}, first {}", out.losses[0]);
    }

    #[test]
    fn diverging_run_reports_diagnostics() {
        let cfg = PredictorConfig { learning_rate: 1e300, epochs: 4, lr_schedule: LrSchedule::Constant, ..PredictorConfig::tiny() };
        match train(&[turning_window(&cfg)], &cfg) {
            Err(Error::NonFiniteLoss { diagnostics, .. }) => assert!(!diagnostics.is_empty()),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn ablation_report_has_four_rows() {
        let cfg = PredictorConfig { epochs: 3, ..PredictorConfig::tiny() };
        let w = turning_window(&cfg);
        let r = ablate(std::slice::from_ref(&w), &[], &cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0].variant, "full");
        assert_eq!(r.evaluated_on, "training");
        assert!(r.rows.iter().all(|x| x.maea_deg.is_finite()));
        let full = train(std::slice::from_ref(&w), &cfg).unwrap();
        assert_eq!(r.rows[0].final_loss, *full.losses.last().unwrap());
        assert_eq!(r.to_csv().lines().count(), 1 + 4 + 3);
    }
}
