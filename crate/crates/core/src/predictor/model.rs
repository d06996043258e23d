//! Parameters and forward graph of the viewport predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::dataset::Window;
use super::tape::{Tape, Tensor, Var};
use super::{PredictorConfig, ViewportState, ViewportTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, orientation_from_forward, EulerOrder, GlobalGaze, Vec3, ANGLE_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zero,
    One,
    Const(f64),
}

/// Named parameter tensors in a fixed (sorted) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Largest absolute parameter value.
    pub fn max_abs(&self) -> f64 {
        self.tensors.values().flat_map(|t| t.data.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Replaces every tensor with uniform noise in ±`scale`; used to probe
    /// gradients away from the zero-initialised output layer.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        for (name, t) in self.tensors.iter_mut() {
            let mut rng = name_rng(seed ^ 0x5eed, name);
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
    }
}

pub(crate) fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

fn layout(cfg: &PredictorConfig) -> Vec<(String, usize, usize, Init)> {
    let d = cfg.embed_dim;
    let f = cfg.ablation;
    let mut v: Vec<(String, usize, usize, Init)> = Vec::new();
    let mut add = |name: String, r: usize, c: usize, init: Init| v.push((name, r, c, init));
    let linear = |add: &mut dyn FnMut(String, usize, usize, Init), p: &str, i: usize, o: usize| {
        add(format!("{p}.w"), i, o, Init::Xavier);
        add(format!("{p}.b"), 1, o, Init::Zero);
    };
    if !f.no_point_encoder {
        linear(&mut add, "enc.l0", 3, d);
        for l in 1..=cfg.sa_levels {
            linear(&mut add, &format!("enc.sa{l}"), d + 3, d);
        }
        linear(&mut add, "enc.fp", (cfg.sa_levels + 1) * d, d);
        linear(&mut add, "enc.out", d, d);
    }
    if f.no_gaze {
        add("gaze.constant".into(), 1, d, Init::Xavier);
    } else {
        add("gaze.fallback".into(), 1, d, Init::Xavier);
        linear(&mut add, "gaze.proj", d, d);
    }
    linear(&mut add, "embed", 6, d);
    let attention = |add: &mut dyn FnMut(String, usize, usize, Init), p: &str| {
        for m in ["q", "k", "v", "o"] {
            add(format!("{p}.{m}"), d, d, Init::Xavier);
        }
    };
    attention(&mut add, "ctx");
    if !f.no_cross_modal {
        for i in 0..cfg.fusion_layers {
            for blk in ["scene", "gaze", "view"] {
                let p = format!("fuse{i}.{blk}");
                attention(&mut add, &p);
                add(format!("{p}.ln.gamma"), 1, d, Init::One);
                add(format!("{p}.ln.beta"), 1, d, Init::Zero);
            }
        }
    }
    add("head.pe_scale".into(), 1, 1, Init::Const(1.0));
    linear(&mut add, "head.hidden", 4 * d, cfg.head_hidden);
    add("head.out.w".into(), cfg.head_hidden, 6, Init::Zero);
    add("head.out.b".into(), 1, 6, Init::Zero);
    v
}

impl ParamStore {
    /// Initialises every tensor from a stream keyed by `(seed, name)`, so
    /// tensors shared between ablation variants start identical.
    pub fn init(cfg: &PredictorConfig) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, r, c, init) in layout(cfg) {
            let data = match init {
                Init::Zero => vec![0.0; r * c],
                Init::One => vec![1.0; r * c],
                Init::Const(x) => vec![x; r * c],
                Init::Xavier => {
                    let mut rng = name_rng(cfg.seed, &name);
                    let lim = (6.0 / (r + c) as f64).sqrt();
                    (0..r * c).map(|_| rng.gen_range(-lim..lim)).collect()
                }
            };
            tensors.insert(name, Tensor::from_vec(r, c, data));
        }
        Self { tensors }
    }

    /// Checks that names and shapes match what `cfg` declares.
    pub fn check_layout(&self, cfg: &PredictorConfig) -> Result<()> {
        let want = layout(cfg);
        if want.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                want.len(),
                self.tensors.len()
            )));
        }
        for (name, r, c, _) in want {
            match self.tensors.get(&name) {
                Some(t) if t.rows == r && t.cols == c => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: expected {r}x{c}, found {}x{}",
                        t.rows, t.cols
                    )))
                }
                None => return Err(Error::ShapeMismatch(format!("missing tensor {name}"))),
            }
        }
        Ok(())
    }
}

/// Parameters placed on a tape as leaves.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, p: &ParamStore) -> Self {
        let vars = p.tensors.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Which scene point each history step attends to with its gaze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazePick {
    /// Nearest point (by angle) to the recorded gaze ray.
    Gaze(usize),
    /// No point in the gaze cone; nearest point to the headset forward ray.
    HeadsetForward(usize),
    /// Neither cone holds a point; the learned fallback feature is used.
    Fallback,
}

impl GazePick {
    pub fn index(self) -> Option<usize> {
        match self {
            GazePick::Gaze(i) | GazePick::HeadsetForward(i) => Some(i),
            GazePick::Fallback => None,
        }
    }
}

/// Index of the point with the smallest angle to the ray inside the cone;
/// ties go to the lexicographically smallest point.
pub fn nearest_in_cone(ray: &GlobalGaze, points: &[Vec3], half_deg: f64) -> Option<usize> {
    let lim = half_deg.to_radians() + ANGLE_EPS;
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let v = *p - ray.origin;
        if v == Vec3::ZERO {
            continue;
        }
        let a = angle_between(v, ray.direction);
        if a > lim {
            continue;
        }
        let better = match best {
            None => true,
            Some((ba, bi)) => a < ba || (a == ba && points[i].lex_cmp(&points[bi]) == Ordering::Less),
        };
        if better {
            best = Some((a, i));
        }
    }
    best.map(|(_, i)| i)
}

pub fn select_gaze_points(
    history: &[ViewportState],
    gaze: &[GlobalGaze],
    points: &[Vec3],
    half_deg: f64,
) -> Vec<GazePick> {
    let order = EulerOrder::default();
    history
        .iter()
        .zip(gaze)
        .map(|(h, g)| {
            if let Some(i) = nearest_in_cone(g, points, half_deg) {
                return GazePick::Gaze(i);
            }
            let head = GlobalGaze { origin: h.position, direction: h.forward(order) };
            match nearest_in_cone(&head, points, half_deg) {
                Some(i) => GazePick::HeadsetForward(i),
                None => GazePick::Fallback,
            }
        })
        .collect()
}

/// Set-abstraction level over the previous level's points.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLevel {
    /// Indices into the previous level's point list.
    pub centroids: Vec<usize>,
    /// Flattened group members (previous-level indices), group by group.
    pub members: Vec<usize>,
    pub group_lengths: Vec<usize>,
    /// `member − centroid` coordinates, one row per member.
    pub offsets: Tensor,
    /// For every input point, the index of its nearest centroid of this level.
    pub nearest: Vec<usize>,
}

fn by_distance_then_lex(points: &[Vec3], from: Vec3) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        let da = (points[a] - from).norm();
        let db = (points[b] - from).norm();
        da.total_cmp(&db).then(points[a].lex_cmp(&points[b])).then(a.cmp(&b))
    }
}

/// Farthest-point sampling starting at the lexicographically smallest point;
/// distance ties go to the lexicographically smallest candidate.
pub fn farthest_point_sampling(points: &[Vec3], k: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let lex_better = |a: usize, b: usize| points[a].lex_cmp(&points[b]).then(a.cmp(&b)) == Ordering::Less;
    let mut first = 0;
    for i in 1..points.len() {
        if lex_better(i, first) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| (*p - points[first]).norm()).collect();
    while chosen.len() < k.min(points.len()) {
        let mut best = 0;
        for i in 1..points.len() {
            if dist[i] > dist[best] || (dist[i] == dist[best] && lex_better(i, best)) {
                best = i;
            }
        }
        chosen.push(best);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min((*p - points[best]).norm());
        }
    }
    chosen
}

/// Builds the sampling/grouping structure of every set-abstraction level.
pub fn build_levels(points: &[Vec3], cfg: &PredictorConfig) -> Result<Vec<SaLevel>> {
    if points.len() < cfg.group_size {
        return Err(Error::TooFewPoints { needed: cfg.group_size, got: points.len() });
    }
    let mut levels = Vec::new();
    let mut coords: Vec<Vec3> = points.to_vec();
    let mut radius = cfg.sa_radius;
    for _ in 0..cfg.sa_levels {
        let m = coords.len().div_ceil(4).max(1);
        let centroids = farthest_point_sampling(&coords, m);
        let mut members = Vec::new();
        let mut group_lengths = Vec::new();
        let mut offsets = Vec::new();
        for &c in &centroids {
            let mut near: Vec<usize> =
                (0..coords.len()).filter(|&i| (coords[i] - coords[c]).norm() <= radius).collect();
            near.sort_by(by_distance_then_lex(&coords, coords[c]));
            near.truncate(cfg.group_size);
            group_lengths.push(near.len());
            for &i in &near {
                offsets.extend((coords[i] - coords[c]).to_array());
            }
            members.extend(near);
        }
        let centroid_pts: Vec<Vec3> = centroids.iter().map(|&c| coords[c]).collect();
        let nearest = points
            .iter()
            .map(|p| {
                let idx: Vec<usize> = (0..centroid_pts.len()).collect();
                *idx.iter().min_by(|a, b| by_distance_then_lex(&centroid_pts, *p)(a, b)).expect("centroids")
            })
            .collect();
        let rows = members.len();
        levels.push(SaLevel {
            centroids,
            members,
            group_lengths,
            offsets: Tensor::from_vec(rows, 3, offsets),
            nearest,
        });
        coords = centroid_pts;
        radius *= 2.0;
    }
    Ok(levels)
}

/// Window quantities that do not depend on parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Scene points relative to the last observed position.
    pub points: Tensor,
    pub levels: Vec<SaLevel>,
    /// Per-step `[position − last position, forward]`.
    pub viewport: Tensor,
    pub picks: Vec<GazePick>,
    /// `n × P` mask of points inside each step's viewport cone.
    pub context_mask: Vec<bool>,
    pub last: ViewportState,
    pub last_forward: Vec3,
}

pub fn viewport_features(history: &[ViewportState]) -> Tensor {
    let order = EulerOrder::default();
    let last = history.last().map(|s| s.position).unwrap_or(Vec3::ZERO);
    let rows: Vec<Vec<f64>> = history
        .iter()
        .map(|s| {
            let p = s.position - last;
            let f = s.forward(order);
            vec![p.x, p.y, p.z, f.x, f.y, f.z]
        })
        .collect();
    Tensor::from_rows(&rows)
}

pub fn prepare(w: &Window, cfg: &PredictorConfig) -> Result<Prepared> {
    let n = cfg.history_len;
    if w.history.len() != n || w.gaze.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "window has {} states and {} gaze rays, expected {n}",
            w.history.len(),
            w.gaze.len()
        )));
    }
    if !w.history.iter().all(ViewportState::is_finite) {
        return Err(Error::ShapeMismatch("window contains non-finite states".into()));
    }
    let last = *w.last();
    let rel: Vec<Vec3> = w.scene.iter().map(|p| *p - last.position).collect();
    let levels = if cfg.ablation.no_point_encoder {
        if w.scene.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        Vec::new()
    } else {
        build_levels(&rel, cfg)?
    };
    let order = EulerOrder::default();
    let mut context_mask = Vec::with_capacity(n * rel.len());
    for h in &w.history {
        let ray = GlobalGaze { origin: h.position, direction: h.forward(order) };
        let row: Vec<bool> = w
            .scene
            .iter()
            .map(|p| {
                let v = *p - ray.origin;
                v != Vec3::ZERO && angle_between(v, ray.direction) <= cfg.half_angle_deg.to_radians() + ANGLE_EPS
            })
            .collect();
        if row.iter().any(|&b| b) {
            context_mask.extend(row);
        } else {
            context_mask.extend(std::iter::repeat_n(true, rel.len()));
        }
    }
    let flat: Vec<f64> = rel.iter().flat_map(|p| p.to_array()).collect();
    Ok(Prepared {
        points: Tensor::from_vec(rel.len(), 3, flat),
        levels,
        viewport: viewport_features(&w.history),
        picks: select_gaze_points(&w.history, &w.gaze, &w.scene, cfg.half_angle_deg),
        context_mask,
        last,
        last_forward: last.forward(order),
    })
}

/// Sinusoidal encodings of output positions `1..=t`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(t, d);
    for j in 0..t {
        let pos = (j + 1) as f64;
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            pe.data[j * d + i] = if i % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
        }
    }
    pe
}

/// Graph builders for each block; all take and return tape variables.
pub struct Graph<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a Bound,
    pub cfg: &'a PredictorConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub per_point: Var,
    pub global: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub viewport_gaze: Var,
    pub gaze_viewport: Var,
}

impl Graph<'_> {
    fn p(&self, name: &str) -> Var {
        self.params.get(name)
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn linear_relu(&mut self, x: Var, prefix: &str) -> Var {
        let y = self.linear(x, prefix);
        self.tape.relu(y)
    }

    pub fn encode_scene(&mut self, points: Var, levels: &[SaLevel]) -> EncoderVars {
        let h0 = self.linear_relu(points, "enc.l0");
        let mut prev = h0;
        let mut level_feats = Vec::new();
        for (l, lvl) in levels.iter().enumerate() {
            let grouped = self.tape.gather_rows(prev, &lvl.members);
            let off = self.tape.leaf(lvl.offsets.clone());
            let input = self.tape.concat_cols(&[grouped, off]);
            let z = self.linear_relu(input, &format!("enc.sa{}", l + 1));
            let g = self.tape.segment_max(z, &lvl.group_lengths);
            level_feats.push(g);
            prev = g;
        }
        let mut parts = vec![h0];
        for (g, lvl) in level_feats.iter().zip(levels) {
            parts.push(self.tape.gather_rows(*g, &lvl.nearest));
        }
        let cat = self.tape.concat_cols(&parts);
        let per_point = self.linear_relu(cat, "enc.fp");
        let top = self.linear_relu(per_point, "enc.out");
        let rows = self.tape.value(top).rows;
        let global = self.tape.segment_max(top, &[rows]);
        EncoderVars { per_point, global }
    }

    /// Raw-coordinate stand-in for the encoder: coordinates and their
    /// mean/std/min/max, zero-padded to the embedding width.
    pub fn raw_scene(&mut self, points: &Tensor) -> EncoderVars {
        let d = self.cfg.embed_dim;
        let n = points.rows as f64;
        let mut per = Tensor::zeros(points.rows, d);
        for r in 0..points.rows {
            per.data[r * d..r * d + 3].copy_from_slice(points.row(r));
        }
        let mut g = vec![0.0; d];
        for c in 0..3 {
            let col: Vec<f64> = (0..points.rows).map(|r| points.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            g[c] = mean;
            g[3 + c] = var.sqrt();
            g[6 + c] = col.iter().copied().fold(f64::INFINITY, f64::min);
            g[9 + c] = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        EncoderVars { per_point: self.tape.leaf(per), global: self.tape.leaf(Tensor::row_vector(g)) }
    }

    pub fn gaze_feature(&mut self, per_point: Var, picks: &[GazePick]) -> Var {
        let n = picks.len();
        if self.cfg.ablation.no_gaze {
            let c = self.p("gaze.constant");
            return self.tape.repeat_row(c, n);
        }
        let fallback = self.p("gaze.fallback");
        let rows = self.tape.value(per_point).rows;
        let table = self.tape.concat_rows(&[per_point, fallback]);
        let idx: Vec<usize> = picks.iter().map(|p| p.index().unwrap_or(rows)).collect();
        let gathered = self.tape.gather_rows(table, &idx);
        self.linear(gathered, "gaze.proj")
    }

    pub fn embed_viewport(&mut self, features: Var) -> Var {
        self.linear(features, "embed")
    }

    /// Multi-head attention of `query` rows over `kv` rows.
    pub fn attention(&mut self, prefix: &str, query: Var, kv: Var, mask: Option<&[bool]>) -> Var {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let wq = self.p(&format!("{prefix}.q"));
        let wk = self.p(&format!("{prefix}.k"));
        let wv = self.p(&format!("{prefix}.v"));
        let wo = self.p(&format!("{prefix}.o"));
        let q = self.tape.matmul(query, wq);
        let k = self.tape.matmul(kv, wk);
        let v = self.tape.matmul(kv, wv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let kt = self.tape.transpose(kh);
            let s = self.tape.matmul(qh, kt);
            let s = self.tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = self.tape.softmax_rows(s, mask);
            outs.push(self.tape.matmul(a, vh));
        }
        let cat = self.tape.concat_cols(&outs);
        self.tape.matmul(cat, wo)
    }

    fn add_norm(&mut self, residual: Var, update: Var, prefix: &str) -> Var {
        let s = self.tape.add(residual, update);
        let n = self.tape.layer_norm(s);
        let g = self.p(&format!("{prefix}.ln.gamma"));
        let b = self.p(&format!("{prefix}.ln.beta"));
        let y = self.tape.mul_row(n, g);
        self.tape.add_row(y, b)
    }

    pub fn scene_context(&mut self, f_m: Var, per_point: Var, mask: &[bool]) -> Var {
        self.attention("ctx", f_m, per_point, Some(mask))
    }

    /// One bidirectional fusion layer.
    pub fn fuse_layer(&mut self, layer: usize, f_m: Var, f_mv: Var, f_g: Var) -> FusionVars {
        let p = format!("fuse{layer}");
        let a = self.attention(&format!("{p}.scene"), f_mv, f_m, None);
        let f_ms = self.add_norm(f_m, a, &format!("{p}.scene"));
        let b = self.attention(&format!("{p}.gaze"), f_ms, f_g, None);
        let f_mg = self.add_norm(f_ms, b, &format!("{p}.gaze"));
        let c = self.attention(&format!("{p}.view"), f_m, f_g, None);
        let f_gm = self.add_norm(f_g, c, &format!("{p}.view"));
        FusionVars { viewport_gaze: f_mg, gaze_viewport: f_gm }
    }

    pub fn cross_modal_fuse(&mut self, f_m: Var, f_mv: Var, f_g: Var) -> FusionVars {
        if self.cfg.ablation.no_cross_modal {
            let viewport_gaze = self.tape.add(f_m, f_mv);
            return FusionVars { viewport_gaze, gaze_viewport: f_g };
        }
        let (mut m, mut g) = (f_m, f_g);
        for layer in 0..self.cfg.fusion_layers {
            let out = self.fuse_layer(layer, m, f_mv, g);
            m = out.viewport_gaze;
            g = out.gaze_viewport;
        }
        FusionVars { viewport_gaze: m, gaze_viewport: g }
    }

    /// `t × 6` deltas (position, forward) from the pooled fused features.
    pub fn predict_head(&mut self, fused: FusionVars, global: Var, horizon: usize) -> Var {
        let n = self.tape.value(fused.viewport_gaze).rows;
        let go = self.tape.repeat_row(global, n);
        let cat = self.tape.concat_cols(&[fused.gaze_viewport, fused.viewport_gaze, go]);
        let pooled = self.tape.mean_rows(cat);
        let rep = self.tape.repeat_row(pooled, horizon);
        let pe = self.tape.leaf(positional_encoding(horizon, self.cfg.embed_dim));
        let scale = self.p("head.pe_scale");
        let h_pos = self.tape.scale_var(pe, scale);
        let x = self.tape.concat_cols(&[rep, h_pos]);
        let h = self.linear_relu(x, "head.hidden");
        self.linear(h, "head.out")
    }

    pub fn forward(&mut self, prep: &Prepared) -> Var {
        let enc = if self.cfg.ablation.no_point_encoder {
            self.raw_scene(&prep.points)
        } else {
            let pts = self.tape.leaf(prep.points.clone());
            self.encode_scene(pts, &prep.levels)
        };
        let vf = self.tape.leaf(prep.viewport.clone());
        let f_m = self.embed_viewport(vf);
        let f_g = self.gaze_feature(enc.per_point, &prep.picks);
        let f_mv = self.scene_context(f_m, enc.per_point, &prep.context_mask);
        let fused = self.cross_modal_fuse(f_m, f_mv, f_g);
        self.predict_head(fused, enc.global, self.cfg.horizon)
    }
}

/// Applies `t × 6` deltas to the last observed state.
pub fn decode(prep: &Prepared, deltas: &Tensor, rate_hz: f64) -> ViewportTrajectory {
    let order = EulerOrder::default();
    let states = (0..deltas.rows)
        .map(|j| {
            let r = deltas.row(j);
            let position = prep.last.position + Vec3::new(r[0], r[1], r[2]);
            let orientation = if r[3] == 0.0 && r[4] == 0.0 && r[5] == 0.0 {
                prep.last.orientation
            } else {
                let f = prep.last_forward + Vec3::new(r[3], r[4], r[5]);
                match f.normalized() {
                    Some(f) => orientation_from_forward(f, prep.last.orientation.roll, order),
                    None => prep.last.orientation,
                }
            };
            ViewportState { position, orientation }
        })
        .collect();
    ViewportTrajectory::new(rate_hz, states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoding {
    pub per_point: Tensor,
    pub global: Tensor,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        let params = ParamStore::init(&cfg);
        Ok(Self { cfg, params })
    }

    pub fn from_parts(cfg: PredictorConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        params.check_layout(&cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn encode_scene(&self, points: &[Vec3]) -> Result<SceneEncoding> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let mut g = Graph { tape: &mut tape, params: &bound, cfg: &self.cfg };
        let flat: Vec<f64> = points.iter().flat_map(|p| p.to_array()).collect();
        let t = Tensor::from_vec(points.len(), 3, flat);
        let enc = if self.cfg.ablation.no_point_encoder {
            g.raw_scene(&t)
        } else {
            let levels = build_levels(points, &self.cfg)?;
            let v = g.tape.leaf(t);
            g.encode_scene(v, &levels)
        };
        Ok(SceneEncoding { per_point: tape.value(enc.per_point).clone(), global: tape.value(enc.global).clone() })
    }

    /// Raw `t × 6` head output for a prepared window.
    pub fn deltas(&self, prep: &Prepared) -> Tensor {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let out = Graph { tape: &mut tape, params: &bound, cfg: &self.cfg }.forward(prep);
        tape.value(out).clone()
    }

    pub fn predict(&self, w: &Window) -> Result<ViewportTrajectory> {
        let prep = prepare(w, &self.cfg)?;
        Ok(decode(&prep, &self.deltas(&prep), self.cfg.rate_hz))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tape::tests::random;
    use super::super::AblationFlags;
    use super::*;
    use crate::geometry::EulerAngles;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn toy_window(cfg: &PredictorConfig, seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history: Vec<ViewportState> = (0..cfg.history_len)
            .map(|k| ViewportState {
                position: Vec3::new(0.05 * k as f64, rng.gen_range(-0.1..0.1), 1.6),
                orientation: EulerAngles::new(rng.gen_range(-20.0..20.0), rng.gen_range(-10.0..10.0), 0.0),
            })
            .collect();
        let gaze = history
            .iter()
            .map(|h| GlobalGaze { origin: h.position, direction: h.forward(EulerOrder::default()) })
            .collect();
        let scene = (0..cfg.scene_points)
            .map(|_| Vec3::new(rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.5)))
            .collect();
        let target = (0..cfg.horizon)
            .map(|j| ViewportState {
                position: Vec3::new(0.05 * (cfg.history_len + j) as f64, 0.0, 1.6),
                orientation: EulerAngles::new(5.0 * j as f64, 0.0, 0.0),
            })
            .collect();
        Window { user_id: "u".into(), video_id: "v".into(), history, gaze, scene, target }
    }

    fn grad_check_model(cfg: PredictorConfig) {
        let model = {
            let mut m = Predictor::new(cfg.clone()).unwrap();
            m.params.randomize(3, 0.5);
            m
        };
        let prep = prepare(&toy_window(&cfg, 5), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = random(&mut rng, cfg.horizon, 6);
        let probe = |p: &ParamStore| {
            let d = Predictor { cfg: cfg.clone(), params: p.clone() }.deltas(&prep);
            d.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &model.params);
        let out = Graph { tape: &mut tape, params: &bound, cfg: &cfg }.forward(&prep);
        let grads = tape.backward(out, w.clone());
        let h = 1e-6;
        for (name, var) in bound.iter() {
            let t = &model.params.tensors[name];
            let g = grads[var.0].clone().unwrap_or(Tensor::zeros(t.rows, t.cols));
            let step = (t.len() / 7).max(1);
            for e in (0..t.len()).step_by(step) {
                let mut plus = model.params.clone();
                plus.tensors.get_mut(name).unwrap().data[e] += h;
                let mut minus = model.params.clone();
                minus.tensors.get_mut(name).unwrap().data[e] -= h;
                let numeric = (probe(&plus) - probe(&minus)) / (2.0 * h);
                let a = g.data[e];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                assert!(err < 1e-4, "{} {name}[{e}]: analytic {a} numeric {numeric}", cfg.ablation.name());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_block() {
        for flags in AblationFlags::report_variants() {
            grad_check_model(PredictorConfig { ablation: flags, ..PredictorConfig::tiny() });
        }
    }

    #[test]
    fn zero_head_is_exact_persistence() {
        let cfg = PredictorConfig::tiny();
        let w = toy_window(&cfg, 1);
        let p = Predictor::new(cfg.clone()).unwrap().predict(&w).unwrap();
        assert_eq!(p.len(), cfg.horizon);
        assert!(p.states.iter().all(|s| s == w.last()));
    }

    #[test]
    fn shorter_horizon_is_a_prefix() {
        let cfg = PredictorConfig::tiny();
        let mut m = Predictor::new(cfg.clone()).unwrap();
        m.params.randomize(8, 0.3);
        let w = toy_window(&cfg, 2);
        let long = m.predict(&w).unwrap();
        let short = Predictor { cfg: PredictorConfig { horizon: 1, ..cfg }, params: m.params.clone() }
            .predict(&w)
            .unwrap();
        assert_eq!(short.states[0], long.states[0]);
    }

    #[test]
    fn encoder_examples() {
        let cfg = PredictorConfig::tiny();
        let m = Predictor::new(cfg.clone()).unwrap();
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 8];
        let enc = m.encode_scene(&same).unwrap();
        for r in 1..8 {
            assert_eq!(enc.per_point.row(r), enc.per_point.row(0));
        }
        assert!(matches!(m.encode_scene(&same[..3]), Err(Error::TooFewPoints { needed: 4, got: 3 })));

        // global descriptor = column max of relu(F_p W + b)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..256)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let cfg = PredictorConfig { scene_points: 256, ..cfg };
        let m = Predictor::new(cfg).unwrap();
        let enc = m.encode_scene(&pts).unwrap();
        let w = &m.params.tensors["enc.out.w"];
        let b = &m.params.tensors["enc.out.b"];
        let d = w.cols;
        for c in 0..d {
            let mut best = f64::NEG_INFINITY;
            for r in 0..256 {
                let mut s = b.data[c];
                for k in 0..d {
                    s += enc.per_point.get(r, k) * w.get(k, c);
                }
                best = best.max(s.max(0.0));
            }
            assert!((enc.global.data[c] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn gaze_picks_nearest_angle() {
        let pts = vec![Vec3::new(2.0, 0.0, 0.0), Vec3::new(2.0, 0.5, 0.0), Vec3::new(0.0, 3.0, 0.0)];
        let ray = GlobalGaze { origin: Vec3::ZERO, direction: Vec3::new(1.0, 0.2, 0.0).normalized().unwrap() };
        // exhaustive oracle: acos of the normalised dot product
        let oracle = (0..3)
            .map(|i| {
                let v = pts[i].normalized().unwrap();
                (v.dot(ray.direction).clamp(-1.0, 1.0).acos(), i)
            })
            .filter(|(a, _)| a.to_degrees() <= 30.0)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|x| x.1);
        assert_eq!(nearest_in_cone(&ray, &pts, 30.0), oracle);
        assert_eq!(oracle, Some(1));
        let exact = GlobalGaze { origin: Vec3::ZERO, direction: Vec3::Y };
        assert_eq!(nearest_in_cone(&exact, &pts, 30.0), Some(2));

        let h = ViewportState { position: Vec3::ZERO, orientation: EulerAngles::new(180.0, 0.0, 0.0) };
        let away = GlobalGaze { origin: Vec3::ZERO, direction: -Vec3::X };
        assert_eq!(select_gaze_points(&[h], &[away], &pts, 30.0), vec![GazePick::Fallback]);
        let head = ViewportState { orientation: EulerAngles::new(90.0, 0.0, 0.0), ..h };
        assert_eq!(select_gaze_points(&[head], &[away], &pts, 30.0), vec![GazePick::HeadsetForward(2)]);
    }

    #[test]
    fn embed_viewport_is_affine() {
        let cfg = PredictorConfig::tiny();
        let m = Predictor::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, cfg.history_len, 6);
        let run = |x: &Tensor, params: &ParamStore| {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, params);
            let v = tape.leaf(x.clone());
            let out = Graph { tape: &mut tape, params: &bound, cfg: &cfg }.embed_viewport(v);
            tape.value(out).clone()
        };
        assert!(run(&Tensor::zeros(cfg.history_len, 6), &m.params).data.iter().all(|&v| v == 0.0));
        let y = run(&x, &m.params);
        let mut x2 = x.clone();
        x2.data.iter_mut().for_each(|v| *v *= 2.0);
        let y2 = run(&x2, &m.params);
        for (a, b) in y.data.iter().zip(&y2.data) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let oracle = x.matmul(&m.params.tensors["embed.w"]);
        assert_eq!(y.data, oracle.data);
    }

    /// Independent single-head attention: softmax(q k·ᵀ/√d) v, computed row by row.
    fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&[bool]>) -> Tensor {
        let mut out = Tensor::zeros(q.rows, v.cols);
        for i in 0..q.rows {
            let logits: Vec<Option<f64>> = (0..k.rows)
                .map(|j| {
                    if mask.is_some_and(|m| !m[i * k.rows + j]) {
                        return None;
                    }
                    let s: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
                    Some(s / (q.cols as f64).sqrt())
                })
                .collect();
            let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
            let z: f64 = w.iter().sum();
            for j in 0..k.rows {
                for c in 0..v.cols {
                    out.data[i * v.cols + c] += w[j] / z * v.get(j, c);
                }
            }
        }
        out
    }

    fn attend(cfg: &PredictorConfig, params: &ParamStore, q: &Tensor, kv: &Tensor, mask: Option<&[bool]>) -> Tensor {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, params);
        let qv = tape.leaf(q.clone());
        let kvv = tape.leaf(kv.clone());
        let out = Graph { tape: &mut tape, params: &bound, cfg }.attention("ctx", qv, kvv, mask);
        tape.value(out).clone()
    }

    #[test]
    fn scene_context_matches_oracle() {
        let cfg = PredictorConfig { heads: 1, ..PredictorConfig::tiny() };
        let m = Predictor::new(cfg.clone()).unwrap();
        let p = &m.params.tensors;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random(&mut rng, 4, cfg.embed_dim);
        let kv = random(&mut rng, 6, cfg.embed_dim);
        let mask: Vec<bool> = (0..24).map(|i| i % 4 != 2).collect();
        let got = attend(&cfg, &m.params, &q, &kv, Some(&mask));
        let o = attention_oracle(&q.matmul(&p["ctx.q"]), &kv.matmul(&p["ctx.k"]), &kv.matmul(&p["ctx.v"]), Some(&mask))
            .matmul(&p["ctx.o"]);
        for (a, b) in got.data.iter().zip(&o.data) {
            assert!((a - b).abs() < 1e-12);
        }
        // one key: the value row itself, whatever the logits
        let one = random(&mut rng, 1, cfg.embed_dim);
        let got = attend(&cfg, &m.params, &q, &one, None);
        let row = one.matmul(&p["ctx.v"]).matmul(&p["ctx.o"]);
        for r in 0..4 {
            for (a, b) in got.row(r).iter().zip(&row.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // zero query projection: uniform weights, mean of the value rows
        let mut zq = m.params.clone();
        zq.tensors.get_mut("ctx.q").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let got = attend(&cfg, &zq, &q, &kv, None);
        let mean = {
            let vals = kv.matmul(&p["ctx.v"]);
            let mut mrow = vec![0.0; vals.cols];
            for r in 0..vals.rows {
                for c in 0..vals.cols {
                    mrow[c] += vals.get(r, c) / vals.rows as f64;
                }
            }
            Tensor::row_vector(mrow).matmul(&p["ctx.o"])
        };
        for (a, b) in got.row(0).iter().zip(&mean.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_with_zero_gaze_values_is_normalized_residual() {
        let cfg = PredictorConfig::tiny();
        let mut m = Predictor::new(cfg.clone()).unwrap();
        m.params.tensors.get_mut("fuse0.gaze.v").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (fm, fmv) = (random(&mut rng, 4, 12), random(&mut rng, 4, 12));
        let fg = Tensor::zeros(4, 12);
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &m.params);
        let (a, b, c) = (tape.leaf(fm.clone()), tape.leaf(fmv.clone()), tape.leaf(fg));
        let mut g = Graph { tape: &mut tape, params: &bound, cfg: &cfg };
        let out = g.fuse_layer(0, a, b, c);
        // recompute f_{m−s} independently and normalise it
        let p = &m.params.tensors;
        let att = attention_oracle_multi(&fmv, &fm, p, "fuse0.scene", cfg.heads);
        let mut expected = Vec::new();
        for r in 0..4 {
            let s: Vec<f64> = (0..12).map(|c| fm.get(r, c) + att.get(r, c)).collect();
            expected.extend(standardize(&s));
        }
        let first = layer_norm_rows(&Tensor::from_vec(4, 12, expected));
        let got = tape.value(out.viewport_gaze);
        for (x, y) in got.data.iter().zip(&first.data) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    fn standardize(s: &[f64]) -> Vec<f64> {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        s.iter().map(|v| (v - mean) / (var + super::super::tape::LAYER_NORM_EPS).sqrt()).collect()
    }

    fn layer_norm_rows(t: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..t.rows).map(|r| standardize(t.row(r))).collect();
        Tensor::from_rows(&rows)
    }

    fn attention_oracle_multi(q_in: &Tensor, kv: &Tensor, p: &BTreeMap<String, Tensor>, prefix: &str, heads: usize) -> Tensor {
        let q = q_in.matmul(&p[&format!("{prefix}.q")]);
        let k = kv.matmul(&p[&format!("{prefix}.k")]);
        let v = kv.matmul(&p[&format!("{prefix}.v")]);
        let dh = q.cols / heads;
        let cols = |t: &Tensor, h: usize| {
            let rows: Vec<Vec<f64>> = (0..t.rows).map(|r| t.row(r)[h * dh..(h + 1) * dh].to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        let outs: Vec<Tensor> = (0..heads).map(|h| attention_oracle(&cols(&q, h), &cols(&k, h), &cols(&v, h), None)).collect();
        let rows: Vec<Vec<f64>> = (0..q.rows).map(|r| outs.iter().flat_map(|o| o.row(r).to_vec()).collect()).collect();
        Tensor::from_rows(&rows).matmul(&p[&format!("{prefix}.o")])
    }

    #[test]
    fn fusion_matches_attention_oracle() {
        let cfg = PredictorConfig::tiny();
        let mut m = Predictor::new(cfg.clone()).unwrap();
        m.params.randomize(21, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (fm, fmv, fg) = (random(&mut rng, 4, 12), random(&mut rng, 4, 12), random(&mut rng, 4, 12));
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &m.params);
        let (a, b, c) = (tape.leaf(fm.clone()), tape.leaf(fmv.clone()), tape.leaf(fg.clone()));
        let out = Graph { tape: &mut tape, params: &bound, cfg: &cfg }.fuse_layer(0, a, b, c);
        let p = &m.params.tensors;
        let affine = |x: &Tensor, prefix: &str| {
            let n = layer_norm_rows(x);
            let (g, b) = (&p[&format!("{prefix}.ln.gamma")], &p[&format!("{prefix}.ln.beta")]);
            let rows: Vec<Vec<f64>> =
                (0..n.rows).map(|r| (0..n.cols).map(|c| n.get(r, c) * g.data[c] + b.data[c]).collect()).collect();
            Tensor::from_rows(&rows)
        };
        let sum = |x: &Tensor, y: &Tensor| {
            Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect())
        };
        let fms = affine(&sum(&fm, &attention_oracle_multi(&fmv, &fm, p, "fuse0.scene", 2)), "fuse0.scene");
        let fmg = affine(&sum(&fms, &attention_oracle_multi(&fms, &fg, p, "fuse0.gaze", 2)), "fuse0.gaze");
        let fgm = affine(&sum(&fg, &attention_oracle_multi(&fm, &fg, p, "fuse0.view", 2)), "fuse0.view");
        for (x, y) in tape.value(out.viewport_gaze).data.iter().zip(&fmg.data) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in tape.value(out.gaze_viewport).data.iter().zip(&fgm.data) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn parameter_counts_match_formulas() {
        let cfg = PredictorConfig::default();
        let (d, l, f, h) = (cfg.embed_dim, cfg.sa_levels, cfg.fusion_layers, cfg.head_hidden);
        let encoder = (3 * d + d) + l * ((d + 3) * d + d) + ((l + 1) * d * d + d) + (d * d + d);
        let gaze = d + d * d + d;
        let embed = 6 * d + d;
        let ctx = 4 * d * d;
        let fusion = f * 3 * (4 * d * d + 2 * d);
        let head = 1 + 4 * d * h + h + 6 * h + 6;
        let full = encoder + gaze + embed + ctx + fusion + head;
        let count = |flags: AblationFlags| ParamStore::init(&PredictorConfig { ablation: flags, ..cfg.clone() }).count();
        let base = AblationFlags::FULL;
        assert_eq!(count(base), full);
        assert_eq!(count(AblationFlags { no_cross_modal: true, ..base }), full - fusion);
        assert_eq!(count(AblationFlags { no_point_encoder: true, ..base }), full - encoder);
        assert_eq!(count(AblationFlags { no_gaze: true, ..base }), full - gaze + d);
    }

    #[test]
    fn shared_tensors_start_identical_across_variants() {
        let full = ParamStore::init(&PredictorConfig::tiny());
        let ab = ParamStore::init(&PredictorConfig {
            ablation: AblationFlags { no_cross_modal: true, ..AblationFlags::FULL },
            ..PredictorConfig::tiny()
        });
        for (k, t) in &ab.tensors {
            assert_eq!(&full.tensors[k], t);
        }
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec((-2i32..3, -2i32..3, -2i32..3), 8..40)
            .prop_map(|v| v.into_iter().map(|(a, b, c)| Vec3::new(a as f64 * 0.3, b as f64 * 0.3, c as f64 * 0.3)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn encoder_permutation_properties(cloud in arb_cloud(), seed in 0u64..1000) {
            let cfg = PredictorConfig { scene_points: 40, ..PredictorConfig::tiny() };
            let m = Predictor::new(cfg).unwrap();
            let mut perm: Vec<usize> = (0..cloud.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let shuffled: Vec<Vec3> = perm.iter().map(|&i| cloud[i]).collect();
            let a = m.encode_scene(&cloud).unwrap();
            let b = m.encode_scene(&shuffled).unwrap();
            prop_assert_eq!(&a.global.data, &b.global.data);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b.per_point.row(k), a.per_point.row(i));
            }
        }
    }
}
