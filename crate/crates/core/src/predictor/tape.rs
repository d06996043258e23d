//! Reverse-mode automatic differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of every node.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, o: &Tensor) -> Tensor {
        assert_eq!(self.cols, o.rows, "matmul {}x{} by {}x{}", self.rows, self.cols, o.rows, o.cols);
        let mut out = Tensor::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * o.cols..(i + 1) * o.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &o.data[k * o.cols..(k + 1) * o.cols];
                for (c, b) in orow.iter_mut().zip(brow) {
                    *c += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleVar(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    GatherRows(Var, Vec<usize>),
    SegmentMax { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    RepeatRow(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape");
        let mut v = x.clone();
        v.add_assign(y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, b) = (self.value(a), self.value(r));
        assert_eq!((b.rows, b.cols), (1, x.cols), "add_row shape");
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols.max(1)) {
            for (o, bb) in row.iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(v, Op::AddRow(a, r))
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, g) = (self.value(a), self.value(r));
        assert_eq!((g.rows, g.cols), (1, x.cols), "mul_row shape");
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols.max(1)) {
            for (o, gg) in row.iter_mut().zip(&g.data) {
                *o *= gg;
            }
        }
        self.push(v, Op::MulRow(a, r))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        self.push(v, Op::Scale(a, c))
    }

    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn scale_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!((sv.rows, sv.cols), (1, 1), "scale_var expects a scalar");
        let c = sv.data[0];
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        self.push(v, Op::ScaleVar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let t = self.value(*p);
                assert_eq!(t.rows, rows, "concat_cols row count");
                v.data[r * cols + c0..r * cols + c0 + t.cols].copy_from_slice(t.row(r));
                c0 += t.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.cols, cols, "concat_rows column count");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            v.data[r * len..(r + 1) * len].copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row-wise softmax; masked-out entries (`mask[i] == false`) get weight 0.
    /// Every row must keep at least one entry.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..x.rows {
            let keep = |c: usize| mask.is_none_or(|m| m[r * x.cols + c]);
            let max = (0..x.cols).filter(|&c| keep(c)).map(|c| x.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY || x.cols == 0, "softmax row {r} fully masked");
            let mut sum = 0.0;
            for c in 0..x.cols {
                let e = if keep(c) { (x.get(r, c) - max).exp() } else { 0.0 };
                v.data[r * x.cols + c] = e;
                sum += e;
            }
            for c in 0..x.cols {
                v.data[r * x.cols + c] /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..x.cols {
                v.data[r * x.cols + c] = (row[c] - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm { x: a, inv_std })
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::from_vec(idx.len(), x.cols, data);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Column-wise max over consecutive row segments of the given lengths.
    pub fn segment_max(&mut self, a: Var, lengths: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(lengths.iter().sum::<usize>(), x.rows, "segments must cover all rows");
        let mut v = Tensor::zeros(lengths.len(), x.cols);
        let mut argmax = vec![0; lengths.len() * x.cols];
        let mut start = 0;
        for (s, &len) in lengths.iter().enumerate() {
            assert!(len > 0, "empty segment");
            for c in 0..x.cols {
                let mut best = start;
                for r in start + 1..start + len {
                    if x.get(r, c) > x.get(best, c) {
                        best = r;
                    }
                }
                v.data[s * x.cols + c] = x.get(best, c);
                argmax[s * x.cols + c] = best;
            }
            start += len;
        }
        self.push(v, Op::SegmentMax { x: a, argmax })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.col_sums();
        let n = x.rows as f64;
        v.data.iter_mut().for_each(|y| *y /= n);
        self.push(v, Op::MeanRows(a))
    }

    pub fn repeat_row(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, 1, "repeat_row expects a row vector");
        let v = Tensor::from_vec(n, x.cols, x.data.repeat(n));
        self.push(v, Op::RepeatRow(a))
    }

    /// Gradients of `Σ seed ⊙ output` with respect to every node.
    pub fn backward(&self, output: Var, seed: Tensor) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let out = self.value(output);
        assert_eq!((seed.rows, seed.cols), (out.rows, out.cols), "seed shape");
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, d: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(&y.transpose()));
                acc(*b, x.transpose().matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, g.col_sums());
            }
            Op::MulRow(a, r) => {
                let (x, w) = (self.value(*a), self.value(*r));
                let mut da = g.clone();
                let mut dw = Tensor::zeros(1, w.cols);
                for row in 0..g.rows {
                    for c in 0..g.cols {
                        da.data[row * g.cols + c] *= w.data[c];
                        dw.data[c] += g.get(row, c) * x.get(row, c);
                    }
                }
                acc(*a, da);
                acc(*r, dw);
            }
            Op::Scale(a, c) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|y| *y *= c);
                acc(*a, d);
            }
            Op::ScaleVar(a, s) => {
                let (x, c) = (self.value(*a), self.value(*s).data[0]);
                let ds: f64 = g.data.iter().zip(&x.data).map(|(p, q)| p * q).sum();
                let mut d = g.clone();
                d.data.iter_mut().for_each(|y| *y *= c);
                acc(*a, d);
                acc(*s, Tensor::from_vec(1, 1, vec![ds]));
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (y, x) in d.data.iter_mut().zip(&self.value(*a).data) {
                    if *x <= 0.0 {
                        *y = 0.0;
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    let mut d = Tensor::zeros(g.rows, w);
                    for r in 0..g.rows {
                        d.data[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[c0..c0 + w]);
                    }
                    acc(*p, d);
                    c0 += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for p in parts {
                    let t = self.value(*p);
                    let d = Tensor::from_vec(
                        t.rows,
                        t.cols,
                        g.data[r0 * g.cols..(r0 + t.rows) * g.cols].to_vec(),
                    );
                    acc(*p, d);
                    r0 += t.rows;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for r in 0..g.rows {
                    d.data[r * x.cols + start..r * x.cols + start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = y.cols as f64;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let gm = g.row(r).iter().sum::<f64>() / n;
                    let gy = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum::<f64>() / n;
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = inv_std[r] * (g.get(r, c) - gm - y.get(r, c) * gy);
                    }
                }
                acc(*x, d);
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for (k, &src) in idx.iter().enumerate() {
                    for c in 0..x.cols {
                        d.data[src * x.cols + c] += g.get(k, c);
                    }
                }
                acc(*a, d);
            }
            Op::SegmentMax { x, argmax } => {
                let t = self.value(*x);
                let mut d = Tensor::zeros(t.rows, t.cols);
                for s in 0..g.rows {
                    for c in 0..g.cols {
                        d.data[argmax[s * g.cols + c] * t.cols + c] += g.get(s, c);
                    }
                }
                acc(*x, d);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows as f64;
                let row: Vec<f64> = g.data.iter().map(|y| y / n).collect();
                acc(*a, Tensor::from_vec(x.rows, x.cols, row.repeat(x.rows)));
            }
            Op::RepeatRow(a) => acc(*a, g.col_sums()),
        }
    }
}
