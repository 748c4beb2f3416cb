//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! Every op appends a node holding its forward value. Shape mismatches are
//! programming errors and panic; a non-finite forward value poisons the
//! graph and is reported by [`Graph::check`] and [`Graph::backward`].

use super::params::{Grads, ParamId, ParamStore};
use super::{Array, DiffError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentLogSoftmax(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Log(Var),
    Abs(Var),
    Sin(Var),
    Cos(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows(Var, Vec<usize>),
    SegmentSumRows(Var, Vec<usize>),
    LayerNorm { x: Var, gamma: Var, beta: Var, normed: Array, inv_std: Vec<f64> },
    MaskedFill(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<DiffError>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn segment_count(seg: &[usize]) -> usize {
    seg.iter().copied().max().map_or(0, |m| m + 1)
}

fn segment_softmax_values(x: &Array, seg: &[usize], log: bool) -> Array {
    let n = segment_count(seg);
    let mut max = vec![f64::NEG_INFINITY; n];
    for (r, &s) in seg.iter().enumerate() {
        max[s] = max[s].max(x.get(r, 0));
    }
    let mut denom = vec![0.0; n];
    for (r, &s) in seg.iter().enumerate() {
        denom[s] += (x.get(r, 0) - max[s]).exp();
    }
    let data = seg
        .iter()
        .enumerate()
        .map(|(r, &s)| {
            let shifted = x.get(r, 0) - max[s];
            if log {
                shifted - denom[s].ln()
            } else {
                shifted.exp() / denom[s]
            }
        })
        .collect();
    Array::col_vector(data)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// First non-finite value produced so far, if any.
    pub fn check(&self) -> Result<(), DiffError> {
        match &self.fault {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Input | Op::Param(_) => true,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(DiffError::NonFinite { op: op_name(&op).to_string(), node: self.nodes.len() });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        use Op::*;
        match op {
            Constant | Input | Param(_) => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | AddRow(a, b) | Mul(a, b) | MulCol(a, b) => vec![*a, *b],
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Scale(a, _) | SliceCols(a, _) | Transpose(a) | SoftmaxRows(a) | LogSoftmaxRows(a)
            | SegmentSoftmax(a, _) | SegmentLogSoftmax(a, _) | LeakyRelu(a, _) | Gelu(a) | Sigmoid(a)
            | Tanh(a) | Softplus(a) | Log(a) | Abs(a) | Sin(a) | Cos(a) | Sum(a) | Mean(a) | RowSum(a)
            | GatherRows(a, _) | SegmentSumRows(a, _) | MaskedFill(a, _) => vec![*a],
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant)
    }

    /// A value whose gradient is retrievable after backward.
    pub fn input(&mut self, value: Array) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), bv.cols(), "add_row width mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Scales row `i` of `a` by `c[i]`, where `c` is an `n × 1` column.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert_eq!(cv.shape(), [av.rows(), 1], "mul_col expects an n x 1 column");
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = cv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        self.push(out, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Array::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Array::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start < end && end <= av.cols(), "slice_cols out of range");
        let mut out = Array::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Splits `a` column-wise into pieces of the given widths.
    pub fn split_cols(&mut self, a: Var, widths: &[usize]) -> Vec<Var> {
        let mut off = 0;
        widths
            .iter()
            .map(|&w| {
                let v = self.slice_cols(a, off, off + w);
                off += w;
                v
            })
            .collect()
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Softmax of an `n × 1` column within groups: row `r` belongs to
    /// group `seg[r]`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Var {
        assert_eq!(self.shape(a), [seg.len(), 1], "segment_softmax expects a column matching seg");
        let v = segment_softmax_values(self.value(a), seg, false);
        self.push(v, Op::SegmentSoftmax(a, seg.to_vec()))
    }

    pub fn segment_log_softmax(&mut self, a: Var, seg: &[usize]) -> Var {
        assert_eq!(self.shape(a), [seg.len(), 1], "segment_log_softmax expects a column matching seg");
        let v = segment_softmax_values(self.value(a), seg, true);
        self.push(v, Op::SegmentLogSoftmax(a, seg.to_vec()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(stable_sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(stable_softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Array::scalar(av.sum() / av.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Sum over each row, giving an `n × 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Array::col_vector((0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        self.push(v, Op::RowSum(a))
    }

    /// Embedding lookup: row `r` of the output is row `idx[r]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Array::zeros(idx.len(), tv.cols());
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < tv.rows(), "gather index {i} out of range {}", tv.rows());
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        self.push(out, Op::GatherRows(table, idx.to_vec()))
    }

    /// Sums rows of `a` into `n` output rows: row `r` goes to `seg[r]`.
    pub fn segment_sum_rows(&mut self, a: Var, seg: &[usize], n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), seg.len(), "segment_sum_rows seg length mismatch");
        let mut out = Array::zeros(n, av.cols());
        for (r, &s) in seg.iter().enumerate() {
            assert!(s < n, "segment id out of range");
            for (o, &x) in out.row_mut(s).iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SegmentSumRows(a, seg.to_vec()))
    }

    /// Row-wise layer normalization with `1 × m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let m = xv.cols();
        assert_eq!(gv.shape(), [1, m], "layer_norm gain shape");
        assert_eq!(bv.shape(), [1, m], "layer_norm bias shape");
        let mut normed = Array::zeros(xv.rows(), m);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Array::zeros(xv.rows(), m);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..m {
                let n = (row[c] - mu) * is;
                normed.set(r, c, n);
                out.set(r, c, n * gv.data()[c] + bv.data()[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, normed, inv_std })
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Var {
        let av = self.value(a);
        assert_eq!(mask.len(), av.len(), "mask length mismatch");
        let data = av.data().iter().zip(mask).map(|(&x, &m)| if m { value } else { x }).collect();
        let v = Array::from_vec(av.rows(), av.cols(), data);
        self.push(v, Op::MaskedFill(a, mask.to_vec()))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(DiffError::NonScalarLoss { shape });
        }
        self.backward_seeded(&[(loss, Array::scalar(1.0))])
    }

    /// Reverse pass seeded with upstream gradients for arbitrary nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Array)]) -> Result<Gradients, DiffError> {
        self.check()?;
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(self.shape(*v), g.shape(), "seed gradient shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
        }
        let last = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for i in (0..=last).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads, params: self.param_nodes() })
    }

    fn param_nodes(&self) -> Vec<(usize, ParamId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect()
    }

    fn propagate(&self, i: usize, gy: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Array| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], g);
            }
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    send(*a, gy.matmul_t(self.value(*b)));
                }
                if wants(b) {
                    send(*b, self.value(*a).t_matmul(gy));
                }
            }
            Op::Add(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.map(|g| -g));
            }
            Op::AddRow(a, b) => {
                send(*a, gy.clone());
                if wants(b) {
                    let mut gb = Array::zeros(1, gy.cols());
                    for r in 0..gy.rows() {
                        for (o, &g) in gb.data_mut().iter_mut().zip(gy.row(r)) {
                            *o += g;
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    send(*a, gy.zip_map(self.value(*b), |g, x| g * x));
                }
                if wants(b) {
                    send(*b, gy.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                if wants(a) {
                    let mut ga = gy.clone();
                    for r in 0..ga.rows() {
                        let s = cv.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|g| *g *= s);
                    }
                    send(*a, ga);
                }
                if wants(c) {
                    let gc = (0..gy.rows())
                        .map(|r| gy.row(r).iter().zip(av.row(r)).map(|(g, x)| g * x).sum())
                        .collect();
                    send(*c, Array::col_vector(gc));
                }
            }
            Op::Scale(a, s) => send(*a, gy.map(|g| g * s)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if wants(p) {
                        let mut gp = Array::zeros(gy.rows(), w);
                        for r in 0..gy.rows() {
                            gp.row_mut(r).copy_from_slice(&gy.row(r)[off..off + w]);
                        }
                        send(*p, gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    if wants(p) {
                        send(*p, Array::from_vec(pv.rows(), pv.cols(), gy.data()[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Array::zeros(av.rows(), av.cols());
                for r in 0..gy.rows() {
                    ga.row_mut(r)[*start..*start + gy.cols()].copy_from_slice(gy.row(r));
                }
                send(*a, ga);
            }
            Op::Transpose(a) => send(*a, gy.transpose()),
            Op::SoftmaxRows(a) => {
                let mut ga = Array::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = gy.row(r).iter().zip(y.row(r)).map(|(g, p)| g * p).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (gy.get(r, c) - dot));
                    }
                }
                send(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Array::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let total: f64 = gy.row(r).iter().sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, gy.get(r, c) - y.get(r, c).exp() * total);
                    }
                }
                send(*a, ga);
            }
            Op::SegmentSoftmax(a, seg) => {
                let mut dot = vec![0.0; segment_count(seg)];
                for (r, &s) in seg.iter().enumerate() {
                    dot[s] += gy.get(r, 0) * y.get(r, 0);
                }
                let ga = seg.iter().enumerate().map(|(r, &s)| y.get(r, 0) * (gy.get(r, 0) - dot[s])).collect();
                send(*a, Array::col_vector(ga));
            }
            Op::SegmentLogSoftmax(a, seg) => {
                let mut total = vec![0.0; segment_count(seg)];
                for (r, &s) in seg.iter().enumerate() {
                    total[s] += gy.get(r, 0);
                }
                let ga = seg
                    .iter()
                    .enumerate()
                    .map(|(r, &s)| gy.get(r, 0) - y.get(r, 0).exp() * total[s])
                    .collect();
                send(*a, Array::col_vector(ga));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                send(*a, gy.zip_map(self.value(*a), |g, x| if x >= 0.0 { g } else { g * s }));
            }
            Op::Gelu(a) => {
                let ga = gy.zip_map(self.value(*a), |g, x| {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                send(*a, ga);
            }
            Op::Sigmoid(a) => send(*a, gy.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => send(*a, gy.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Softplus(a) => send(*a, gy.zip_map(self.value(*a), |g, x| g * stable_sigmoid(x))),
            Op::Log(a) => send(*a, gy.zip_map(self.value(*a), |g, x| g / x)),
            Op::Abs(a) => send(*a, gy.zip_map(self.value(*a), |g, x| g * sign(x))),
            Op::Sin(a) => send(*a, gy.zip_map(self.value(*a), |g, x| g * x.cos())),
            Op::Cos(a) => send(*a, gy.zip_map(self.value(*a), |g, x| -g * x.sin())),
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                send(*a, Array::full(r, c, gy.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                send(*a, Array::full(r, c, gy.item() / (r * c) as f64));
            }
            Op::RowSum(a) => {
                let [r, c] = self.shape(*a);
                let mut ga = Array::zeros(r, c);
                for i in 0..r {
                    let g = gy.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|x| *x = g);
                }
                send(*a, ga);
            }
            Op::GatherRows(table, idx) => {
                let [r, c] = self.shape(*table);
                let mut gt = Array::zeros(r, c);
                for (row, &i) in idx.iter().enumerate() {
                    for (o, &g) in gt.row_mut(i).iter_mut().zip(gy.row(row)) {
                        *o += g;
                    }
                }
                send(*table, gt);
            }
            Op::SegmentSumRows(a, seg) => {
                let [r, c] = self.shape(*a);
                let mut ga = Array::zeros(r, c);
                for (row, &s) in seg.iter().enumerate() {
                    ga.row_mut(row).copy_from_slice(gy.row(s));
                }
                send(*a, ga);
            }
            Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                let gv = self.value(*gamma);
                let m = normed.cols();
                if wants(gamma) || wants(beta) {
                    let mut gg = Array::zeros(1, m);
                    let mut gb = Array::zeros(1, m);
                    for r in 0..normed.rows() {
                        for c in 0..m {
                            gg.data_mut()[c] += gy.get(r, c) * normed.get(r, c);
                            gb.data_mut()[c] += gy.get(r, c);
                        }
                    }
                    send(*gamma, gg);
                    send(*beta, gb);
                }
                if wants(x) {
                    let mut gx = Array::zeros(normed.rows(), m);
                    for r in 0..normed.rows() {
                        let gh: Vec<f64> = (0..m).map(|c| gy.get(r, c) * gv.data()[c]).collect();
                        let mean_gh = gh.iter().sum::<f64>() / m as f64;
                        let mean_ghx = gh.iter().enumerate().map(|(c, g)| g * normed.get(r, c)).sum::<f64>() / m as f64;
                        for c in 0..m {
                            gx.set(r, c, inv_std[r] * (gh[c] - mean_gh - normed.get(r, c) * mean_ghx));
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::MaskedFill(a, mask) => {
                let mut ga = gy.clone();
                for (g, &m) in ga.data_mut().iter_mut().zip(mask) {
                    if m {
                        *g = 0.0;
                    }
                }
                send(*a, ga);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Array>, g: Array) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    use Op::*;
    match op {
        Constant => "constant",
        Input => "input",
        Param(_) => "param",
        MatMul(..) => "matmul",
        Add(..) => "add",
        Sub(..) => "sub",
        AddRow(..) => "add_row",
        Mul(..) => "mul",
        MulCol(..) => "mul_col",
        Scale(..) => "scale",
        ConcatCols(..) => "concat_cols",
        ConcatRows(..) => "concat_rows",
        SliceCols(..) => "slice_cols",
        Transpose(..) => "transpose",
        SoftmaxRows(..) => "softmax_rows",
        LogSoftmaxRows(..) => "log_softmax_rows",
        SegmentSoftmax(..) => "segment_softmax",
        SegmentLogSoftmax(..) => "segment_log_softmax",
        LeakyRelu(..) => "leaky_relu",
        Gelu(..) => "gelu",
        Sigmoid(..) => "sigmoid",
        Tanh(..) => "tanh",
        Softplus(..) => "softplus",
        Log(..) => "log",
        Abs(..) => "abs",
        Sin(..) => "sin",
        Cos(..) => "cos",
        Sum(..) => "sum",
        Mean(..) => "mean",
        RowSum(..) => "row_sum",
        GatherRows(..) => "gather_rows",
        SegmentSumRows(..) => "segment_sum_rows",
        LayerNorm { .. } => "layer_norm",
        MaskedFill(..) => "masked_fill",
    }
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient reaching `v`, if any path from the seeds touched it.
    pub fn of(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled when unreachable.
    pub fn of_dense(&self, g: &Graph, v: Var) -> Array {
        self.of(v).cloned().unwrap_or_else(|| {
            let [r, c] = g.shape(v);
            Array::zeros(r, c)
        })
    }

    /// Gradients of every parameter leaf, summed per parameter (a parameter
    /// may be loaded into the graph more than once).
    pub fn param_grads(&self, n_params: usize) -> Grads {
        let mut out = Grads::new(n_params);
        self.accumulate_params(&mut out);
        out
    }

    pub fn accumulate_params(&self, out: &mut Grads) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.accumulate(id, g);
            }
        }
    }
}
