//! Spatio-temporal point representations and the causal trajectory encoder.

use rand::Rng;

use crate::diffcore::{Array, Graph, ParamId, ParamStore, Var};
use crate::roadnet::RoadNetwork;
use crate::trajectory::TrajPoint;

pub const LN_EPS: f64 = 1e-5;
/// Score assigned to masked (future) positions before the softmax.
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajEncoderError {
    #[error("width 2d = {width} is not divisible by {heads} heads into even halves")]
    BadHeads { width: usize, heads: usize },
    #[error("need at least one head and a positive width")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    /// `1 × d_k/2` relative projections for distance and time, key and value side.
    pub dist_k: ParamId,
    pub time_k: ParamId,
    pub dist_v: ParamId,
    pub time_v: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub ln1: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
    pub ff1: (ParamId, ParamId),
    pub ff2: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajEncoderParams {
    pub d: usize,
    pub n_heads: usize,
    /// Divide scores by `d_k` instead of `sqrt(d_k)`.
    pub literal_dk: bool,
    /// `2d × 1` weight and `1 × 1` bias of the fusion gate.
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    /// `1 × d/2` Fourier frequencies.
    pub omega: ParamId,
    pub blocks: Vec<BlockParams>,
    pub ln_out: (ParamId, ParamId),
}

/// Geometric frequencies `10000^(-2l/d)` for `l = 1..=d/2`.
pub fn fourier_init(d: usize) -> Vec<f64> {
    (1..=d / 2).map(|l| 10000f64.powf(-2.0 * l as f64 / d as f64)).collect()
}

impl TrajEncoderParams {
    /// Zero `layers` registers only the point-representation parameters.
    pub fn register(
        store: &mut ParamStore,
        d: usize,
        layers: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TrajEncoderError> {
        if n_heads == 0 || d == 0 {
            return Err(TrajEncoderError::Empty);
        }
        let w = 2 * d;
        if w % (2 * n_heads) != 0 || d % 2 != 0 {
            return Err(TrajEncoderError::BadHeads { width: w, heads: n_heads });
        }
        let dk = w / n_heads;
        let ln = |store: &mut ParamStore, name: String| {
            (store.register(format!("{name}.gamma"), Array::full(1, w, 1.0)), store.zeros(format!("{name}.beta"), 1, w))
        };
        let mut blocks = Vec::new();
        for l in 0..layers {
            let heads = (0..n_heads)
                .map(|h| {
                    let pre = format!("traj.block{l}.head{h}");
                    HeadParams {
                        q: store.xavier(format!("{pre}.q"), w, dk, rng),
                        k: store.xavier(format!("{pre}.k"), w, dk, rng),
                        v: store.xavier(format!("{pre}.v"), w, dk, rng),
                        dist_k: store.zeros(format!("{pre}.dist_k"), 1, dk / 2),
                        time_k: store.zeros(format!("{pre}.time_k"), 1, dk / 2),
                        dist_v: store.zeros(format!("{pre}.dist_v"), 1, dk / 2),
                        time_v: store.zeros(format!("{pre}.time_v"), 1, dk / 2),
                    }
                })
                .collect();
            blocks.push(BlockParams {
                heads,
                ln1: ln(store, format!("traj.block{l}.ln1")),
                ln2: ln(store, format!("traj.block{l}.ln2")),
                ff1: (store.xavier(format!("traj.block{l}.ff1.w"), w, 4 * w, rng), store.zeros(format!("traj.block{l}.ff1.b"), 1, 4 * w)),
                ff2: (store.xavier(format!("traj.block{l}.ff2.w"), 4 * w, w, rng), store.zeros(format!("traj.block{l}.ff2.b"), 1, w)),
            });
        }
        Ok(Self {
            d,
            n_heads,
            literal_dk: false,
            gate_w: store.xavier("traj.gate.w", w, 1, rng),
            gate_b: store.zeros("traj.gate.b", 1, 1),
            omega: store.register("traj.omega", Array::row_vector(fourier_init(d))),
            blocks,
            ln_out: ln(store, "traj.ln_out".into()),
        })
    }

    pub fn d_k(&self) -> usize {
        2 * self.d / self.n_heads
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PointVars {
    pub spatial: Var,
    pub temporal: Var,
    /// `spatial ∥ temporal`, `n × 2d`.
    pub x: Var,
}

/// Gated spatial fusion and Fourier time encoding for `n` points at once.
/// `v` and `z` are `n × d`; `minutes` are times of day.
pub fn point_representation(g: &mut Graph, store: &ParamStore, p: &TrajEncoderParams, v: Var, z: Var, minutes: &[f64]) -> PointVars {
    let vz = g.concat_cols(&[v, z]);
    let w = g.param(store, p.gate_w);
    let b = g.param(store, p.gate_b);
    let gate = g.matmul(vz, w);
    let gate = g.add_row(gate, b);
    let gate = g.sigmoid(gate);
    let gz = g.mul_col(z, gate);
    let spatial = g.add(v, gz);

    let t = g.constant(Array::col_vector(minutes.to_vec()));
    let omega = g.param(store, p.omega);
    let phase = g.matmul(t, omega);
    let c = g.cos(phase);
    let s = g.sin(phase);
    let cs = g.concat_cols(&[c, s]);
    let temporal = g.scale(cs, (1.0 / (2.0 * p.d as f64)).sqrt());
    let x = g.concat_cols(&[spatial, temporal]);
    PointVars { spatial, temporal, x }
}

/// Key- and value-side relative encodings of one head for a single pair.
pub fn relative_encoding(store: &ParamStore, head: &HeadParams, dist_km: f64, dt_min: f64) -> (Vec<f64>, Vec<f64>) {
    let side = |dp: ParamId, tp: ParamId| {
        let mut out: Vec<f64> = store.get(dp).data().iter().map(|x| dist_km * x).collect();
        out.extend(store.get(tp).data().iter().map(|x| dt_min * x));
        out
    };
    (side(head.dist_k, head.time_k), side(head.dist_v, head.time_v))
}

/// Pairwise spatial (km) and temporal (minutes) gaps, lower-triangular:
/// entry `(i, j)` for `j <= i` is the gap from point `j` to point `i`,
/// upper entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairwise {
    pub dist: Array,
    pub dt: Array,
}

impl Pairwise {
    pub fn from_points(net: &RoadNetwork, points: &[TrajPoint]) -> Self {
        let n = points.len();
        let mut dist = Array::zeros(n, n);
        let mut dt = Array::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                dist.set(i, j, net.segment_distance(points[i].segment, points[j].segment));
                dt.set(i, j, (points[i].time - points[j].time) / 60.0);
            }
        }
        Self { dist, dt }
    }

    pub fn len(&self) -> usize {
        self.dist.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn future_mask(&self) -> Vec<bool> {
        let n = self.len();
        (0..n * n).map(|k| k % n > k / n).collect()
    }
}

/// One causal relative-attention head over `h` (`n × 2d`). Returns the
/// `n × d_k` output and the `n × n` attention matrix.
pub fn attention_head(g: &mut Graph, store: &ParamStore, head: &HeadParams, h: Var, rel: &Pairwise, scale: f64) -> (Var, Var) {
    let [wq, wk, wv, dk_, tk_, dv_, tv_] =
        [head.q, head.k, head.v, head.dist_k, head.time_k, head.dist_v, head.time_v].map(|id| g.param(store, id));
    let q = g.matmul(h, wq);
    let k = g.matmul(h, wk);
    let v = g.matmul(h, wv);
    let half = g.shape(q)[1] / 2;
    let dist = g.constant(rel.dist.clone());
    let dt = g.constant(rel.dt.clone());

    // q_i . (k_j + a_ij) splits into q_i k_j + d_ij (q_i[..half] . dist_k) + dt_ij (q_i[half..] . time_k)
    let kt = g.transpose(k);
    let qk = g.matmul(q, kt);
    let qa = g.slice_cols(q, 0, half);
    let qb = g.slice_cols(q, half, 2 * half);
    let dk_t = g.transpose(dk_);
    let tk_t = g.transpose(tk_);
    let ud = g.matmul(qa, dk_t);
    let ut = g.matmul(qb, tk_t);
    let sd = g.mul_col(dist, ud);
    let st = g.mul_col(dt, ut);
    let scores = g.add(qk, sd);
    let scores = g.add(scores, st);
    let scores = g.scale(scores, scale);
    let scores = g.masked_fill(scores, &rel.future_mask(), MASKED);
    let alpha = g.softmax_rows(scores);

    let av = g.matmul(alpha, v);
    let ad = g.mul(alpha, dist);
    let at = g.mul(alpha, dt);
    let wd = g.row_sum(ad);
    let wt = g.row_sum(at);
    let rd = g.matmul(wd, dv_);
    let rt = g.matmul(wt, tv_);
    let rel_v = g.concat_cols(&[rd, rt]);
    (g.add(av, rel_v), alpha)
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// `n × 2d`; row `i` encodes the prefix ending at point `i`.
    pub out: Var,
    /// Attention matrices, layer-major then head.
    pub attention: Vec<Var>,
}

fn layer_norm(g: &mut Graph, store: &ParamStore, ln: (ParamId, ParamId), x: Var) -> Var {
    let gamma = g.param(store, ln.0);
    let beta = g.param(store, ln.1);
    g.layer_norm(x, gamma, beta, LN_EPS)
}

/// Pre-norm causal transformer over the point representations `x` (`n × 2d`).
pub fn encode_trajectory(g: &mut Graph, store: &ParamStore, p: &TrajEncoderParams, x: Var, rel: &Pairwise) -> Encoded {
    assert_eq!(g.shape(x)[0], rel.len(), "pairwise gaps must match the sequence length");
    let dk = p.d_k() as f64;
    let scale = if p.literal_dk { 1.0 / dk } else { 1.0 / dk.sqrt() };
    let mut x = x;
    let mut attention = Vec::new();
    for block in &p.blocks {
        let h = layer_norm(g, store, block.ln1, x);
        let mut heads = Vec::with_capacity(block.heads.len());
        for head in &block.heads {
            let (o, a) = attention_head(g, store, head, h, rel, scale);
            heads.push(o);
            attention.push(a);
        }
        let mha = g.concat_cols(&heads);
        x = g.add(x, mha);

        let h = layer_norm(g, store, block.ln2, x);
        let [w1, b1, w2, b2] = [block.ff1.0, block.ff1.1, block.ff2.0, block.ff2.1].map(|id| g.param(store, id));
        let f = g.matmul(h, w1);
        let f = g.add_row(f, b1);
        let f = g.gelu(f);
        let f = g.matmul(f, w2);
        let f = g.add_row(f, b2);
        x = g.add(x, f);
    }
    let out = layer_norm(g, store, p.ln_out, x);
    Encoded { out, attention }
}
