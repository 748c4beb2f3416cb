//! Road-level and zone-level network representations.
//!
//! Road segments are embedded from their ID and bucketized attributes, then
//! refined by edge-featured graph attention over intersections. Zones get a
//! free embedding refined by graph convolution over the inter-zone flow.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;

use crate::diffcore::{Array, Graph, ParamId, ParamStore, Var};
use crate::roadnet::{FlowMatrix, RoadNetwork};

pub const LENGTH_BUCKETS: usize = 32;
pub const COORD_BUCKETS: usize = 64;
pub const ANGLE_BUCKETS: usize = 36;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("embedding width {0} is not a positive multiple of 8")]
    BadWidth(usize),
    #[error("need at least one attention layer")]
    NoLayers,
}

/// Uniform bins over `[lo, hi]`, either linear or in log space. Bins are
/// half-open `[e_k, e_{k+1})`; values outside clamp to the end bins and the
/// upper bound itself falls in the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucketizer {
    edges: Vec<f64>,
}

impl Bucketizer {
    pub fn linear(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 1);
        let edges = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
        Self { edges }
    }

    pub fn log(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 1 && lo > 0.0 && hi >= lo);
        let (a, b) = (lo.ln(), hi.ln());
        let edges = (0..=n).map(|k| (a + (b - a) * k as f64 / n as f64).exp()).collect();
        Self { edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bucket(&self, x: f64) -> usize {
        let above = self.edges[1..self.len()].partition_point(|&e| e <= x);
        above.min(self.len() - 1)
    }
}

/// Bucket of a steering angle in `[0, π]`; π itself goes to the last bucket.
pub fn angle_bucket(angle: f64) -> usize {
    ((ANGLE_BUCKETS as f64 * angle / PI).floor().max(0.0) as usize).min(ANGLE_BUCKETS - 1)
}

/// Message edges for attention: row `m` lets `dst[m]` attend to `src[m]`.
/// `emb[m]` indexes an intersection, or is `None` for a self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEdges {
    pub n: usize,
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub emb: Vec<Option<usize>>,
}

impl AttentionEdges {
    /// Neighbourhoods in both directions plus a self-loop per node. A pair
    /// connected by intersections both ways uses the intersection pointing
    /// from the attending segment.
    pub fn from_network(net: &RoadNetwork) -> Self {
        let lookup: HashMap<(usize, usize), usize> =
            net.intersections().iter().enumerate().map(|(k, e)| ((e.from, e.to), k)).collect();
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (k, e) in net.intersections().iter().enumerate() {
            if e.from == e.to {
                continue;
            }
            pairs.push((e.from, e.to, k));
            if !lookup.contains_key(&(e.to, e.from)) {
                pairs.push((e.to, e.from, k));
            }
        }
        pairs.sort_unstable();
        let mut out = Self::self_loops(net.num_segments());
        for (d, s, k) in pairs {
            out.dst.push(d);
            out.src.push(s);
            out.emb.push(Some(k));
        }
        out
    }

    pub fn self_loops(n: usize) -> Self {
        Self { n, dst: (0..n).collect(), src: (0..n).collect(), emb: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// Per-segment categorical indices and per-intersection buckets.
#[derive(Debug, Clone)]
pub struct RoadFeatures {
    pub len_bucket: Vec<usize>,
    pub road_type: Vec<usize>,
    pub lon_bucket: Vec<usize>,
    pub lat_bucket: Vec<usize>,
    pub n_types: usize,
    pub reach: Vec<usize>,
    pub angle: Vec<usize>,
    pub edges: AttentionEdges,
}

impl RoadFeatures {
    pub fn new(net: &RoadNetwork) -> Self {
        let segs = net.segments();
        let lo = segs.iter().map(|s| s.length_m).fold(f64::INFINITY, f64::min);
        let hi = segs.iter().map(|s| s.length_m).fold(0.0, f64::max);
        let lengths = Bucketizer::log(lo, hi, LENGTH_BUCKETS);
        let bb = net.bbox();
        let lon = Bucketizer::linear(bb.min_lon, bb.max_lon, COORD_BUCKETS);
        let lat = Bucketizer::linear(bb.min_lat, bb.max_lat, COORD_BUCKETS);
        Self {
            len_bucket: segs.iter().map(|s| lengths.bucket(s.length_m)).collect(),
            road_type: segs.iter().map(|s| s.road_type as usize).collect(),
            lon_bucket: segs.iter().map(|s| lon.bucket(s.lon)).collect(),
            lat_bucket: segs.iter().map(|s| lat.bucket(s.lat)).collect(),
            n_types: segs.iter().map(|s| s.road_type as usize + 1).max().unwrap_or(1),
            reach: net.intersections().iter().map(|e| e.reachable as usize).collect(),
            angle: net.intersections().iter().map(|e| angle_bucket(e.angle)).collect(),
            edges: AttentionEdges::from_network(net),
        }
    }

    pub fn num_segments(&self) -> usize {
        self.len_bucket.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatLayerParams {
    pub theta_s: ParamId,
    pub theta_t: ParamId,
    /// `d × 1` attention projection.
    pub a: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEncoderParams {
    pub d: usize,
    pub id: ParamId,
    pub len: ParamId,
    pub kind: ParamId,
    pub lon: ParamId,
    pub lat: ParamId,
    pub reach: ParamId,
    pub angle: ParamId,
    pub layers: Vec<GatLayerParams>,
}

impl RoadEncoderParams {
    pub fn register(
        store: &mut ParamStore,
        feats: &RoadFeatures,
        d: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        if d == 0 || d % 8 != 0 {
            return Err(EncoderError::BadWidth(d));
        }
        if layers == 0 {
            return Err(EncoderError::NoLayers);
        }
        let (half, eighth) = (d / 2, d / 8);
        let n = feats.num_segments();
        let mut p = Self {
            d,
            id: store.embedding("road.id", n, half, rng),
            len: store.embedding("road.len", LENGTH_BUCKETS, eighth, rng),
            kind: store.embedding("road.type", feats.n_types, eighth, rng),
            lon: store.embedding("road.lon", COORD_BUCKETS, eighth, rng),
            lat: store.embedding("road.lat", COORD_BUCKETS, eighth, rng),
            reach: store.embedding("road.reach", 2, half, rng),
            angle: store.embedding("road.angle", ANGLE_BUCKETS, half, rng),
            layers: Vec::new(),
        };
        for l in 0..layers {
            p.layers.push(GatLayerParams {
                theta_s: store.xavier(format!("road.gat{l}.theta_s"), d, d, rng),
                theta_t: store.xavier(format!("road.gat{l}.theta_t"), d, d, rng),
                a: store.xavier(format!("road.gat{l}.a"), d, 1, rng),
            });
        }
        Ok(p)
    }
}

/// `|V| × d` matrix with row `i` = ID ∥ length ∥ type ∥ lon ∥ lat.
pub fn road_embedding(g: &mut Graph, store: &ParamStore, p: &RoadEncoderParams, feats: &RoadFeatures) -> Var {
    let ids: Vec<usize> = (0..feats.num_segments()).collect();
    let parts = [
        (p.id, &ids),
        (p.len, &feats.len_bucket),
        (p.kind, &feats.road_type),
        (p.lon, &feats.lon_bucket),
        (p.lat, &feats.lat_bucket),
    ]
    .map(|(table, idx)| {
        let t = g.param(store, table);
        g.gather_rows(t, idx)
    });
    g.concat_cols(&parts)
}

/// One row per intersection: reachability ∥ angle-bucket embedding.
pub fn intersection_embedding(g: &mut Graph, store: &ParamStore, p: &RoadEncoderParams, reach: &[usize], angle: &[usize]) -> Var {
    let r = g.param(store, p.reach);
    let a = g.param(store, p.angle);
    let r = g.gather_rows(r, reach);
    let a = g.gather_rows(a, angle);
    g.concat_cols(&[r, a])
}

/// Per-message-edge features: intersection embeddings, zero for self-loops.
pub fn message_features(g: &mut Graph, store: &ParamStore, p: &RoadEncoderParams, feats: &RoadFeatures) -> Var {
    let zero = g.constant(Array::zeros(1, p.d));
    let table = if feats.reach.is_empty() {
        zero
    } else {
        let e = intersection_embedding(g, store, p, &feats.reach, &feats.angle);
        g.concat_rows(&[e, zero])
    };
    let none = feats.reach.len();
    let idx: Vec<usize> = feats.edges.emb.iter().map(|e| e.unwrap_or(none)).collect();
    g.gather_rows(table, &idx)
}

/// One attention layer. `e` holds one row per message edge. Returns the new
/// node matrix and the `m × 1` column of attention weights.
pub fn gat_layer(g: &mut Graph, store: &ParamStore, layer: &GatLayerParams, v: Var, edges: &AttentionEdges, e: Var) -> (Var, Var) {
    let ts = g.param(store, layer.theta_s);
    let tt = g.param(store, layer.theta_t);
    let a = g.param(store, layer.a);
    let s = g.matmul(v, ts);
    let t = g.matmul(v, tt);
    let s_i = g.gather_rows(s, &edges.dst);
    let t_j = g.gather_rows(t, &edges.src);
    let pre = g.add(s_i, t_j);
    let pre = g.add(pre, e);
    let act = g.leaky_relu(pre, LEAKY_SLOPE);
    let logits = g.matmul(act, a);
    let alpha = g.segment_softmax(logits, &edges.dst);
    let msg = g.mul_col(t_j, alpha);
    (g.segment_sum_rows(msg, &edges.dst, edges.n), alpha)
}

/// Embedding followed by every attention layer.
pub fn encode_roads(g: &mut Graph, store: &ParamStore, p: &RoadEncoderParams, feats: &RoadFeatures) -> Var {
    let mut v = road_embedding(g, store, p, feats);
    let e = message_features(g, store, p, feats);
    for layer in &p.layers {
        v = gat_layer(g, store, layer, v, &feats.edges, e).0;
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneEncoderParams {
    pub table: ParamId,
    pub layers: Vec<ParamId>,
}

impl ZoneEncoderParams {
    pub fn register(store: &mut ParamStore, k: usize, d: usize, layers: usize, rng: &mut impl Rng) -> Self {
        Self {
            table: store.embedding("zone.id", k, d, rng),
            layers: (0..layers).map(|l| store.xavier(format!("zone.gcn{l}.theta"), d, d, rng)).collect(),
        }
    }
}

/// Symmetrically normalized flow with self-loops, `D^-1/2 (F/max F + I) D^-1/2`.
/// An all-zero flow gives the identity.
pub fn normalized_flow(f: &FlowMatrix) -> Array {
    let k = f.k();
    let max = f.max();
    let mut fh = Array::identity(k);
    if max > 0.0 {
        for i in 0..k {
            for j in 0..k {
                fh.set(i, j, fh.get(i, j) + f.get(i, j) / max);
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..k).map(|i| 1.0 / fh.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..k {
        for j in 0..k {
            fh.set(i, j, fh.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    fh
}

pub fn zone_gcn_layer(g: &mut Graph, store: &ParamStore, theta: ParamId, norm_flow: Var, z: Var) -> Var {
    let th = g.param(store, theta);
    let mixed = g.matmul(norm_flow, z);
    g.matmul(mixed, th)
}

pub fn encode_zones(g: &mut Graph, store: &ParamStore, p: &ZoneEncoderParams, norm_flow: &Array) -> Var {
    let a = g.constant(norm_flow.clone());
    let mut z = g.param(store, p.table);
    for &theta in &p.layers {
        z = zone_gcn_layer(g, store, theta, a, z);
    }
    z
}
