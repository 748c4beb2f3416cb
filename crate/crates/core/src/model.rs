//! The full model: network encoders, trajectory encoder and navigator, with
//! the joint next-segment / travel-time loss and frozen inference.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{read_checkpoint, write_checkpoint, Array, CheckpointError, DiffError, Graph, ParamId, ParamStore, Var};
use crate::navigator::{self, CandidateScore, NavError, NavigatorParams};
use crate::net_encoder::{self, EncoderError, RoadEncoderParams, RoadFeatures, ZoneEncoderParams};
use crate::roadnet::{RoadNetwork, SegmentId, ZonePartition};
use crate::synth::minute_of_day;
use crate::traj_encoder::{self, Pairwise, TrajEncoderError, TrajEncoderParams};
use crate::trajectory::{TrajPoint, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub gat_layers: usize,
    pub zone_layers: usize,
    pub traj_layers: usize,
    pub heads: usize,
    /// Scale attention scores by `1/d_k` rather than `1/sqrt(d_k)`.
    pub literal_dk: bool,
    /// Most recent points encoded per search expansion.
    pub window: usize,
    /// Replace both network encoders with free ID embeddings.
    pub disable_rne: bool,
    /// Replace the trajectory encoder with a linear map of the current point.
    pub disable_traje: bool,
    /// Zero the destination-zone and metric inputs of the navigator.
    pub disable_nav: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            gat_layers: 2,
            zone_layers: 2,
            traj_layers: 2,
            heads: 4,
            literal_dk: false,
            window: 64,
            disable_rne: false,
            disable_traje: false,
            disable_nav: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    TrajEncoder(#[from] TrajEncoderError),
    #[error("partition covers {got} segments, network has {expected}")]
    PartitionMismatch { expected: usize, got: usize },
    #[error("trajectory {id} has {len} points; at least 2 are needed")]
    TooShort { id: u64, len: usize },
    #[error("trajectory {id}: segment {to} is not a reachable successor of {from}")]
    Unreachable { id: u64, from: SegmentId, to: SegmentId },
    #[error("trajectory {id}: {source}")]
    NonFinite { id: u64, source: DiffError },
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Spatial {
    Encoded { road: RoadEncoderParams, zone: ZoneEncoderParams },
    Raw { road: ParamId, zone: ParamId },
}

#[derive(Debug, Clone)]
pub struct Hoser {
    pub config: ModelConfig,
    pub store: ParamStore,
    spatial: Spatial,
    traj: TrajEncoderParams,
    /// `2d × 2d` stand-in for the trajectory encoder when it is disabled.
    point_proj: Option<ParamId>,
    nav: NavigatorParams,
    feats: RoadFeatures,
    zone_of: Vec<usize>,
    norm_flow: Array,
}

/// Encoder outputs held fixed for generation.
#[derive(Debug, Clone)]
pub struct Frozen {
    pub v: Array,
    pub z: Array,
}

/// Scalar pieces of one trajectory's loss, each averaged over its steps.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    pub mae: Var,
    pub steps: usize,
}

/// Rows of the global road and zone tables needed by one graph, and where
/// they sit in its local copies.
#[derive(Debug, Clone, Default)]
pub struct LocalRows {
    pub segs: Vec<SegmentId>,
    pub zones: Vec<usize>,
    seg_row: HashMap<SegmentId, usize>,
    zone_row: HashMap<usize, usize>,
}

impl LocalRows {
    fn seg(&mut self, s: SegmentId) -> usize {
        let next = self.segs.len();
        *self.seg_row.entry(s).or_insert_with(|| {
            self.segs.push(s);
            next
        })
    }

    fn zone(&mut self, z: usize) -> usize {
        let next = self.zones.len();
        *self.zone_row.entry(z).or_insert_with(|| {
            self.zones.push(z);
            next
        })
    }

    pub fn gather(table: &Array, rows: &[usize]) -> Array {
        let mut out = Array::zeros(rows.len(), table.cols());
        for (r, &i) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(i));
        }
        out
    }

    /// Adds local gradient rows back into a global-sized gradient table.
    pub fn scatter_add(target: &mut Array, rows: &[usize], grad: &Array) {
        for (r, &i) in rows.iter().enumerate() {
            for (t, g) in target.row_mut(i).iter_mut().zip(grad.row(r)) {
                *t += g;
            }
        }
    }
}

/// Index plan of the teacher-forced steps of one trajectory.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub local: LocalRows,
    point_rows: Vec<usize>,
    point_zones: Vec<usize>,
    dest_zone: usize,
    cand_rows: Vec<usize>,
    step_of: Vec<usize>,
    truth: Vec<usize>,
    next_rows: Vec<usize>,
    metric: Vec<(f64, f64)>,
    minutes: Vec<f64>,
    dt_minutes: Vec<f64>,
    pairwise: Option<Pairwise>,
}

impl Hoser {
    pub fn new(config: ModelConfig, net: &RoadNetwork, partition: &ZonePartition, seed: u64) -> Result<Self, ModelError> {
        if partition.zone_of.len() != net.num_segments() {
            return Err(ModelError::PartitionMismatch { expected: net.num_segments(), got: partition.zone_of.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let feats = RoadFeatures::new(net);
        let d = config.d;
        let spatial = if config.disable_rne {
            if d == 0 || d % 8 != 0 {
                return Err(EncoderError::BadWidth(d).into());
            }
            Spatial::Raw {
                road: store.embedding("raw.road", net.num_segments(), d, &mut rng),
                zone: store.embedding("raw.zone", partition.k, d, &mut rng),
            }
        } else {
            Spatial::Encoded {
                road: RoadEncoderParams::register(&mut store, &feats, d, config.gat_layers, &mut rng)?,
                zone: ZoneEncoderParams::register(&mut store, partition.k, d, config.zone_layers, &mut rng),
            }
        };
        let layers = if config.disable_traje { 0 } else { config.traj_layers };
        let mut traj = TrajEncoderParams::register(&mut store, d, layers, config.heads, &mut rng)?;
        traj.literal_dk = config.literal_dk;
        let point_proj = config.disable_traje.then(|| store.xavier("traj.point_proj", 2 * d, 2 * d, &mut rng));
        let mut nav = NavigatorParams::register(&mut store, d, &mut rng);
        nav.disable_nav = config.disable_nav;
        Ok(Self {
            config,
            store,
            spatial,
            traj,
            point_proj,
            nav,
            feats,
            zone_of: partition.zone_of.clone(),
            norm_flow: net_encoder::normalized_flow(&partition.flow),
        })
    }

    pub fn zone_of(&self, seg: SegmentId) -> usize {
        self.zone_of[seg]
    }

    pub fn navigator(&self) -> &NavigatorParams {
        &self.nav
    }

    /// Road (`|V| × d`) and zone (`k × d`) representations.
    pub fn encode_network(&self, g: &mut Graph, store: &ParamStore) -> (Var, Var) {
        match &self.spatial {
            Spatial::Encoded { road, zone } => (
                net_encoder::encode_roads(g, store, road, &self.feats),
                net_encoder::encode_zones(g, store, zone, &self.norm_flow),
            ),
            Spatial::Raw { road, zone } => (g.param(store, *road), g.param(store, *zone)),
        }
    }

    pub fn freeze(&self) -> Frozen {
        let mut g = Graph::new();
        let (v, z) = self.encode_network(&mut g, &self.store);
        Frozen { v: g.value(v).clone(), z: g.value(z).clone() }
    }

    /// Prefix encodings (`n × 2d`) of points whose road and zone rows are
    /// `v_pts` and `z_pts`.
    pub fn encode_prefixes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v_pts: Var,
        z_pts: Var,
        minutes: &[f64],
        pairwise: Option<&Pairwise>,
    ) -> Var {
        let pv = traj_encoder::point_representation(g, store, &self.traj, v_pts, z_pts, minutes);
        match self.point_proj {
            Some(w) => {
                let w = g.param(store, w);
                g.matmul(pv.x, w)
            }
            None => traj_encoder::encode_trajectory(g, store, &self.traj, pv.x, pairwise.expect("pairwise gaps")).out,
        }
    }

    /// Checks a trajectory against the network and lays out its steps.
    pub fn plan(&self, net: &RoadNetwork, traj: &Trajectory) -> Result<StepPlan, ModelError> {
        let n = traj.len();
        if n < 2 {
            return Err(ModelError::TooShort { id: traj.id, len: n });
        }
        let m = n - 1;
        let dest = traj.points[n - 1].segment;
        let mut local = LocalRows::default();
        let prefix = &traj.points[..m];
        let point_rows = prefix.iter().map(|p| local.seg(p.segment)).collect();
        let point_zones = prefix.iter().map(|p| local.zone(self.zone_of[p.segment])).collect();
        let dest_zone = local.zone(self.zone_of[dest]);
        let (mut cand_rows, mut step_of, mut truth, mut metric) = (Vec::new(), Vec::new(), Vec::with_capacity(m), Vec::new());
        for i in 0..m {
            let (cur, next) = (traj.points[i].segment, traj.points[i + 1].segment);
            let cands = net.successors(cur);
            let pos = cands.binary_search(&next).map_err(|_| ModelError::Unreachable { id: traj.id, from: cur, to: next })?;
            truth.push(cand_rows.len() + pos);
            metric.extend(navigator::metric_inputs(net, cands, dest));
            for &c in cands {
                cand_rows.push(local.seg(c));
                step_of.push(i);
            }
        }
        let next_rows = traj.points[1..].iter().map(|p| local.seg(p.segment)).collect();
        Ok(StepPlan {
            local,
            point_rows,
            point_zones,
            dest_zone,
            cand_rows,
            step_of,
            truth,
            next_rows,
            metric,
            minutes: prefix.iter().map(|p| minute_of_day(p.time)).collect(),
            dt_minutes: traj.points.windows(2).map(|w| (w[1].time - w[0].time) / 60.0).collect(),
            pairwise: (!self.config.disable_traje).then(|| Pairwise::from_points(net, prefix)),
        })
    }

    /// Joint loss of one trajectory given local road and zone tables laid
    /// out as in `plan.local`.
    pub fn trajectory_loss(&self, g: &mut Graph, store: &ParamStore, plan: &StepPlan, v: Var, z: Var) -> LossVars {
        let m = plan.point_rows.len();
        let v_pts = g.gather_rows(v, &plan.point_rows);
        let z_pts = g.gather_rows(z, &plan.point_zones);
        let tau = self.encode_prefixes(g, store, v_pts, z_pts, &plan.minutes, plan.pairwise.as_ref());

        let z_dest = g.gather_rows(z, &vec![plan.dest_zone; m]);
        let q = navigator::query(g, store, &self.nav, tau, z_dest);
        let q = g.gather_rows(q, &plan.step_of);
        let v_c = g.gather_rows(v, &plan.cand_rows);
        let metric = navigator::metric_features(g, store, &self.nav, &plan.metric);
        let logits = navigator::candidate_logits(g, store, &self.nav, q, v_c, metric);
        let logp = g.segment_log_softmax(logits, &plan.step_of);
        let picked = g.gather_rows(logp, &plan.truth);
        let ll = g.sum(picked);
        let nll = g.scale(ll, -1.0 / m as f64);

        let v_next = g.gather_rows(v, &plan.next_rows);
        let dt_hat = navigator::time_interval(g, store, &self.nav, tau, v_next);
        let target = g.constant(Array::col_vector(plan.dt_minutes.clone()));
        let err = g.sub(dt_hat, target);
        let err = g.abs(err);
        let mae = g.mean(err);
        let total = g.add(nll, mae);
        LossVars { total, nll, mae, steps: m }
    }

    /// Loss of one trajectory under frozen encoder outputs: (total, nll, mae).
    pub fn evaluate_trajectory(&self, frozen: &Frozen, net: &RoadNetwork, traj: &Trajectory) -> Result<(f64, f64, f64), ModelError> {
        let plan = self.plan(net, traj)?;
        let mut g = Graph::new();
        let v = g.constant(LocalRows::gather(&frozen.v, &plan.local.segs));
        let z = g.constant(LocalRows::gather(&frozen.z, &plan.local.zones));
        let loss = self.trajectory_loss(&mut g, &self.store, &plan, v, z);
        g.check().map_err(|source| ModelError::NonFinite { id: traj.id, source })?;
        Ok((g.value(loss.total).item(), g.value(loss.nll).item(), g.value(loss.mae).item()))
    }

    /// Encoding of the prefix ending at the last of `points` (at most the
    /// configured window is used).
    pub fn prefix_encoding(&self, frozen: &Frozen, net: &RoadNetwork, points: &[TrajPoint]) -> Vec<f64> {
        let points = &points[points.len().saturating_sub(self.config.window.max(1))..];
        let mut local = LocalRows::default();
        let rows: Vec<usize> = points.iter().map(|p| local.seg(p.segment)).collect();
        let zones: Vec<usize> = points.iter().map(|p| local.zone(self.zone_of[p.segment])).collect();
        let mut g = Graph::new();
        let v = g.constant(LocalRows::gather(&frozen.v, &local.segs));
        let z = g.constant(LocalRows::gather(&frozen.z, &local.zones));
        let v_pts = g.gather_rows(v, &rows);
        let z_pts = g.gather_rows(z, &zones);
        let minutes: Vec<f64> = points.iter().map(|p| minute_of_day(p.time)).collect();
        let pairwise = (!self.config.disable_traje).then(|| Pairwise::from_points(net, points));
        let tau = self.encode_prefixes(&mut g, &self.store, v_pts, z_pts, &minutes, pairwise.as_ref());
        g.value(tau).row(points.len() - 1).to_vec()
    }

    /// Next-segment distribution and intervals after `points`, toward `dest`.
    pub fn next_scores(&self, frozen: &Frozen, net: &RoadNetwork, points: &[TrajPoint], dest: SegmentId) -> Result<Vec<CandidateScore>, NavError> {
        let cur = points.last().expect("non-empty prefix").segment;
        if net.successors(cur).is_empty() {
            return Err(NavError::DeadEnd(cur));
        }
        let tau = self.prefix_encoding(frozen, net, points);
        let z_dest = frozen.z.row(self.zone_of[dest]);
        navigator::next_segment_distribution(&self.store, &self.nav, &tau, z_dest, &frozen.v, net, cur, dest)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let meta = serde_json::json!({ "model": self.config, "k": self.norm_flow.rows(), "extra": extra });
        Ok(write_checkpoint(path, &self.store, meta)?)
    }

    /// Rebuilds a model from a checkpoint for the given network and zones.
    pub fn load(path: &Path, net: &RoadNetwork, partition: &ZonePartition) -> Result<Self, ModelError> {
        let ck = read_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(ck.metadata["model"].clone()).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let mut model = Self::new(config, net, partition, 0)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}
