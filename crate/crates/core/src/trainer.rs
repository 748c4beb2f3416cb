//! Teacher-forced training with Adam and global-norm clipping.
//!
//! Each batch runs the network encoders once. Every trajectory then gets
//! its own graph over local copies of the rows it touches; those graphs run
//! in parallel and their row gradients are summed and pushed back through
//! the encoder graph.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Grads, Graph, ParamStore};
use crate::model::{Hoser, LocalRows, ModelConfig, ModelError};
use crate::roadnet::{RoadNetwork, ZonePartition};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), lr: 1e-3, epochs: 10, batch_size: 32, clip: 1.0, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return bad("lr and clip must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        let m = &self.model;
        if m.d == 0 || m.heads == 0 || m.gat_layers == 0 || m.zone_layers == 0 || m.traj_layers == 0 || m.window == 0 {
            return bad("model widths, layer counts, heads and window must be positive");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, a)| Array::zeros(a.rows(), a.cols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros(), v: zeros() }
    }

    /// One update; parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let g = grads.get(id);
            let p = store.get_mut(id);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mean losses of a batch and the gradient of the mean total loss.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub grads: Grads,
    pub loss: f64,
    pub nll: f64,
    pub mae: f64,
}

struct Partial {
    segs: Vec<usize>,
    zones: Vec<usize>,
    dv: Array,
    dz: Array,
    grads: Grads,
    parts: (f64, f64, f64),
}

/// Gradient of the mean joint loss over `batch` with respect to every parameter.
pub fn batch_gradients(model: &Hoser, net: &RoadNetwork, batch: &[&Trajectory]) -> Result<BatchGrad, ModelError> {
    let store = &model.store;
    let mut g0 = Graph::new();
    let (v, z) = model.encode_network(&mut g0, store);
    let (v_all, z_all) = (g0.value(v), g0.value(z));
    let weight = 1.0 / batch.len() as f64;

    let partials: Vec<Partial> = batch
        .par_iter()
        .map(|traj| {
            let plan = model.plan(net, traj)?;
            let mut g = Graph::new();
            let lv = g.input(LocalRows::gather(v_all, &plan.local.segs));
            let lz = g.input(LocalRows::gather(z_all, &plan.local.zones));
            let loss = model.trajectory_loss(&mut g, store, &plan, lv, lz);
            let back = g
                .backward_seeded(&[(loss.total, Array::scalar(weight))])
                .map_err(|source| ModelError::NonFinite { id: traj.id, source })?;
            Ok(Partial {
                dv: back.of_dense(&g, lv),
                dz: back.of_dense(&g, lz),
                grads: back.param_grads(store.len()),
                parts: (g.value(loss.total).item(), g.value(loss.nll).item(), g.value(loss.mae).item()),
                segs: plan.local.segs,
                zones: plan.local.zones,
            })
        })
        .collect::<Result<_, ModelError>>()?;

    let mut dv = Array::zeros(v_all.rows(), v_all.cols());
    let mut dz = Array::zeros(z_all.rows(), z_all.cols());
    let mut grads = Grads::new(store.len());
    let (mut loss, mut nll, mut mae) = (0.0, 0.0, 0.0);
    for p in &partials {
        LocalRows::scatter_add(&mut dv, &p.segs, &p.dv);
        LocalRows::scatter_add(&mut dz, &p.zones, &p.dz);
        grads.merge(&p.grads);
        loss += p.parts.0 * weight;
        nll += p.parts.1 * weight;
        mae += p.parts.2 * weight;
    }
    let back = g0
        .backward_seeded(&[(v, dv), (z, dz)])
        .map_err(|source| ModelError::NonFinite { id: u64::MAX, source })?;
    back.accumulate_params(&mut grads);
    Ok(BatchGrad { grads, loss, nll, mae })
}

/// Joint loss of one trajectory evaluated in a single graph from `store`.
pub fn step_loss_with(model: &Hoser, store: &ParamStore, net: &RoadNetwork, traj: &Trajectory) -> Result<f64, ModelError> {
    let plan = model.plan(net, traj)?;
    let mut g = Graph::new();
    let (v, z) = model.encode_network(&mut g, store);
    let lv = g.gather_rows(v, &plan.local.segs);
    let lz = g.gather_rows(z, &plan.local.zones);
    let loss = model.trajectory_loss(&mut g, store, &plan, lv, lz);
    g.check().map_err(|source| ModelError::NonFinite { id: traj.id, source })?;
    Ok(g.value(loss.total).item())
}

/// Mean over steps of `-log P(next) + |Δt̂ - Δt|` (minutes).
pub fn step_loss(model: &Hoser, net: &RoadNetwork, traj: &Trajectory) -> Result<f64, ModelError> {
    step_loss_with(model, &model.store, net, traj)
}

/// Mean per-trajectory loss over a set, under frozen encoder outputs.
pub fn mean_loss(model: &Hoser, net: &RoadNetwork, set: &[Trajectory]) -> Result<f64, ModelError> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let frozen = model.freeze();
    let losses: Vec<f64> = set
        .par_iter()
        .map(|t| model.evaluate_trajectory(&frozen, net, t).map(|l| l.0))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub mae: f64,
    /// Mean validation loss after the epoch; NaN without a validation set.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept: lowest validation loss, or the
    /// last epoch when there is no validation set.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,nll,mae,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.loss, e.nll, e.mae, e.val_loss);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

pub fn train(
    config: &TrainConfig,
    net: &RoadNetwork,
    partition: &ZonePartition,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
) -> Result<(Hoser, TrainReport), TrainError> {
    train_with(config, net, partition, train_set, val_set, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: &TrainConfig,
    net: &RoadNetwork,
    partition: &ZonePartition,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Hoser, TrainReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model = Hoser::new(config.model.clone(), net, partition, config.seed)?;
    for t in train_set.iter().chain(val_set) {
        model.plan(net, t)?;
    }
    let mut adam = Adam::new(&model.store, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut nll, mut mae) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut bg = batch_gradients(&model, net, &batch).map_err(|e| match e {
                ModelError::NonFinite { .. } => TrainError::NonFinite { epoch, batch: b, detail: e.to_string() },
                other => other.into(),
            })?;
            if !bg.loss.is_finite() || !bg.grads.global_norm().is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, detail: format!("loss {}", bg.loss) });
            }
            bg.grads.clip_global_norm(config.clip);
            adam.step(&mut model.store, &bg.grads);
            let w = batch.len() as f64;
            loss += bg.loss * w;
            nll += bg.nll * w;
            mae += bg.mae * w;
        }
        let n = train_set.len() as f64;
        let val_loss = mean_loss(&model, net, val_set)?;
        let stats = EpochStats { epoch, loss: loss / n, nll: nll / n, mae: mae / n, val_loss };
        on_epoch(&stats);
        epochs.push(stats);
        // without validation data the last parameters are kept
        if val_loss.is_nan() || best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.store.clone()));
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok((model, TrainReport { epochs, best_epoch }))
}
