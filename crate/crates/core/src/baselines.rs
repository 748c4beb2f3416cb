//! Reference generators: a first-order Markov chain over segments (greedy
//! rollout or plugged into the search), and length-shortest paths.

use serde::{Deserialize, Serialize};

use crate::roadnet::routing::{length_km_cost, shortest_path};
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::search::{self, Expansion, GenRequest, Policy, SearchError};
use crate::trajectory::{TrajPoint, Trajectory};

/// Constant speed used to time Dijkstra paths and unseen Markov states.
pub const DEFAULT_SPEED_KMH: f64 = 30.0;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BaselineError {
    #[error("trajectory {id}: {from} -> {to} is not a reachable intersection")]
    Unreachable { id: u64, from: SegmentId, to: SegmentId },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no path from {org} to {dest}")]
    NoPath { org: SegmentId, dest: SegmentId },
    #[error("rollout from {org} did not reach {dest} within {cap} steps")]
    StepCap { org: SegmentId, dest: SegmentId, cap: usize },
    #[error(transparent)]
    Search(#[from] SearchError),
}

fn seconds_at(length_m: f64, kmh: f64) -> f64 {
    length_m / 1000.0 / kmh * 3600.0
}

/// Transition counts over reachable successors with add-one smoothing, and
/// the mean time spent on each segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    /// `counts[r][i]` counts moves from `r` to its `i`-th successor.
    pub counts: Vec<Vec<u64>>,
    /// Mean seconds between entering a segment and entering the next.
    pub dwell_secs: Vec<f64>,
}

/// Fits transition counts and dwell times. Segments never left in the data
/// get a uniform distribution and a dwell time at [`DEFAULT_SPEED_KMH`].
pub fn markov_fit(trajs: &[Trajectory], net: &RoadNetwork) -> Result<MarkovModel, BaselineError> {
    let n = net.num_segments();
    let mut counts: Vec<Vec<u64>> = (0..n).map(|r| vec![0; net.successors(r).len()]).collect();
    let mut dwell = vec![(0.0, 0u64); n];
    for t in trajs {
        for w in t.points.windows(2) {
            let (from, to) = (w[0].segment, w[1].segment);
            let bad = BaselineError::Unreachable { id: t.id, from, to };
            if from >= n {
                return Err(bad);
            }
            let i = net.successors(from).binary_search(&to).map_err(|_| bad)?;
            counts[from][i] += 1;
            dwell[from].0 += w[1].time - w[0].time;
            dwell[from].1 += 1;
        }
    }
    let dwell_secs = dwell
        .iter()
        .enumerate()
        .map(|(r, &(sum, k))| if k > 0 { sum / k as f64 } else { seconds_at(net.segment(r).length_m, DEFAULT_SPEED_KMH) })
        .collect();
    Ok(MarkovModel { counts, dwell_secs })
}

impl MarkovModel {
    /// Smoothed probabilities over `net.successors(r)`, in that order.
    pub fn probabilities(&self, r: SegmentId) -> Vec<f64> {
        let c = &self.counts[r];
        let total = c.iter().sum::<u64>() as f64 + c.len() as f64;
        c.iter().map(|&k| (k as f64 + 1.0) / total).collect()
    }
}

impl Policy for MarkovModel {
    fn expand(&self, net: &RoadNetwork, prefix: &[TrajPoint], _dest: SegmentId) -> Vec<Expansion> {
        let r = prefix.last().expect("non-empty prefix").segment;
        let dt = self.dwell_secs[r];
        net.successors(r)
            .iter()
            .zip(self.probabilities(r))
            .map(|(&s, p)| Expansion { segment: s, log_prob: p.ln(), dt_secs: dt })
            .collect()
    }
}

fn check(net: &RoadNetwork, req: &GenRequest) -> Result<(), BaselineError> {
    for id in [req.r_org, req.r_dest] {
        net.check_id(id).map_err(|e| BaselineError::InvalidRequest(e.to_string()))?;
    }
    Ok(())
}

/// Follows the most probable successor (lowest id on ties) until the
/// destination or `cap` moves.
pub fn markov_generate(model: &MarkovModel, net: &RoadNetwork, req: &GenRequest, cap: usize) -> Result<Trajectory, BaselineError> {
    check(net, req)?;
    let mut points = vec![TrajPoint { segment: req.r_org, time: req.t_org }];
    let mut cur = req.r_org;
    while cur != req.r_dest {
        let succ = net.successors(cur);
        if points.len() > cap || succ.is_empty() {
            return Err(BaselineError::StepCap { org: req.r_org, dest: req.r_dest, cap });
        }
        let probs = model.probabilities(cur);
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        let t = points.last().expect("non-empty").time + model.dwell_secs[cur];
        cur = succ[best];
        points.push(TrajPoint { segment: cur, time: t });
    }
    Ok(Trajectory::new(0, points))
}

/// The search with the Markov model as its policy.
pub fn markov_star_generate(model: &MarkovModel, net: &RoadNetwork, req: &GenRequest) -> Result<Trajectory, BaselineError> {
    Ok(search::generate_trajectory(model, net, req)?)
}

/// Shortest path by total segment length, timed at a constant speed.
pub fn dijkstra_generate(net: &RoadNetwork, req: &GenRequest, speed_kmh: f64) -> Result<Trajectory, BaselineError> {
    check(net, req)?;
    let (_, path) = shortest_path(net, req.r_org, req.r_dest, length_km_cost(net))
        .ok_or(BaselineError::NoPath { org: req.r_org, dest: req.r_dest })?;
    let mut t = req.t_org;
    let mut points = Vec::with_capacity(path.len());
    for (i, &s) in path.iter().enumerate() {
        if i > 0 {
            t += seconds_at(net.segment(path[i - 1]).length_m, speed_kmh);
        }
        points.push(TrajPoint { segment: s, time: t });
    }
    Ok(Trajectory::new(0, points))
}
