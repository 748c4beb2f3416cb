//! Destination-conditioned next-segment scoring and travel-time prediction.

use std::f64::consts::PI;

use rand::Rng;

use crate::diffcore::{Array, Graph, ParamId, ParamStore, Var};
use crate::roadnet::{RoadNetwork, SegmentId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NavError {
    #[error("segment {0} has no reachable successor")]
    DeadEnd(SegmentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavigatorParams {
    pub d: usize,
    /// Zero the destination-zone query half and the metric key half.
    pub disable_nav: bool,
    pub w_q: ParamId,
    pub w_k: ParamId,
    /// `d × 1`.
    pub w_v: ParamId,
    /// `1 × d` projections of the normalized distance and angle.
    pub theta_d: ParamId,
    pub theta_phi: ParamId,
    pub time1: (ParamId, ParamId),
    pub time2: (ParamId, ParamId),
}

impl NavigatorParams {
    pub fn register(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            d,
            disable_nav: false,
            w_q: store.xavier("nav.w_q", 3 * d, d, rng),
            w_k: store.xavier("nav.w_k", 3 * d, d, rng),
            w_v: store.xavier("nav.w_v", d, 1, rng),
            theta_d: store.xavier("nav.theta_d", 1, d, rng),
            theta_phi: store.xavier("nav.theta_phi", 1, d, rng),
            time1: (store.xavier("nav.time1.w", 3 * d, d, rng), store.zeros("nav.time1.b", 1, d)),
            time2: (store.xavier("nav.time2.w", d, 1, rng), store.zeros("nav.time2.b", 1, 1)),
        }
    }
}

/// Normalized (distance, angle) of each candidate relative to `dest`:
/// `ln(1 + d_c - min d)` in km and the heading-to-destination angle over π.
pub fn metric_inputs(net: &RoadNetwork, candidates: &[SegmentId], dest: SegmentId) -> Vec<(f64, f64)> {
    let dists: Vec<f64> = candidates.iter().map(|&c| net.segment_distance(c, dest)).collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .zip(&dists)
        .map(|(&c, &dist)| ((dist - min).ln_1p(), net.heading_angle_to(c, dest) / PI))
        .collect()
}

/// `C × 2d` metric features `d̂·θ_d ∥ φ̂·θ_φ` (zeros when navigation is disabled).
pub fn metric_features(g: &mut Graph, store: &ParamStore, p: &NavigatorParams, inputs: &[(f64, f64)]) -> Var {
    if p.disable_nav {
        return g.constant(Array::zeros(inputs.len(), 2 * p.d));
    }
    let dcol = g.constant(Array::col_vector(inputs.iter().map(|x| x.0).collect()));
    let pcol = g.constant(Array::col_vector(inputs.iter().map(|x| x.1).collect()));
    let td = g.param(store, p.theta_d);
    let tp = g.param(store, p.theta_phi);
    let a = g.matmul(dcol, td);
    let b = g.matmul(pcol, tp);
    g.concat_cols(&[a, b])
}

/// `(τ ∥ z_dest) W_q` for every step.
pub fn query(g: &mut Graph, store: &ParamStore, p: &NavigatorParams, tau: Var, z_dest: Var) -> Var {
    let z_dest = if p.disable_nav { g.constant(Array::zeros(g.shape(z_dest)[0], p.d)) } else { z_dest };
    let wq = g.param(store, p.w_q);
    let x = g.concat_cols(&[tau, z_dest]);
    g.matmul(x, wq)
}

/// Additive-attention logits, one per candidate row. `q` holds the query of
/// each candidate's step, `v_c` and `metric` its embedding and features.
pub fn candidate_logits(g: &mut Graph, store: &ParamStore, p: &NavigatorParams, q: Var, v_c: Var, metric: Var) -> Var {
    let wk = g.param(store, p.w_k);
    let wv = g.param(store, p.w_v);
    let key_in = g.concat_cols(&[v_c, metric]);
    let key = g.matmul(key_in, wk);
    let s = g.add(q, key);
    let s = g.tanh(s);
    g.matmul(s, wv)
}

/// Predicted interval in minutes, `softplus(MLP(τ ∥ v_c))`, one per row.
pub fn time_interval(g: &mut Graph, store: &ParamStore, p: &NavigatorParams, tau: Var, v_c: Var) -> Var {
    let [w1, b1, w2, b2] = [p.time1.0, p.time1.1, p.time2.0, p.time2.1].map(|id| g.param(store, id));
    let x = g.concat_cols(&[tau, v_c]);
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let o = g.matmul(h, w2);
    let o = g.add_row(o, b2);
    g.softplus(o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub candidate: SegmentId,
    pub logit: f64,
    pub probability: f64,
    /// Predicted interval to reach the candidate, minutes.
    pub dt_minutes: f64,
}

/// Scores every reachable successor of `current` for one prefix encoding
/// `tau`. `v` is the road representation table.
pub fn next_segment_distribution(
    store: &ParamStore,
    p: &NavigatorParams,
    tau: &[f64],
    z_dest: &[f64],
    v: &Array,
    net: &RoadNetwork,
    current: SegmentId,
    dest: SegmentId,
) -> Result<Vec<CandidateScore>, NavError> {
    score_candidates(store, p, tau, z_dest, v, net, net.successors(current), dest).map_err(|_| NavError::DeadEnd(current))
}

/// Same as [`next_segment_distribution`] over an explicit candidate list.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    store: &ParamStore,
    p: &NavigatorParams,
    tau: &[f64],
    z_dest: &[f64],
    v: &Array,
    net: &RoadNetwork,
    candidates: &[SegmentId],
    dest: SegmentId,
) -> Result<Vec<CandidateScore>, NavError> {
    if candidates.is_empty() {
        return Err(NavError::DeadEnd(usize::MAX));
    }
    let c = candidates.len();
    let mut g = Graph::new();
    let tau_v = g.constant(Array::row_vector(tau.to_vec()));
    let zd = g.constant(Array::row_vector(z_dest.to_vec()));
    let q = query(&mut g, store, p, tau_v, zd);
    let q = g.gather_rows(q, &vec![0; c]);
    let mut rows = Array::zeros(c, v.cols());
    for (r, &s) in candidates.iter().enumerate() {
        rows.row_mut(r).copy_from_slice(v.row(s));
    }
    let v_c = g.constant(rows);
    let metric = metric_features(&mut g, store, p, &metric_inputs(net, candidates, dest));
    let logits = candidate_logits(&mut g, store, p, q, v_c, metric);
    let probs = g.segment_softmax(logits, &vec![0; c]);
    let taus = g.gather_rows(tau_v, &vec![0; c]);
    let dt = time_interval(&mut g, store, p, taus, v_c);
    Ok((0..c)
        .map(|r| CandidateScore {
            candidate: candidates[r],
            logit: g.value(logits).get(r, 0),
            probability: g.value(probs).get(r, 0),
            dt_minutes: g.value(dt).get(r, 0),
        })
        .collect())
}

pub fn predict_time_interval(store: &ParamStore, p: &NavigatorParams, tau: &[f64], v_c: &[f64]) -> f64 {
    let mut g = Graph::new();
    let t = g.constant(Array::row_vector(tau.to_vec()));
    let v = g.constant(Array::row_vector(v_c.to_vec()));
    let out = time_interval(&mut g, store, p, t, v);
    g.value(out).item()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::roadnet::RoadSegment;
    use crate::synth::{grid_network, GridSpec};

    fn setup(d: usize) -> (ParamStore, NavigatorParams, ChaCha8Rng) {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let p = NavigatorParams::register(&mut s, d, &mut r);
        (s, p, r)
    }

    fn rand_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn rand_table(n: usize, d: usize, r: &mut ChaCha8Rng) -> Array {
        Array::from_vec(n, d, rand_vec(n * d, r))
    }

    fn line_net() -> RoadNetwork {
        // three candidates north of the origin at 0.01 degree steps, all heading north
        let seg = |id: usize, lat: f64| RoadSegment { id, length_m: 100.0, road_type: 0, lon: 0.0, lat, bearing: Some(0.0) };
        RoadNetwork::new(vec![seg(0, 0.0), seg(1, 0.01), seg(2, 0.02), seg(3, 0.03)], vec![]).unwrap()
    }

    #[test]
    fn metric_inputs_examples() {
        let net = line_net();
        let m = metric_inputs(&net, &[1, 2], 3);
        // candidate 2 is closest: zero distance feature; both point at dest
        assert_eq!(m[1].0, 0.0);
        assert!(m[0].0 > 0.0);
        assert_eq!((m[0].1, m[1].1), (0.0, 0.0));
        // from 3, destination 0 is straight behind
        let back = metric_inputs(&net, &[3], 0);
        assert!((back[0].1 - 1.0).abs() < 1e-12);
        let expect = (net.segment_distance(1, 3) - net.segment_distance(2, 3)).ln_1p();
        assert_eq!(m[0].0, expect);
    }

    #[test]
    fn metric_features_halves() {
        let (s, p, _) = setup(4);
        let mut g = Graph::new();
        let h = metric_features(&mut g, &s, &p, &[(0.0, 0.3), (0.7, 1.0)]);
        let h = g.value(h);
        assert_eq!(&h.row(0)[..4], &[0.0; 4]);
        assert_eq!(&h.row(1)[4..], s.get(p.theta_phi).data());
        let scaled: Vec<f64> = s.get(p.theta_d).data().iter().map(|x| 0.7 * x).collect();
        assert_eq!(&h.row(1)[..4], &scaled[..]);
    }

    #[test]
    fn distribution_sums_to_one() {
        let net = grid_network(&GridSpec { rows: 4, cols: 4, ..Default::default() }).unwrap();
        let (s, p, mut r) = setup(8);
        let v = rand_table(net.num_segments(), 8, &mut r);
        for cur in 0..net.num_segments() {
            let dest = r.random_range(0..net.num_segments());
            let scores = next_segment_distribution(&s, &p, &rand_vec(16, &mut r), &rand_vec(8, &mut r), &v, &net, cur, dest).unwrap();
            let total: f64 = scores.iter().map(|c| c.probability).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(scores.iter().all(|c| c.dt_minutes > 0.0));
        }
    }

    #[test]
    fn single_candidate_and_zero_parameters() {
        let net = grid_network(&GridSpec { rows: 3, cols: 3, ..Default::default() }).unwrap();
        let (mut s, p, mut r) = setup(8);
        let v = rand_table(net.num_segments(), 8, &mut r);
        let (tau, zd) = (rand_vec(16, &mut r), rand_vec(8, &mut r));
        let one = score_candidates(&s, &p, &tau, &zd, &v, &net, &[4], 7).unwrap();
        assert_eq!(one[0].probability, 1.0);

        let ids: Vec<ParamId> = s.ids().collect();
        for id in ids {
            s.get_mut(id).data_mut().fill(0.0);
        }
        let cur = (0..net.num_segments()).find(|&c| net.successors(c).len() == 3).unwrap();
        let scores = next_segment_distribution(&s, &p, &tau, &zd, &v, &net, cur, 0).unwrap();
        assert!(scores.iter().all(|c| (c.probability - 1.0 / 3.0).abs() < 1e-15));
        assert!(scores.iter().all(|c| (c.dt_minutes - 2f64.ln()).abs() < 1e-15));
        assert_eq!(predict_time_interval(&s, &p, &tau, &v.row(0).to_vec()), 2f64.ln());
    }

    #[test]
    fn dead_end_reported() {
        let net = line_net();
        let (s, p, mut r) = setup(4);
        let v = rand_table(4, 4, &mut r);
        assert_eq!(
            next_segment_distribution(&s, &p, &rand_vec(8, &mut r), &rand_vec(4, &mut r), &v, &net, 2, 3),
            Err(NavError::DeadEnd(2))
        );
    }

    #[test]
    fn three_candidates_by_hand() {
        // d = 1: tau has 2 entries, z_dest 1, v_c 1, h 2
        let mut s = ParamStore::new();
        let p = NavigatorParams {
            d: 1,
            disable_nav: false,
            w_q: s.register("wq", Array::col_vector(vec![0.5, -0.2, 0.1])),
            w_k: s.register("wk", Array::col_vector(vec![0.3, 0.4, -0.6])),
            w_v: s.register("wv", Array::scalar(2.0)),
            theta_d: s.register("td", Array::scalar(1.5)),
            theta_phi: s.register("tp", Array::scalar(-1.0)),
            time1: (s.register("t1w", Array::col_vector(vec![0.0; 3])), s.register("t1b", Array::scalar(0.0))),
            time2: (s.register("t2w", Array::scalar(0.0)), s.register("t2b", Array::scalar(0.0))),
        };
        let net = line_net();
        let v = Array::col_vector(vec![0.0, 1.0, -1.0, 0.5]);
        let (tau, zd) = ([0.4, 0.8], [-0.3]);
        let cands = [1, 2, 3];
        let scores = score_candidates(&s, &p, &tau, &zd, &v, &net, &cands, 3).unwrap();

        let q = 0.5 * tau[0] - 0.2 * tau[1] + 0.1 * zd[0];
        let metric = metric_inputs(&net, &cands, 3);
        let logits: Vec<f64> = cands
            .iter()
            .zip(&metric)
            .map(|(&c, &(dh, ph))| {
                let key = 0.3 * v.get(c, 0) + 0.4 * (1.5 * dh) - 0.6 * (-1.0 * ph);
                2.0 * (q + key).tanh()
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (sc, l) in scores.iter().zip(&logits) {
            assert!((sc.logit - l).abs() < 1e-15);
            assert!((sc.probability - l.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_invariance_and_reordering() {
        let net = grid_network(&GridSpec { rows: 4, cols: 4, ..Default::default() }).unwrap();
        let (s, p, mut r) = setup(8);
        let v = rand_table(net.num_segments(), 8, &mut r);
        for cur in 0..net.num_segments() {
            let cands = net.successors(cur).to_vec();
            if cands.len() < 2 {
                continue;
            }
            let (tau, zd) = (rand_vec(16, &mut r), rand_vec(8, &mut r));
            let a = score_candidates(&s, &p, &tau, &zd, &v, &net, &cands, 0).unwrap();
            let mut g = Graph::new();
            let shifted = g.constant(Array::col_vector(a.iter().map(|c| c.logit + 3.7).collect()));
            let probs = g.segment_softmax(shifted, &vec![0; cands.len()]);
            for (k, c) in a.iter().enumerate() {
                assert!((g.value(probs).get(k, 0) - c.probability).abs() < 1e-12);
            }
            let rev: Vec<SegmentId> = cands.iter().rev().copied().collect();
            let b = score_candidates(&s, &p, &tau, &zd, &v, &net, &rev, 0).unwrap();
            let best = |x: &[CandidateScore]| x.iter().max_by(|p, q| p.probability.total_cmp(&q.probability)).unwrap().candidate;
            assert_eq!(best(&a), best(&b));
        }
    }

    #[test]
    fn disabled_navigation_ignores_destination() {
        let net = grid_network(&GridSpec { rows: 4, cols: 4, ..Default::default() }).unwrap();
        let (s, mut p, mut r) = setup(8);
        p.disable_nav = true;
        let v = rand_table(net.num_segments(), 8, &mut r);
        let tau = rand_vec(16, &mut r);
        let a = next_segment_distribution(&s, &p, &tau, &rand_vec(8, &mut r), &v, &net, 5, 0).unwrap();
        let b = next_segment_distribution(&s, &p, &tau, &rand_vec(8, &mut r), &v, &net, 5, 40).unwrap();
        assert_eq!(a, b);
    }
}
