#![allow(dead_code)]

use std::collections::HashMap;

use hoser::roadnet::geo::{haversine_km, LonLat};
use hoser::roadnet::{Intersection, RoadNetwork, RoadSegment, SegmentId};
use hoser::search::{Expansion, Policy};
use hoser::trajectory::TrajPoint;
use rand::Rng;

/// Random directed graph; every node has either no successors or 2 to 4.
pub fn random_graph(rng: &mut impl Rng, n: usize) -> RoadNetwork {
    let segs = (0..n)
        .map(|i| RoadSegment {
            id: i,
            length_m: rng.random_range(50.0..800.0),
            road_type: rng.random_range(0..3),
            lon: 116.3 + rng.random_range(0.0..0.05),
            lat: 39.9 + rng.random_range(0.0..0.05),
            bearing: None,
        })
        .collect();
    let mut edges = Vec::new();
    for from in 0..n {
        if rng.random_bool(0.1) {
            continue;
        }
        let k = rng.random_range(2..=4).min(n - 1);
        let mut targets: Vec<usize> = Vec::new();
        while targets.len() < k {
            let to = rng.random_range(0..n);
            if to != from && !targets.contains(&to) {
                targets.push(to);
            }
        }
        for to in targets {
            edges.push(Intersection { from, to, reachable: true, angle: rng.random_range(0.0..std::f64::consts::PI) });
        }
    }
    RoadNetwork::new(segs, edges).unwrap()
}

/// Fixed move probabilities per segment, aligned with `net.successors`.
pub struct TablePolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TablePolicy {
    /// Random probabilities, or uniform ones (which make cost ties common).
    pub fn random(net: &RoadNetwork, rng: &mut impl Rng, uniform: bool) -> Self {
        let probs = (0..net.num_segments())
            .map(|r| {
                let k = net.successors(r).len();
                let w: Vec<f64> = (0..k).map(|_| if uniform { 1.0 } else { rng.random_range(0.05..1.0) }).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        Self { probs }
    }

    pub fn prob(&self, net: &RoadNetwork, a: SegmentId, b: SegmentId) -> f64 {
        let i = net.successors(a).binary_search(&b).unwrap();
        self.probs[a][i]
    }
}

impl Policy for TablePolicy {
    fn expand(&self, net: &RoadNetwork, prefix: &[TrajPoint], _dest: SegmentId) -> Vec<Expansion> {
        let r = prefix.last().unwrap().segment;
        net.successors(r).iter().zip(&self.probs[r]).map(|(&s, &p)| Expansion { segment: s, log_prob: p.ln(), dt_secs: 45.0 }).collect()
    }
}

/// Array-scan Dijkstra over labels `(cost, path)` ordered by cost, then by
/// the path's segment ids lexicographically.
pub fn dijkstra_oracle(net: &RoadNetwork, org: SegmentId, dest: SegmentId, weight: impl Fn(SegmentId, SegmentId) -> f64) -> Option<Vec<SegmentId>> {
    let n = net.num_segments();
    let mut label: Vec<Option<(f64, Vec<SegmentId>)>> = vec![None; n];
    let mut done = vec![false; n];
    label[org] = Some((0.0, vec![org]));
    loop {
        let mut pick: Option<usize> = None;
        for u in 0..n {
            if done[u] {
                continue;
            }
            let Some((c, p)) = &label[u] else { continue };
            let better = match pick {
                None => true,
                Some(v) => {
                    let (cv, pv) = label[v].as_ref().unwrap();
                    c < cv || (c == cv && p < pv)
                }
            };
            if better {
                pick = Some(u);
            }
        }
        let u = pick?;
        done[u] = true;
        let (cu, pu) = label[u].clone().unwrap();
        if u == dest {
            return Some(pu);
        }
        for &s in net.successors(u) {
            if done[s] {
                continue;
            }
            let c = cu + weight(u, s);
            let mut p = pu.clone();
            p.push(s);
            let replace = match &label[s] {
                None => true,
                Some((cs, ps)) => c < *cs || (c == *cs && p < *ps),
            };
            if replace {
                label[s] = Some((c, p));
            }
        }
    }
}

pub fn random_points(rng: &mut impl Rng, len: usize) -> Vec<LonLat> {
    (0..len).map(|_| LonLat::new(116.3 + rng.random_range(0.0..0.01), 39.9 + rng.random_range(0.0..0.01))).collect()
}

pub fn hausdorff_brute(a: &[LonLat], b: &[LonLat]) -> f64 {
    let mut h: f64 = 0.0;
    for &p in a {
        let mut m = f64::INFINITY;
        for &q in b {
            m = m.min(haversine_km(p, q));
        }
        h = h.max(m);
    }
    for &q in b {
        let mut m = f64::INFINITY;
        for &p in a {
            m = m.min(haversine_km(p, q));
        }
        h = h.max(m);
    }
    h
}

/// Minimum over every monotone alignment from (0, 0) to (n-1, m-1).
pub fn dtw_enumerate(a: &[LonLat], b: &[LonLat]) -> f64 {
    fn go(a: &[LonLat], b: &[LonLat], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + haversine_km(a[i], b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Edit distance from its recursive definition, memoized, normalized by
/// the longer length.
pub fn edr_recursive(a: &[LonLat], b: &[LonLat], threshold_km: f64) -> f64 {
    fn go(a: &[LonLat], b: &[LonLat], eps: f64, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let sub = usize::from(haversine_km(a[0], b[0]) > eps);
        let v = (go(&a[1..], &b[1..], eps, memo) + sub).min(go(&a[1..], b, eps, memo) + 1).min(go(a, &b[1..], eps, memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, threshold_km, &mut HashMap::new()) as f64 / a.len().max(b.len()) as f64
}
