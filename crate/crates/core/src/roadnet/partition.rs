//! Balanced k-way zone partitioning of the undirected intersection graph and
//! inter-zone flow counting.
//!
//! Multilevel scheme: coarsen by heavy-edge matching, grow an initial
//! partition greedily on the coarsest graph, then project back level by level
//! with boundary refinement. A final repair pass on the original graph
//! guarantees the balance bound and that no zone is empty.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RoadNetwork, SegmentId};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("zone count {k} must be in 1..={n}")]
    BadZoneCount { k: usize, n: usize },
    #[error("balance slack must be finite and non-negative, got {0}")]
    BadSlack(f64),
}

/// Symmetric `k × k` matrix of inter-zone transition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    k: usize,
    data: Vec<f64>,
}

impl FlowMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, data: vec![0.0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.len();
        let data = rows.iter().flat_map(|r| {
            assert_eq!(r.len(), k, "flow matrix must be square");
            r.iter().copied()
        });
        Self { k, data: data.collect() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    fn add_pair(&mut self, i: usize, j: usize, w: f64) {
        self.data[i * self.k + j] += w;
        self.data[j * self.k + i] += w;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k.max(1)).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    pub k: usize,
    pub zone_of: Vec<usize>,
    pub flow: FlowMatrix,
}

impl ZonePartition {
    /// Builds a partition from an explicit assignment (zone ids `0..k`).
    pub fn from_assignment(k: usize, zone_of: Vec<usize>) -> Self {
        assert!(zone_of.iter().all(|&z| z < k), "zone id out of range");
        Self { k, zone_of, flow: FlowMatrix::zeros(k) }
    }

    pub fn zone(&self, seg: SegmentId) -> usize {
        self.zone_of[seg]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &z in &self.zone_of {
            s[z] += 1;
        }
        s
    }

    /// Largest zone size allowed by slack `eps`: ⌈(1+ε)·|V|/k⌉.
    pub fn balance_cap(n: usize, k: usize, eps: f64) -> usize {
        ((1.0 + eps) * n as f64 / k as f64 - 1e-9).ceil() as usize
    }

    pub fn with_flow(mut self, flow: FlowMatrix) -> Self {
        assert_eq!(flow.k(), self.k);
        self.flow = flow;
        self
    }
}

/// `max(2, ⌈|V|/500⌉)`, clipped to the segment count.
pub fn default_zone_count(n: usize) -> usize {
    n.div_ceil(500).max(2).min(n)
}

/// Undirected weighted graph used during coarsening.
#[derive(Debug, Clone)]
struct WGraph {
    vwgt: Vec<usize>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl WGraph {
    fn from_network(net: &RoadNetwork) -> Self {
        let n = net.num_segments();
        let mut maps: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n];
        for e in net.intersections() {
            if e.from != e.to {
                *maps[e.from].entry(e.to).or_default() += 1;
                *maps[e.to].entry(e.from).or_default() += 1;
            }
        }
        Self { vwgt: vec![1; n], adj: maps.into_iter().map(|m| m.into_iter().collect()).collect() }
    }

    fn len(&self) -> usize {
        self.vwgt.len()
    }

    fn total_weight(&self) -> usize {
        self.vwgt.iter().sum()
    }

    /// Heavy-edge matching. Returns the coarse graph and the fine→coarse map.
    fn coarsen(&self, rng: &mut ChaCha8Rng, max_vwgt: usize) -> (WGraph, Vec<usize>) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut mate = vec![usize::MAX; n];
        for &u in &order {
            if mate[u] != usize::MAX {
                continue;
            }
            let best = self.adj[u]
                .iter()
                .filter(|&&(v, _)| v != u && mate[v] == usize::MAX && self.vwgt[u] + self.vwgt[v] <= max_vwgt)
                .max_by(|a, b| a.1.cmp(&b.1).then(self.vwgt[b.0].cmp(&self.vwgt[a.0])).then(b.0.cmp(&a.0)));
            match best {
                Some(&(v, _)) => {
                    mate[u] = v;
                    mate[v] = u;
                }
                None => mate[u] = u,
            }
        }
        let mut cmap = vec![usize::MAX; n];
        let mut next = 0;
        for u in 0..n {
            if cmap[u] == usize::MAX {
                cmap[u] = next;
                cmap[mate[u]] = next;
                next += 1;
            }
        }
        let mut vwgt = vec![0; next];
        let mut maps: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); next];
        for u in 0..n {
            vwgt[cmap[u]] += self.vwgt[u];
            for &(v, w) in &self.adj[u] {
                let (cu, cv) = (cmap[u], cmap[v]);
                if cu != cv {
                    *maps[cu].entry(cv).or_default() += w;
                }
            }
        }
        (WGraph { vwgt, adj: maps.into_iter().map(|m| m.into_iter().collect()).collect() }, cmap)
    }

    /// Vertex farthest (in hops, within unassigned vertices) from the
    /// lowest-id unassigned vertex.
    fn peripheral_seed(&self, part: &[usize]) -> Option<usize> {
        let start = (0..self.len()).find(|&v| part[v] == usize::MAX)?;
        let mut dist = vec![usize::MAX; self.len()];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            last = u;
            for &(v, _) in &self.adj[u] {
                if part[v] == usize::MAX && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        Some(last)
    }

    fn grow_initial(&self, k: usize) -> Vec<usize> {
        let n = self.len();
        let mut part = vec![usize::MAX; n];
        let mut remaining_w = self.total_weight() as f64;
        let mut unassigned = n;
        for p in 0..k {
            if p == k - 1 {
                part.iter_mut().filter(|z| **z == usize::MAX).for_each(|z| *z = p);
                break;
            }
            let target = remaining_w / (k - p) as f64;
            let Some(seed) = self.peripheral_seed(&part) else { break };
            let mut conn = vec![0usize; n];
            let mut w = 0.0;
            let take = |v: usize, part: &mut Vec<usize>, conn: &mut Vec<usize>, w: &mut f64| {
                part[v] = p;
                *w += self.vwgt[v] as f64;
                for &(u, ew) in &self.adj[v] {
                    conn[u] += ew;
                }
            };
            take(seed, &mut part, &mut conn, &mut w);
            unassigned -= 1;
            while w < target && unassigned > k - p - 1 {
                let next = (0..n)
                    .filter(|&v| part[v] == usize::MAX && conn[v] > 0)
                    .filter(|&v| w + self.vwgt[v] as f64 / 2.0 <= target)
                    .max_by(|&a, &b| conn[a].cmp(&conn[b]).then(b.cmp(&a)));
                let next = match next {
                    Some(v) => v,
                    // frontier exhausted: continue in another component
                    None if (0..n).all(|v| part[v] != usize::MAX || conn[v] == 0) => {
                        match (0..n).find(|&v| part[v] == usize::MAX && w + self.vwgt[v] as f64 / 2.0 <= target) {
                            Some(v) => v,
                            None => break,
                        }
                    }
                    None => break,
                };
                take(next, &mut part, &mut conn, &mut w);
                unassigned -= 1;
            }
            remaining_w -= w;
        }
        part
    }

    /// Greedy boundary refinement: move vertices to neighbouring zones when
    /// that reduces cut weight (or keeps it while improving balance).
    fn refine(&self, part: &mut [usize], k: usize, cap: usize) {
        let mut pw = vec![0usize; k];
        let mut count = vec![0usize; k];
        for v in 0..self.len() {
            pw[part[v]] += self.vwgt[v];
            count[part[v]] += 1;
        }
        let mut conn = vec![0usize; k];
        for _ in 0..10 {
            let mut moved = false;
            for v in 0..self.len() {
                let own = part[v];
                if count[own] <= 1 {
                    continue;
                }
                for &(u, _) in &self.adj[v] {
                    conn[part[u]] = 0;
                }
                conn[own] = 0;
                for &(u, w) in &self.adj[v] {
                    conn[part[u]] += w;
                }
                let internal = conn[own] as i64;
                let w = self.vwgt[v];
                let best = self.adj[v]
                    .iter()
                    .map(|&(u, _)| part[u])
                    .filter(|&q| q != own && pw[q] + w <= cap)
                    .map(|q| (conn[q] as i64 - internal, q))
                    .filter(|&(gain, q)| gain > 0 || (gain == 0 && pw[q] + w < pw[own]))
                    .max_by(|a, b| a.0.cmp(&b.0).then(pw[b.1].cmp(&pw[a.1])).then(b.1.cmp(&a.1)));
                if let Some((_, q)) = best {
                    part[v] = q;
                    pw[own] -= w;
                    pw[q] += w;
                    count[own] -= 1;
                    count[q] += 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }

    /// Enforces non-empty zones and the balance cap on a unit-weight graph.
    fn repair(&self, part: &mut [usize], k: usize, cap: usize) {
        let n = self.len();
        let mut size = vec![0usize; k];
        for &p in part.iter() {
            size[p] += 1;
        }
        let conn_to = |part: &[usize], v: usize, q: usize| -> i64 {
            self.adj[v].iter().filter(|&&(u, _)| part[u] == q).map(|&(_, w)| w as i64).sum()
        };
        for empty in 0..k {
            if size[empty] > 0 {
                continue;
            }
            let donor = (0..k).max_by(|&a, &b| size[a].cmp(&size[b]).then(b.cmp(&a))).expect("k >= 1");
            let v = (0..n)
                .filter(|&v| part[v] == donor)
                .min_by_key(|&v| (conn_to(part, v, donor), v))
                .expect("donor zone is non-empty");
            part[v] = empty;
            size[donor] -= 1;
            size[empty] += 1;
        }
        while let Some(over) = (0..k).filter(|&p| size[p] > cap).max_by_key(|&p| size[p]) {
            let mut best: Option<(i64, usize, usize)> = None;
            for v in (0..n).filter(|&v| part[v] == over) {
                let internal = conn_to(part, v, over);
                for &(u, _) in &self.adj[v] {
                    let q = part[u];
                    if q != over && size[q] < cap {
                        let gain = conn_to(part, v, q) - internal;
                        if best.is_none_or(|b| gain > b.0) {
                            best = Some((gain, v, q));
                        }
                    }
                }
            }
            let (v, q) = match best {
                Some((_, v, q)) => (v, q),
                None => {
                    let q = (0..k).min_by_key(|&p| (size[p], p)).expect("k >= 1");
                    let v = (0..n)
                        .filter(|&v| part[v] == over)
                        .min_by_key(|&v| (conn_to(part, v, over), v))
                        .expect("overweight zone is non-empty");
                    (v, q)
                }
            };
            part[v] = q;
            size[over] -= 1;
            size[q] += 1;
        }
    }
}

/// Partitions segments into `k` balanced zones (zone sizes at most
/// ⌈(1+ε)|V|/k⌉). Deterministic for a given seed.
pub fn partition_zones(net: &RoadNetwork, k: usize, eps: f64, seed: u64) -> Result<ZonePartition, PartitionError> {
    let n = net.num_segments();
    if k == 0 || k > n {
        return Err(PartitionError::BadZoneCount { k, n });
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(PartitionError::BadSlack(eps));
    }
    if k == 1 {
        return Ok(ZonePartition::from_assignment(1, vec![0; n]));
    }
    if k == n {
        return Ok(ZonePartition::from_assignment(k, (0..n).collect()));
    }
    let cap = ZonePartition::balance_cap(n, k, eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = WGraph::from_network(net);
    let coarsen_to = (8 * k).max(32);
    let max_vwgt = (n.div_ceil(k) / 2).max(1);

    let mut levels: Vec<(WGraph, Vec<usize>)> = Vec::new();
    let mut current = base.clone();
    while current.len() > coarsen_to {
        let (coarse, cmap) = current.coarsen(&mut rng, max_vwgt);
        if coarse.len() as f64 > 0.9 * current.len() as f64 {
            break;
        }
        levels.push((std::mem::replace(&mut current, coarse), cmap));
    }

    let mut part = current.grow_initial(k);
    current.refine(&mut part, k, cap);
    while let Some((finer, cmap)) = levels.pop() {
        part = cmap.iter().map(|&c| part[c]).collect();
        finer.refine(&mut part, k, cap);
    }
    base.repair(&mut part, k, cap);
    base.refine(&mut part, k, cap);
    Ok(ZonePartition::from_assignment(k, part))
}

/// Number of undirected adjacent segment pairs whose zones differ.
pub fn cut_edges(net: &RoadNetwork, zone_of: &[usize]) -> usize {
    let g = WGraph::from_network(net);
    (0..g.len())
        .flat_map(|u| g.adj[u].iter().map(move |&(v, _)| (u, v)))
        .filter(|&(u, v)| u < v && zone_of[u] != zone_of[v])
        .count()
}

/// Symmetrized count of consecutive trajectory steps that cross zones.
pub fn zone_flow_matrix(partition: &ZonePartition, trajectories: &[Trajectory]) -> FlowMatrix {
    let mut f = FlowMatrix::zeros(partition.k);
    for t in trajectories {
        for w in t.points.windows(2) {
            let (a, b) = (partition.zone(w[0].segment), partition.zone(w[1].segment));
            if a != b {
                f.add_pair(a, b, 1.0);
            }
        }
    }
    f
}
