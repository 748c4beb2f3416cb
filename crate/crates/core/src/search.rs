//! Maximum-probability trajectory search: best-first expansion over
//! cumulative negative log-probability, one label per segment.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Frozen, Hoser};
use crate::roadnet::{RoadNetError, RoadNetwork, SegmentId};
use crate::trajectory::{TrajPoint, Trajectory};

/// Pops allowed per request, as a multiple of the segment count.
pub const BUDGET_PER_SEGMENT: usize = 50;

/// Smallest interval a policy step may take, seconds. Guards against a
/// time head that underflows to zero.
pub const MIN_STEP_SECS: f64 = 1e-3;

/// One candidate move offered by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    pub segment: SegmentId,
    /// Natural log of the move probability.
    pub log_prob: f64,
    /// Interval until the candidate is entered, seconds.
    pub dt_secs: f64,
}

/// A next-segment policy conditioned on the partial trajectory and the
/// destination. A dead end yields no expansions.
pub trait Policy: Sync {
    fn expand(&self, net: &RoadNetwork, prefix: &[TrajPoint], dest: SegmentId) -> Vec<Expansion>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub r_org: SegmentId,
    /// Departure, unix seconds.
    pub t_org: f64,
    pub r_dest: SegmentId,
    /// Maximum heap pops; `None` uses [`BUDGET_PER_SEGMENT`] times `|V|`.
    #[serde(default)]
    pub budget: Option<usize>,
}

impl GenRequest {
    pub fn new(r_org: SegmentId, t_org: f64, r_dest: SegmentId) -> Self {
        Self { r_org, t_org, r_dest, budget: None }
    }

    fn budget_for(&self, net: &RoadNetwork) -> usize {
        self.budget.unwrap_or(BUDGET_PER_SEGMENT * net.num_segments())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub pops: usize,
    pub stale: usize,
    pub expansions: usize,
    pub pushes: usize,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SearchError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("destination {dest} unreachable from {org} within budget {budget} ({} pops, {} stale, {} expansions)", stats.pops, stats.stale, stats.expansions)]
    Unreachable { org: SegmentId, dest: SegmentId, budget: usize, stats: SearchStats },
}

impl From<RoadNetError> for SearchError {
    fn from(e: RoadNetError) -> Self {
        SearchError::InvalidRequest(e.to_string())
    }
}

/// A popped heap entry, for inspecting the search order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopRecord {
    pub cost: f64,
    pub segment: SegmentId,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    /// Negative log-probability of the returned path.
    pub cost: f64,
    pub stats: SearchStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    counter: u64,
    seg: SegmentId,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost.total_cmp(&other.cost).then(self.counter.cmp(&other.counter))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn lex_less(a: &[TrajPoint], b: &[TrajPoint]) -> bool {
    a.iter().map(|p| p.segment).lt(b.iter().map(|p| p.segment))
}

/// Runs the search, optionally recording every pop.
pub fn search(
    policy: &impl Policy,
    net: &RoadNetwork,
    req: &GenRequest,
    mut log: Option<&mut Vec<PopRecord>>,
) -> Result<SearchOutcome, SearchError> {
    net.check_id(req.r_org)?;
    net.check_id(req.r_dest)?;
    if !req.t_org.is_finite() {
        return Err(SearchError::InvalidRequest(format!("departure time {}", req.t_org)));
    }
    let budget = req.budget_for(net);
    let n = net.num_segments();
    let mut phi = vec![f64::INFINITY; n];
    let mut best: Vec<Option<Vec<TrajPoint>>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    let mut stats = SearchStats::default();
    let mut counter = 0u64;

    phi[req.r_org] = 0.0;
    best[req.r_org] = Some(vec![TrajPoint { segment: req.r_org, time: req.t_org }]);
    heap.push(Reverse(Entry { cost: 0.0, counter, seg: req.r_org }));
    stats.pushes += 1;

    while let Some(Reverse(Entry { cost, seg, .. })) = heap.pop() {
        if stats.pops == budget {
            break;
        }
        stats.pops += 1;
        let stale = cost > phi[seg];
        if let Some(log) = log.as_deref_mut() {
            log.push(PopRecord { cost, segment: seg, stale });
        }
        if seg == req.r_dest && !stale {
            let points = best[seg].take().expect("label for popped segment");
            return Ok(SearchOutcome { trajectory: Trajectory::new(0, points), cost, stats });
        }
        if stale {
            stats.stale += 1;
            continue;
        }
        stats.expansions += 1;
        let prefix = best[seg].clone().expect("label for popped segment");
        let t = prefix.last().expect("non-empty label").time;
        for e in policy.expand(net, &prefix, req.r_dest) {
            let c = cost - e.log_prob;
            if !(c <= phi[e.segment]) {
                continue;
            }
            let mut path = Vec::with_capacity(prefix.len() + 1);
            path.extend_from_slice(&prefix);
            path.push(TrajPoint { segment: e.segment, time: t + e.dt_secs.max(MIN_STEP_SECS) });
            if c < phi[e.segment] {
                phi[e.segment] = c;
                best[e.segment] = Some(path);
                counter += 1;
                heap.push(Reverse(Entry { cost: c, counter, seg: e.segment }));
                stats.pushes += 1;
            } else if best[e.segment].as_ref().is_some_and(|b| lex_less(&path, b)) {
                // equal cost: keep the lexicographically smaller path; the
                // entry already queued at this cost will read it
                best[e.segment] = Some(path);
            }
        }
    }
    Err(SearchError::Unreachable { org: req.r_org, dest: req.r_dest, budget, stats })
}

/// The most probable trajectory for one request under `policy`.
pub fn generate_trajectory(policy: &impl Policy, net: &RoadNetwork, req: &GenRequest) -> Result<Trajectory, SearchError> {
    search(policy, net, req, None).map(|o| o.trajectory)
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub index: usize,
    pub request: GenRequest,
    pub error: SearchError,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    /// Successful trajectories; each id is the index of its request.
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<Failure>,
}

impl BatchOutput {
    pub fn success_rate(&self) -> f64 {
        let total = self.trajectories.len() + self.failures.len();
        if total == 0 {
            return 1.0;
        }
        self.trajectories.len() as f64 / total as f64
    }
}

/// Runs independent searches in parallel; output order follows `requests`.
pub fn generate_batch(policy: &impl Policy, net: &RoadNetwork, requests: &[GenRequest]) -> BatchOutput {
    let results: Vec<_> = requests.par_iter().map(|r| generate_trajectory(policy, net, r)).collect();
    let mut out = BatchOutput::default();
    for (index, (res, request)) in results.into_iter().zip(requests).enumerate() {
        match res {
            Ok(mut t) => {
                t.id = index as u64;
                out.trajectories.push(t);
            }
            Err(error) => out.failures.push(Failure { index, request: *request, error }),
        }
    }
    out
}

/// The trained model as a search policy, over encoder outputs computed once.
#[derive(Debug, Clone)]
pub struct HoserPolicy<'a> {
    model: &'a Hoser,
    frozen: Frozen,
}

impl<'a> HoserPolicy<'a> {
    pub fn new(model: &'a Hoser) -> Self {
        Self { model, frozen: model.freeze() }
    }
}

impl Policy for HoserPolicy<'_> {
    fn expand(&self, net: &RoadNetwork, prefix: &[TrajPoint], dest: SegmentId) -> Vec<Expansion> {
        match self.model.next_scores(&self.frozen, net, prefix, dest) {
            Ok(scores) => scores
                .into_iter()
                .map(|s| Expansion { segment: s.candidate, log_prob: s.probability.ln(), dt_secs: s.dt_minutes * 60.0 })
                .collect(),
            Err(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{Intersection, RoadSegment};

    /// Fixed probabilities per intersection and a constant interval.
    struct Table {
        probs: Vec<Vec<f64>>,
    }

    impl Policy for Table {
        fn expand(&self, net: &RoadNetwork, prefix: &[TrajPoint], _dest: SegmentId) -> Vec<Expansion> {
            let cur = prefix.last().unwrap().segment;
            net.successors(cur)
                .iter()
                .zip(&self.probs[cur])
                .map(|(&s, &p)| Expansion { segment: s, log_prob: p.ln(), dt_secs: 30.0 })
                .collect()
        }
    }

    fn net(n: usize, edges: &[(usize, usize)]) -> RoadNetwork {
        let segs = (0..n).map(|i| RoadSegment { id: i, length_m: 100.0, road_type: 0, lon: 116.0 + 0.001 * i as f64, lat: 39.9, bearing: None }).collect();
        let inter = edges.iter().map(|&(from, to)| Intersection { from, to, reachable: true, angle: 0.0 }).collect();
        RoadNetwork::new(segs, inter).unwrap()
    }

    #[test]
    fn origin_equal_to_destination_returns_one_point() {
        let g = net(2, &[(0, 1)]);
        let p = Table { probs: vec![vec![1.0], vec![]] };
        let out = search(&p, &g, &GenRequest::new(1, 100.0, 1), None).unwrap();
        assert_eq!(out.trajectory.points, vec![TrajPoint { segment: 1, time: 100.0 }]);
        assert_eq!(out.stats.pops, 1);
    }

    #[test]
    fn picks_the_more_probable_route() {
        // 0 -> 1 -> 3 has probability 0.3 * 1.0; 0 -> 2 -> 3 has 0.7 * 0.5
        let g = net(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        let p = Table { probs: vec![vec![0.3, 0.7], vec![1.0], vec![0.5], vec![]] };
        let out = search(&p, &g, &GenRequest::new(0, 0.0, 3), None).unwrap();
        assert_eq!(out.trajectory.segments().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert!((out.cost + (0.35f64).ln()).abs() < 1e-12);
        assert_eq!(out.trajectory.points.iter().map(|p| p.time).collect::<Vec<_>>(), vec![0.0, 30.0, 60.0]);
    }

    #[test]
    fn separate_component_is_unreachable() {
        let g = net(4, &[(0, 1), (2, 3)]);
        let p = Table { probs: vec![vec![1.0], vec![], vec![1.0], vec![]] };
        match search(&p, &g, &GenRequest::new(0, 0.0, 3), None) {
            Err(SearchError::Unreachable { stats, .. }) => assert_eq!(stats.pops, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_stops_the_search() {
        let g = net(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = Table { probs: vec![vec![1.0], vec![1.0], vec![1.0], vec![]] };
        let req = GenRequest { budget: Some(2), ..GenRequest::new(0, 0.0, 3) };
        assert!(matches!(search(&p, &g, &req, None), Err(SearchError::Unreachable { budget: 2, .. })));
        let req = GenRequest { budget: Some(4), ..req };
        assert!(search(&p, &g, &req, None).is_ok());
    }

    #[test]
    fn stale_entries_are_skipped() {
        // 2 is first queued directly at -ln 0.1, then relabeled cheaper via 1;
        // the far destination makes the search pop the old entry
        let g = net(5, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)]);
        let p = Table { probs: vec![vec![0.9, 0.1], vec![0.9], vec![1.0], vec![0.01], vec![]] };
        let mut log = Vec::new();
        let out = search(&p, &g, &GenRequest::new(0, 0.0, 4), Some(&mut log)).unwrap();
        assert_eq!(out.trajectory.segments().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(out.stats.stale, 1);
        assert!(log.iter().any(|r| r.stale && r.segment == 2));
        let accepted: Vec<f64> = log.iter().filter(|r| !r.stale).map(|r| r.cost).collect();
        assert!(accepted.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn invalid_segment_rejected() {
        let g = net(2, &[(0, 1)]);
        let p = Table { probs: vec![vec![1.0], vec![]] };
        assert!(matches!(search(&p, &g, &GenRequest::new(0, 0.0, 9), None), Err(SearchError::InvalidRequest(_))));
    }

    #[test]
    fn batch_keeps_order_and_reports_failures() {
        let g = net(4, &[(0, 1), (2, 3)]);
        let p = Table { probs: vec![vec![1.0], vec![], vec![1.0], vec![]] };
        assert!(generate_batch(&p, &g, &[]).trajectories.is_empty());
        let reqs = [GenRequest::new(0, 0.0, 1), GenRequest::new(0, 0.0, 3), GenRequest::new(0, 0.0, 1)];
        let out = generate_batch(&p, &g, &reqs);
        assert_eq!(out.trajectories.len(), 2);
        assert_eq!(out.failures[0].index, 1);
        assert_eq!(out.trajectories[0].points, out.trajectories[1].points);
        assert_eq!(out.trajectories[1].id, 2);
    }
}
