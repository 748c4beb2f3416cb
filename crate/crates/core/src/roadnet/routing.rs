//! Dijkstra over reachable intersections with caller-supplied step costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{RoadNetwork, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    seg: SegmentId,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on segment id
        other.cost.total_cmp(&self.cost).then_with(|| other.seg.cmp(&self.seg))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cost of the cheapest path from every segment to `dest`, where moving
/// from `a` into `b` costs `step(a, b)`. Unreachable segments get infinity.
pub fn costs_to(net: &RoadNetwork, dest: SegmentId, step: impl Fn(SegmentId, SegmentId) -> f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.num_segments()];
    dist[dest] = 0.0;
    let mut heap = BinaryHeap::from([Entry { cost: 0.0, seg: dest }]);
    while let Some(Entry { cost, seg }) = heap.pop() {
        if cost > dist[seg] {
            continue;
        }
        for &p in net.predecessors(seg) {
            let c = cost + step(p, seg);
            if c < dist[p] {
                dist[p] = c;
                heap.push(Entry { cost: c, seg: p });
            }
        }
    }
    dist
}

/// Cheapest path from `org` to `dest` (inclusive). `None` if unreachable.
pub fn shortest_path(
    net: &RoadNetwork,
    org: SegmentId,
    dest: SegmentId,
    step: impl Fn(SegmentId, SegmentId) -> f64,
) -> Option<(f64, Vec<SegmentId>)> {
    let n = net.num_segments();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    dist[org] = 0.0;
    let mut heap = BinaryHeap::from([Entry { cost: 0.0, seg: org }]);
    while let Some(Entry { cost, seg }) = heap.pop() {
        if seg == dest {
            let mut path = vec![dest];
            let mut cur = dest;
            while cur != org {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some((cost, path));
        }
        if cost > dist[seg] {
            continue;
        }
        for &s in net.successors(seg) {
            let c = cost + step(seg, s);
            if c < dist[s] {
                dist[s] = c;
                prev[s] = seg;
                heap.push(Entry { cost: c, seg: s });
            }
        }
    }
    None
}

/// Step cost equal to the length of the segment entered, in kilometers.
pub fn length_km_cost(net: &RoadNetwork) -> impl Fn(SegmentId, SegmentId) -> f64 + '_ {
    move |_, b| net.segment(b).length_m / 1000.0
}
