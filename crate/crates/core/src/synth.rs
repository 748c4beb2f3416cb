//! Synthetic grid city and a noisy shortest-path trajectory sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::roadnet::geo::{self, LonLat, EARTH_RADIUS_KM};
use crate::roadnet::routing::{costs_to, length_km_cost};
use crate::roadnet::{Intersection, RoadNetwork, RoadSegment, SegmentId};
use crate::trajectory::{filter_reason, TrajPoint, Trajectory};

/// 2024-01-01T00:00:00Z.
pub const BASE_EPOCH: f64 = 1_704_067_200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Junction rows and columns.
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rows: 8, cols: 8, spacing_m: 500.0, origin_lon: 116.3, origin_lat: 39.9, seed: 0 }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("grid needs at least 2 rows and 2 columns and positive spacing")]
    BadGrid,
    #[error("policy temperature must be non-negative")]
    BadTemperature,
    #[error("gave up after {attempts} attempts to sample a valid trajectory")]
    Exhausted { attempts: usize },
}

/// Road class of a grid line: every fourth line is an arterial (2), every
/// other remaining even line a collector (1), the rest local streets (0).
fn line_type(index: usize) -> u32 {
    if index % 4 == 0 {
        2
    } else if index % 2 == 0 {
        1
    } else {
        0
    }
}

/// Builds a grid city: every block between adjacent junctions becomes two
/// directed segments, and segments meeting at a junction are connected by
/// intersections that are reachable unless they form a U-turn.
pub fn grid_network(spec: &GridSpec) -> Result<RoadNetwork, SynthError> {
    if spec.rows < 2 || spec.cols < 2 || !(spec.spacing_m > 0.0) {
        return Err(SynthError::BadGrid);
    }
    let step_deg = (spec.spacing_m / 1000.0 / EARTH_RADIUS_KM).to_degrees();
    let ref_lat = spec.origin_lat + step_deg * (spec.rows - 1) as f64 / 2.0;
    let dlon = step_deg / ref_lat.to_radians().cos();
    let junction = |r: usize, c: usize| LonLat::new(spec.origin_lon + c as f64 * dlon, spec.origin_lat + r as f64 * step_deg);
    let jid = |r: usize, c: usize| r * spec.cols + c;

    // (from junction, to junction, road type)
    let mut links = Vec::new();
    for r in 0..spec.rows {
        for c in 0..spec.cols - 1 {
            links.push((jid(r, c), jid(r, c + 1), line_type(r)));
            links.push((jid(r, c + 1), jid(r, c), line_type(r)));
        }
    }
    for c in 0..spec.cols {
        for r in 0..spec.rows - 1 {
            links.push((jid(r, c), jid(r + 1, c), line_type(c)));
            links.push((jid(r + 1, c), jid(r, c), line_type(c)));
        }
    }
    let pos = |j: usize| junction(j / spec.cols, j % spec.cols);
    let segments: Vec<RoadSegment> = links
        .iter()
        .enumerate()
        .map(|(id, &(a, b, road_type))| {
            let (pa, pb) = (pos(a), pos(b));
            RoadSegment {
                id,
                length_m: geo::haversine_km(pa, pb) * 1000.0,
                road_type,
                lon: (pa.lon + pb.lon) / 2.0,
                lat: (pa.lat + pb.lat) / 2.0,
                bearing: geo::bearing(pa, pb),
            }
        })
        .collect();

    let mut starting_at = vec![Vec::new(); spec.rows * spec.cols];
    for (id, &(a, _, _)) in links.iter().enumerate() {
        starting_at[a].push(id);
    }
    let mut edges = Vec::new();
    for (id, &(a, b, _)) in links.iter().enumerate() {
        for &next in &starting_at[b] {
            let reverse = links[next].1 == a;
            edges.push(Intersection { from: id, to: next, reachable: !reverse, angle: 0.0 });
        }
    }
    let draft = RoadNetwork::new(segments.clone(), edges.clone()).expect("grid construction is valid");
    for e in &mut edges {
        e.angle = draft.steering_angle(e.from, e.to);
    }
    Ok(RoadNetwork::new(segments, edges).expect("grid construction is valid"))
}

/// Free-flow speeds per road type with a peak-hour slowdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedProfile {
    /// Mean speed in km/h, indexed by road type (last entry reused beyond).
    pub kmh_by_type: Vec<f64>,
    /// Fractional speed reduction at the centre of a peak hour.
    pub peak_slowdown: f64,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        Self { kmh_by_type: vec![25.0, 35.0, 50.0], peak_slowdown: 0.4 }
    }
}

impl SpeedProfile {
    /// Speed in km/h for a road type at `minute_of_day`. Peaks at 08:00 and
    /// 18:00 with a 90-minute spread.
    pub fn speed(&self, road_type: u32, minute_of_day: f64) -> f64 {
        let base = self.kmh_by_type[(road_type as usize).min(self.kmh_by_type.len() - 1)];
        let bump = |centre: f64| (-((minute_of_day - centre) / 90.0).powi(2) / 2.0).exp();
        base * (1.0 - self.peak_slowdown * (bump(480.0) + bump(1080.0)).min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthPolicy {
    /// Softmax temperature over candidate scores (km); 0 walks shortest paths.
    pub beta: f64,
    pub speeds: SpeedProfile,
    /// Half-width of the uniform multiplicative noise on travel times.
    pub time_noise: f64,
    /// Departure window in minutes after midnight.
    pub depart_window: (f64, f64),
    pub seed: u64,
}

impl Default for SynthPolicy {
    fn default() -> Self {
        Self { beta: 1.0, speeds: SpeedProfile::default(), time_noise: 0.1, depart_window: (300.0, 1380.0), seed: 0 }
    }
}

/// Minutes after midnight (UTC) of a unix timestamp.
pub fn minute_of_day(unix_secs: f64) -> f64 {
    (unix_secs / 60.0).rem_euclid(1440.0)
}

/// Picks an index from unnormalized scores with a softmax at temperature
/// `beta`; `beta == 0` takes the first maximum.
fn pick(scores: &[f64], beta: f64, rng: &mut impl Rng) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if beta == 0.0 {
        return scores.iter().position(|&s| s == best).expect("non-empty scores");
    }
    let weights: Vec<f64> = scores.iter().map(|s| ((s - best) / beta).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// One walk from `org` to `dest`. `None` when it exceeds the step cap.
fn walk(
    net: &RoadNetwork,
    org: SegmentId,
    dest: SegmentId,
    remaining_km: &[f64],
    depart: f64,
    policy: &SynthPolicy,
    rng: &mut impl Rng,
) -> Option<Vec<TrajPoint>> {
    let cap = 4 * net.num_segments();
    let mut points = vec![TrajPoint { segment: org, time: depart }];
    let mut cur = org;
    while cur != dest {
        if points.len() > cap {
            return None;
        }
        let cands: Vec<SegmentId> = net.successors(cur).iter().copied().filter(|&c| remaining_km[c].is_finite()).collect();
        if cands.is_empty() {
            return None;
        }
        let scores: Vec<f64> =
            cands.iter().map(|&c| -(net.segment(c).length_m / 1000.0 + remaining_km[c])).collect();
        let next = cands[pick(&scores, policy.beta, rng)];
        let seg = net.segment(cur);
        let t = points.last().expect("non-empty").time;
        let kmh = policy.speeds.speed(seg.road_type, minute_of_day(t));
        let noise = 1.0 + policy.time_noise * (2.0 * rng.random::<f64>() - 1.0);
        let secs = (seg.length_m / 1000.0 / kmh * 3600.0 * noise).round().max(1.0);
        points.push(TrajPoint { segment: next, time: t + secs });
        cur = next;
    }
    Some(points)
}

/// Samples `n` trajectories that pass the preprocessing filters. Trajectory
/// `i` uses its own random stream, so output is independent of threading.
pub fn synth_trajectories(net: &RoadNetwork, n: usize, policy: &SynthPolicy) -> Result<Vec<Trajectory>, SynthError> {
    if !(policy.beta >= 0.0) {
        return Err(SynthError::BadTemperature);
    }
    let nseg = net.num_segments();
    let cost = length_km_cost(net);
    let max_attempts = 10_000;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            rng.set_stream(i as u64);
            for _ in 0..max_attempts {
                let org = rng.random_range(0..nseg);
                let dest = rng.random_range(0..nseg);
                let minute = rng.random_range(policy.depart_window.0..policy.depart_window.1);
                if org == dest {
                    continue;
                }
                let remaining = costs_to(net, dest, &cost);
                if !remaining[org].is_finite() {
                    continue;
                }
                let depart = (BASE_EPOCH + minute * 60.0).round();
                let Some(points) = walk(net, org, dest, &remaining, depart, policy, &mut rng) else { continue };
                let t = Trajectory::new(i as u64, points);
                if filter_reason(&t).is_none() {
                    return Ok(t);
                }
            }
            Err(SynthError::Exhausted { attempts: max_attempts })
        })
        .collect()
}
