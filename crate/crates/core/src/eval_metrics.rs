//! Global distribution metrics (JSD over distance, radius and dwell
//! histograms) and OD-matched local similarity (Hausdorff, DTW, EDR).

use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::roadnet::geo::{haversine_km, local_offset_km, LonLat};
use crate::roadnet::RoadNetwork;
use crate::trajectory::Trajectory;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_GRID_M: f64 = 200.0;
pub const DEFAULT_EDR_M: f64 = 200.0;
pub const DEFAULT_PAIR_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("histograms differ in binning ({0} vs {1} bins or different bounds)")]
    BinMismatch(usize, usize),
    #[error("{0} trajectory set is empty")]
    EmptySet(&'static str),
    #[error("trajectory {0} is empty")]
    EmptyTrajectory(u64),
    #[error("trajectory {id}: timestamps decrease at step {step}")]
    TimeOrder { id: u64, step: usize },
    #[error("{0} must be positive")]
    BadOption(&'static str),
}

/// Uniform bins over `[0, upper]`. Values above `upper` land in the last
/// bin; bins are half-open except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub upper: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, upper: f64) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        Self { upper, counts: vec![0; bins] }
    }

    pub fn from_values(bins: usize, upper: f64, values: &[f64]) -> Self {
        let mut h = Self::new(bins, upper);
        for &v in values {
            h.add(v);
        }
        h
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin(&self, v: f64) -> usize {
        let last = self.counts.len() - 1;
        if !(self.upper > 0.0) || !(v > 0.0) {
            return 0;
        }
        ((v / self.upper * self.counts.len() as f64).floor() as usize).min(last)
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized mass; all zeros when empty.
    pub fn mass(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Jensen-Shannon divergence in nats between two mass vectors.
pub fn jsd_mass(p: &[f64], q: &[f64]) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { 0.5 * a * (2.0 * a / (a + b)).ln() } else { 0.0 };
    p.iter().zip(q).map(|(&a, &b)| term(a, b) + term(b, a)).sum()
}

pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64, MetricError> {
    if p.bins() != q.bins() || p.upper != q.upper {
        return Err(MetricError::BinMismatch(p.bins(), q.bins()));
    }
    Ok(jsd_mass(&p.mass(), &q.mass()))
}

fn midpoints(traj: &Trajectory, net: &RoadNetwork) -> Vec<LonLat> {
    traj.points.iter().map(|p| net.segment(p.segment).midpoint()).collect()
}

/// Sum of the lengths of the visited segments, km.
pub fn travel_distance(traj: &Trajectory, net: &RoadNetwork) -> f64 {
    traj.points.iter().map(|p| net.segment(p.segment).length_m).sum::<f64>() / 1000.0
}

/// Root-mean-square great-circle distance of the segment midpoints from
/// their mean (lon, lat), km.
pub fn gyration_radius(traj: &Trajectory, net: &RoadNetwork) -> f64 {
    let pts = midpoints(traj, net);
    if pts.is_empty() {
        return 0.0;
    }
    let n = pts.len() as f64;
    let c = LonLat::new(pts.iter().map(|p| p.lon).sum::<f64>() / n, pts.iter().map(|p| p.lat).sum::<f64>() / n);
    (pts.iter().map(|&p| haversine_km(p, c).powi(2)).sum::<f64>() / n).sqrt()
}

/// Intervals between consecutive points, minutes.
pub fn dwell_durations(traj: &Trajectory) -> Result<Vec<f64>, MetricError> {
    traj.points
        .windows(2)
        .enumerate()
        .map(|(step, w)| {
            let dt = w[1].time - w[0].time;
            if dt < 0.0 {
                Err(MetricError::TimeOrder { id: traj.id, step })
            } else {
                Ok(dt / 60.0)
            }
        })
        .collect()
}

fn distances(a: &[LonLat], b: &[LonLat]) -> Vec<Vec<f64>> {
    a.iter().map(|&p| b.iter().map(|&q| haversine_km(p, q)).collect()).collect()
}

/// Symmetric Hausdorff distance between point sequences, km.
pub fn hausdorff_points(a: &[LonLat], b: &[LonLat]) -> f64 {
    let d = distances(a, b);
    let ab = d.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    let ba = (0..b.len()).map(|j| d.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    ab.max(ba)
}

/// Dynamic time warping with both ends matched and no window, km.
pub fn dtw_points(a: &[LonLat], b: &[LonLat]) -> f64 {
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            cur[j] = haversine_km(p, b[j - 1]) + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Edit distance on real sequences normalized by the longer length. Two
/// points match when within `threshold_km`.
pub fn edr_points(a: &[LonLat], b: &[LonLat], threshold_km: f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n.max(m) == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = usize::from(haversine_km(a[i - 1], b[j - 1]) > threshold_km);
            cur[j] = (prev[j - 1] + sub).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m] as f64 / n.max(m) as f64
}

pub fn hausdorff(a: &Trajectory, b: &Trajectory, net: &RoadNetwork) -> f64 {
    hausdorff_points(&midpoints(a, net), &midpoints(b, net))
}

pub fn dtw(a: &Trajectory, b: &Trajectory, net: &RoadNetwork) -> f64 {
    dtw_points(&midpoints(a, net), &midpoints(b, net))
}

pub fn edr(a: &Trajectory, b: &Trajectory, net: &RoadNetwork, threshold_m: f64) -> f64 {
    edr_points(&midpoints(a, net), &midpoints(b, net), threshold_m / 1000.0)
}

/// Square cells anchored at the south-west corner of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridIndex {
    pub origin: LonLat,
    pub cell_km: f64,
}

impl GridIndex {
    pub fn new(net: &RoadNetwork, cell_m: f64) -> Self {
        let b = net.bbox();
        Self { origin: LonLat::new(b.min_lon, b.min_lat), cell_km: cell_m / 1000.0 }
    }

    /// (row, col) of a point; row counts north, col east.
    pub fn cell(&self, p: LonLat) -> (i64, i64) {
        let (east, north) = local_offset_km(self.origin, p);
        ((north / self.cell_km).floor() as i64, (east / self.cell_km).floor() as i64)
    }
}

pub type OdKey = ((i64, i64), (i64, i64));

pub fn od_key(traj: &Trajectory, net: &RoadNetwork, grid: &GridIndex) -> Option<OdKey> {
    let o = traj.points.first()?;
    let d = traj.points.last()?;
    Some((grid.cell(net.segment(o.segment).midpoint()), grid.cell(net.segment(d.segment).midpoint())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub bins: usize,
    pub grid_m: f64,
    pub edr_threshold_m: f64,
    /// Pairs compared per shared OD key.
    pub pair_cap: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, grid_m: DEFAULT_GRID_M, edr_threshold_m: DEFAULT_EDR_M, pair_cap: DEFAULT_PAIR_CAP }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.bins == 0 {
            return Err(MetricError::BadOption("bins"));
        }
        if !(self.grid_m > 0.0) {
            return Err(MetricError::BadOption("grid_m"));
        }
        if !(self.edr_threshold_m > 0.0) {
            return Err(MetricError::BadOption("edr_threshold_m"));
        }
        if self.pair_cap == 0 {
            return Err(MetricError::BadOption("pair_cap"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalHistograms {
    pub real: Histogram,
    pub generated: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMetrics {
    /// Mean over shared OD keys of the per-key mean, km.
    pub hausdorff_km: f64,
    pub dtw_km: f64,
    pub edr: f64,
    pub od_keys: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub distance_jsd: f64,
    pub radius_jsd: f64,
    pub duration_jsd: f64,
    /// Fraction of generated trajectories whose OD key occurs in the real set.
    pub match_rate: f64,
    /// Absent when no OD key is shared.
    pub local: Option<LocalMetrics>,
    pub distance: GlobalHistograms,
    pub radius: GlobalHistograms,
    pub duration: GlobalHistograms,
    pub n_real: usize,
    pub n_generated: usize,
}

impl MetricsReport {
    /// `metric,value,unit` rows; local rows are omitted when absent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,unit\n");
        let mut row = |k: &str, v: f64, u: &str| {
            let _ = writeln!(s, "{k},{v},{u}");
        };
        row("distance_jsd", self.distance_jsd, "nats");
        row("radius_jsd", self.radius_jsd, "nats");
        row("duration_jsd", self.duration_jsd, "nats");
        row("match_rate", self.match_rate, "fraction");
        if let Some(l) = &self.local {
            row("hausdorff", l.hausdorff_km, "km");
            row("dtw", l.dtw_km, "km");
            row("edr", l.edr, "fraction");
            row("od_keys", l.od_keys as f64, "count");
            row("pairs", l.pairs as f64, "count");
        }
        row("n_real", self.n_real as f64, "count");
        row("n_generated", self.n_generated as f64, "count");
        s
    }

    /// Bin edges and counts of the three histograms, for plotting.
    pub fn histograms_csv(&self) -> String {
        let mut s = String::from("metric,bin,lower,upper,real,generated\n");
        for (name, h) in [("distance_km", &self.distance), ("radius_km", &self.radius), ("duration_min", &self.duration)] {
            let width = h.real.upper / h.real.bins() as f64;
            for (i, (r, g)) in h.real.counts.iter().zip(&h.generated.counts).enumerate() {
                let _ = writeln!(s, "{name},{i},{},{},{r},{g}", i as f64 * width, (i + 1) as f64 * width);
            }
        }
        s
    }
}

struct Summary {
    distance: Vec<f64>,
    radius: Vec<f64>,
    duration: Vec<f64>,
}

fn summarize(set: &[Trajectory], net: &RoadNetwork) -> Result<Summary, MetricError> {
    let mut s = Summary { distance: Vec::with_capacity(set.len()), radius: Vec::with_capacity(set.len()), duration: Vec::new() };
    for t in set {
        if t.is_empty() {
            return Err(MetricError::EmptyTrajectory(t.id));
        }
        s.distance.push(travel_distance(t, net));
        s.radius.push(gyration_radius(t, net));
        s.duration.extend(dwell_durations(t)?);
    }
    Ok(s)
}

fn compare(bins: usize, real: &[f64], generated: &[f64]) -> (f64, GlobalHistograms) {
    let upper = real.iter().copied().fold(0.0, f64::max);
    let h = GlobalHistograms { real: Histogram::from_values(bins, upper, real), generated: Histogram::from_values(bins, upper, generated) };
    (jsd_mass(&h.real.mass(), &h.generated.mass()), h)
}

/// Compares a generated set against real trajectories.
pub fn evaluate(real: &[Trajectory], generated: &[Trajectory], net: &RoadNetwork, opts: &EvalOptions) -> Result<MetricsReport, MetricError> {
    opts.validate()?;
    if real.is_empty() {
        return Err(MetricError::EmptySet("real"));
    }
    if generated.is_empty() {
        return Err(MetricError::EmptySet("generated"));
    }
    let (r, g) = (summarize(real, net)?, summarize(generated, net)?);
    let (distance_jsd, distance) = compare(opts.bins, &r.distance, &g.distance);
    let (radius_jsd, radius) = compare(opts.bins, &r.radius, &g.radius);
    let (duration_jsd, duration) = compare(opts.bins, &r.duration, &g.duration);

    let grid = GridIndex::new(net, opts.grid_m);
    let mut by_key: BTreeMap<OdKey, (Vec<&Trajectory>, Vec<&Trajectory>)> = BTreeMap::new();
    for t in real {
        by_key.entry(od_key(t, net, &grid).expect("non-empty")).or_default().0.push(t);
    }
    let mut matched = 0;
    for t in generated {
        if let Some(e) = by_key.get_mut(&od_key(t, net, &grid).expect("non-empty")) {
            e.1.push(t);
            matched += 1;
        }
    }
    let shared: Vec<_> = by_key.values().filter(|(_, gs)| !gs.is_empty()).collect();
    let threshold_km = opts.edr_threshold_m / 1000.0;
    let per_key: Vec<(f64, f64, f64, usize)> = shared
        .par_iter()
        .map(|(rs, gs)| {
            let pairs: Vec<_> = rs.iter().flat_map(|a| gs.iter().map(move |b| (*a, *b))).take(opts.pair_cap).collect();
            let (mut h, mut d, mut e) = (0.0, 0.0, 0.0);
            for (a, b) in &pairs {
                let (pa, pb) = (midpoints(a, net), midpoints(b, net));
                h += hausdorff_points(&pa, &pb);
                d += dtw_points(&pa, &pb);
                e += edr_points(&pa, &pb, threshold_km);
            }
            let n = pairs.len() as f64;
            (h / n, d / n, e / n, pairs.len())
        })
        .collect();
    let local = (!per_key.is_empty()).then(|| {
        let k = per_key.len() as f64;
        LocalMetrics {
            hausdorff_km: per_key.iter().map(|x| x.0).sum::<f64>() / k,
            dtw_km: per_key.iter().map(|x| x.1).sum::<f64>() / k,
            edr: per_key.iter().map(|x| x.2).sum::<f64>() / k,
            od_keys: per_key.len(),
            pairs: per_key.iter().map(|x| x.3).sum(),
        }
    });
    Ok(MetricsReport {
        distance_jsd,
        radius_jsd,
        duration_jsd,
        match_rate: matched as f64 / generated.len() as f64,
        local,
        distance,
        radius,
        duration,
        n_real: real.len(),
        n_generated: generated.len(),
    })
}
