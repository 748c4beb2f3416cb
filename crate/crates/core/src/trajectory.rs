//! Trajectories as sequences of `(segment, unix seconds)` points, their
//! line-delimited JSON file format, and the preprocessing filters.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::roadnet::{RoadNetwork, SegmentId};

/// Minimum number of points a trajectory must have to be kept.
pub const MIN_POINTS: usize = 5;
/// Largest allowed interval between consecutive points, in seconds.
pub const MAX_GAP_SECS: f64 = 15.0 * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(SegmentId, f64)", into = "(SegmentId, f64)")]
pub struct TrajPoint {
    pub segment: SegmentId,
    /// Unix time in seconds.
    pub time: f64,
}

impl From<(SegmentId, f64)> for TrajPoint {
    fn from((segment, time): (SegmentId, f64)) -> Self {
        Self { segment, time }
    }
}

impl From<TrajPoint> for (SegmentId, f64) {
    fn from(p: TrajPoint) -> Self {
        (p.segment, p.time)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn new(id: u64, points: Vec<TrajPoint>) -> Self {
        Self { id, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = SegmentId> + '_ {
        self.points.iter().map(|p| p.segment)
    }

    pub fn origin(&self) -> Option<TrajPoint> {
        self.points.first().copied()
    }

    pub fn destination(&self) -> Option<SegmentId> {
        self.points.last().map(|p| p.segment)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trajectory {id}: step {step} moves {from} -> {to}, which is not a reachable intersection")]
    Unreachable { id: u64, step: usize, from: SegmentId, to: SegmentId },
    #[error("trajectory {id}: segment {segment} is not in the network")]
    UnknownSegment { id: u64, segment: SegmentId },
    #[error("trajectory {id}: timestamps decrease at step {step}")]
    TimeOrder { id: u64, step: usize },
    #[error("trajectory {id} is empty")]
    Empty { id: u64 },
}

/// Checks that every point names a network segment, every step follows a
/// reachable intersection, and timestamps do not decrease.
pub fn validate(traj: &Trajectory, net: &RoadNetwork) -> Result<(), TrajectoryError> {
    if traj.points.is_empty() {
        return Err(TrajectoryError::Empty { id: traj.id });
    }
    for p in &traj.points {
        if p.segment >= net.num_segments() {
            return Err(TrajectoryError::UnknownSegment { id: traj.id, segment: p.segment });
        }
    }
    for (step, w) in traj.points.windows(2).enumerate() {
        if !net.is_reachable(w[0].segment, w[1].segment) {
            return Err(TrajectoryError::Unreachable { id: traj.id, step, from: w[0].segment, to: w[1].segment });
        }
        if w[1].time < w[0].time {
            return Err(TrajectoryError::TimeOrder { id: traj.id, step });
        }
    }
    Ok(())
}

/// Why a trajectory was dropped during preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    TooShort,
    Loop,
    LongGap,
}

/// The preprocessing predicate: `None` keeps the trajectory.
pub fn filter_reason(traj: &Trajectory) -> Option<Rejection> {
    if traj.points.len() < MIN_POINTS {
        return Some(Rejection::TooShort);
    }
    let mut seen = HashSet::with_capacity(traj.points.len());
    if !traj.points.iter().all(|p| seen.insert(p.segment)) {
        return Some(Rejection::Loop);
    }
    if traj.points.windows(2).any(|w| w[1].time - w[0].time > MAX_GAP_SECS) {
        return Some(Rejection::LongGap);
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub too_short: usize,
    pub loops: usize,
    pub long_gaps: usize,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub report: FilterReport,
}

/// Filters, shuffles with `seed`, and splits by `ratios` (normalized).
pub fn filter_and_split(trajs: Vec<Trajectory>, ratios: [f64; 3], seed: u64) -> Split {
    let mut report = FilterReport { input: trajs.len(), ..Default::default() };
    let mut kept: Vec<Trajectory> = trajs
        .into_iter()
        .filter(|t| match filter_reason(t) {
            None => true,
            Some(Rejection::TooShort) => {
                report.too_short += 1;
                false
            }
            Some(Rejection::Loop) => {
                report.loops += 1;
                false
            }
            Some(Rejection::LongGap) => {
                report.long_gaps += 1;
                false
            }
        })
        .collect();
    report.kept = kept.len();
    kept.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total: f64 = ratios.iter().sum();
    let n = kept.len();
    let n_train = ((ratios[0] / total) * n as f64).round() as usize;
    let n_val = (((ratios[0] + ratios[1]) / total) * n as f64).round() as usize - n_train;
    let test = kept.split_off((n_train + n_val).min(n));
    let val = kept.split_off(n_train.min(kept.len()));
    Split { train: kept, val, test, report }
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<(), TrajectoryError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file. Blank lines are skipped; timestamps must not
/// decrease within a record.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, TrajectoryError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| TrajectoryError::Parse { line: i + 1, msg: e.to_string() })?;
        if t.points.is_empty() {
            return Err(TrajectoryError::Parse { line: i + 1, msg: "trajectory has no points".into() });
        }
        if let Some(step) = t.points.windows(2).position(|w| w[1].time < w[0].time) {
            return Err(TrajectoryError::Parse {
                line: i + 1,
                msg: format!("timestamps decrease at step {step}"),
            });
        }
        out.push(t);
    }
    Ok(out)
}
