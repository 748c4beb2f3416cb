//! Road network model: segments are graph nodes, intersections are directed
//! edges carrying reachability and a turning angle.

pub mod geo;
mod partition;
pub mod routing;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use geo::LonLat;
pub use partition::{cut_edges, default_zone_count, partition_zones, zone_flow_matrix, FlowMatrix, ZonePartition};

pub type SegmentId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub length_m: f64,
    pub road_type: u32,
    /// Representative midpoint.
    pub lon: f64,
    pub lat: f64,
    /// Heading in radians clockwise from north, when the input provides it.
    pub bearing: Option<f64>,
}

impl RoadSegment {
    pub fn midpoint(&self) -> LonLat {
        LonLat::new(self.lon, self.lat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub from: SegmentId,
    pub to: SegmentId,
    pub reachable: bool,
    /// Turning angle in `[0, π]`.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RoadNetError {
    #[error("network i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: intersection references segment {id} but the network has {count} segments")]
    DanglingEdge { line: usize, id: SegmentId, count: usize },
    #[error("segment {id}: length must be positive, got {length}")]
    NonPositiveLength { id: SegmentId, length: f64 },
    #[error("segment {id}: coordinate out of range (lon {lon}, lat {lat})")]
    BadCoordinate { id: SegmentId, lon: f64, lat: f64 },
    #[error("segment ids must be dense 0..{count}; missing {missing}")]
    SparseIds { count: usize, missing: SegmentId },
    #[error("duplicate segment id {0}")]
    DuplicateSegment(SegmentId),
    #[error("duplicate intersection {from} -> {to}")]
    DuplicateIntersection { from: SegmentId, to: SegmentId },
    #[error("intersection {from} -> {to}: angle {angle} outside [0, pi]")]
    BadAngle { from: SegmentId, to: SegmentId, angle: f64 },
    #[error("segment id {id} out of range (network has {count})")]
    InvalidSegment { id: SegmentId, count: usize },
    #[error("network has no segments")]
    Empty,
}

/// Immutable road graph. Successor lists are sorted by segment id.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    intersections: Vec<Intersection>,
    /// Indices into `intersections` leaving each segment, sorted by `to`.
    out_edges: Vec<Vec<usize>>,
    successors: Vec<Vec<SegmentId>>,
    predecessors: Vec<Vec<SegmentId>>,
    headings: Vec<f64>,
    bbox: BoundingBox,
}

impl RoadNetwork {
    /// Validates and indexes a network. Segments must be listed with dense
    /// ids (in any order).
    pub fn new(mut segments: Vec<RoadSegment>, mut intersections: Vec<Intersection>) -> Result<Self, RoadNetError> {
        if segments.is_empty() {
            return Err(RoadNetError::Empty);
        }
        segments.sort_by_key(|s| s.id);
        for (i, s) in segments.iter().enumerate() {
            if s.id != i {
                return Err(if s.id < i {
                    RoadNetError::DuplicateSegment(s.id)
                } else {
                    RoadNetError::SparseIds { count: segments.len(), missing: i }
                });
            }
            if !(s.length_m > 0.0) || !s.length_m.is_finite() {
                return Err(RoadNetError::NonPositiveLength { id: s.id, length: s.length_m });
            }
            if !(-180.0..=180.0).contains(&s.lon) || !(-90.0..=90.0).contains(&s.lat) {
                return Err(RoadNetError::BadCoordinate { id: s.id, lon: s.lon, lat: s.lat });
            }
        }
        let n = segments.len();
        for e in &intersections {
            for id in [e.from, e.to] {
                if id >= n {
                    return Err(RoadNetError::DanglingEdge { line: 0, id, count: n });
                }
            }
            if !(0.0..=PI).contains(&e.angle) {
                return Err(RoadNetError::BadAngle { from: e.from, to: e.to, angle: e.angle });
            }
        }
        intersections.sort_by_key(|e| (e.from, e.to));
        if let Some(w) = intersections.windows(2).find(|w| (w[0].from, w[0].to) == (w[1].from, w[1].to)) {
            return Err(RoadNetError::DuplicateIntersection { from: w[0].from, to: w[0].to });
        }

        let mut out_edges = vec![Vec::new(); n];
        let mut successors = vec![Vec::new(); n];
        let mut predecessors = vec![Vec::new(); n];
        for (i, e) in intersections.iter().enumerate() {
            out_edges[e.from].push(i);
            if e.reachable {
                successors[e.from].push(e.to);
                predecessors[e.to].push(e.from);
            }
        }
        for p in &mut predecessors {
            p.sort_unstable();
        }

        let bbox = BoundingBox {
            min_lon: segments.iter().map(|s| s.lon).fold(f64::INFINITY, f64::min),
            max_lon: segments.iter().map(|s| s.lon).fold(f64::NEG_INFINITY, f64::max),
            min_lat: segments.iter().map(|s| s.lat).fold(f64::INFINITY, f64::min),
            max_lat: segments.iter().map(|s| s.lat).fold(f64::NEG_INFINITY, f64::max),
        };
        let mut net = Self { segments, intersections, out_edges, successors, predecessors, headings: vec![0.0; n], bbox };
        net.headings = (0..n).map(|i| net.resolve_heading(i)).collect();
        Ok(net)
    }

    /// Heading from the input when given; otherwise the direction from the
    /// centroid of reachable predecessors to the centroid of reachable
    /// successors (the segment's own midpoint stands in for a missing side).
    fn resolve_heading(&self, id: SegmentId) -> f64 {
        let seg = &self.segments[id];
        if let Some(b) = seg.bearing {
            return b;
        }
        let centroid = |ids: &[SegmentId]| {
            if ids.is_empty() {
                return seg.midpoint();
            }
            let k = ids.len() as f64;
            LonLat::new(
                ids.iter().map(|&j| self.segments[j].lon).sum::<f64>() / k,
                ids.iter().map(|&j| self.segments[j].lat).sum::<f64>() / k,
            )
        };
        let from = centroid(&self.predecessors[id]);
        let to = centroid(&self.successors[id]);
        geo::bearing(from, to).unwrap_or(0.0)
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> &RoadSegment {
        &self.segments[id]
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    /// All intersections leaving `id` (reachable or not), sorted by target.
    pub fn out_intersections(&self, id: SegmentId) -> impl Iterator<Item = &Intersection> {
        self.out_edges[id].iter().map(|&i| &self.intersections[i])
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn check_id(&self, id: SegmentId) -> Result<(), RoadNetError> {
        if id < self.segments.len() {
            Ok(())
        } else {
            Err(RoadNetError::InvalidSegment { id, count: self.segments.len() })
        }
    }

    /// Reachable successors of `id`, ascending. Panics on an invalid id;
    /// see [`RoadNetwork::reachable_successors`] for the checked form.
    pub fn successors(&self, id: SegmentId) -> &[SegmentId] {
        &self.successors[id]
    }

    pub fn reachable_successors(&self, id: SegmentId) -> Result<&[SegmentId], RoadNetError> {
        self.check_id(id)?;
        Ok(&self.successors[id])
    }

    pub fn predecessors(&self, id: SegmentId) -> &[SegmentId] {
        &self.predecessors[id]
    }

    pub fn is_reachable(&self, from: SegmentId, to: SegmentId) -> bool {
        from < self.segments.len() && self.successors[from].binary_search(&to).is_ok()
    }

    /// Heading of a segment in radians clockwise from north.
    pub fn heading(&self, id: SegmentId) -> f64 {
        self.headings[id]
    }

    /// Great-circle distance between segment midpoints, in kilometers.
    pub fn segment_distance(&self, a: SegmentId, b: SegmentId) -> f64 {
        geo::haversine_km(self.segments[a].midpoint(), self.segments[b].midpoint())
    }

    /// Point where segment `id` ends: half its length ahead of the midpoint.
    pub fn exit_point(&self, id: SegmentId) -> LonLat {
        let s = &self.segments[id];
        geo::advance(s.midpoint(), self.headings[id], s.length_m / 2000.0)
    }

    /// Turning angle from `from` into `to`: difference between the heading
    /// of `from` and the bearing from its exit point to `to`'s midpoint,
    /// in `[0, π]`. Zero when those points coincide.
    pub fn steering_angle(&self, from: SegmentId, to: SegmentId) -> f64 {
        match geo::bearing(self.exit_point(from), self.segments[to].midpoint()) {
            Some(b) => geo::angle_between(self.headings[from], b),
            None => 0.0,
        }
    }

    /// Angle between the heading of `from` and the bearing from its midpoint
    /// toward `target`'s midpoint, in `[0, π]`; zero when they coincide.
    pub fn heading_angle_to(&self, from: SegmentId, target: SegmentId) -> f64 {
        match geo::bearing(self.segments[from].midpoint(), self.segments[target].midpoint()) {
            Some(b) => geo::angle_between(self.headings[from], b),
            None => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,length_m,type,lon,lat,bearing_deg\n");
        for seg in &self.segments {
            let _ = write!(s, "{},{},{},{},{}", seg.id, seg.length_m, seg.road_type, seg.lon, seg.lat);
            match seg.bearing {
                Some(b) => {
                    let _ = writeln!(s, ",{}", b.to_degrees());
                }
                None => s.push_str(",\n"),
            }
        }
        s.push_str("\nfrom,to,reachable,angle_rad\n");
        for e in &self.intersections {
            let _ = writeln!(s, "{},{},{},{}", e.from, e.to, u8::from(e.reachable), e.angle);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), RoadNetError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Loads a network file: a segment section headed `id,length_m,type,lon,lat`
/// (optionally followed by `bearing_deg`) and an intersection section headed
/// `from,to,reachable,angle_rad`. Blank lines and `#` comments are ignored.
pub fn load_network(path: &Path) -> Result<RoadNetwork, RoadNetError> {
    parse_network(&fs::read_to_string(path)?)
}

pub fn parse_network(text: &str) -> Result<RoadNetwork, RoadNetError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Segments { bearing: bool },
        Intersections,
    }
    let mut section = Section::None;
    let mut segments = Vec::new();
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let perr = |msg: String| RoadNetError::Parse { line: line_no, msg };
        if fields[..] == ["id", "length_m", "type", "lon", "lat"] {
            section = Section::Segments { bearing: false };
            continue;
        }
        if fields[..] == ["id", "length_m", "type", "lon", "lat", "bearing_deg"] {
            section = Section::Segments { bearing: true };
            continue;
        }
        if fields[..] == ["from", "to", "reachable", "angle_rad"] {
            section = Section::Intersections;
            continue;
        }
        let num = |idx: usize, what: &str| -> Result<f64, RoadNetError> {
            fields
                .get(idx)
                .ok_or_else(|| perr(format!("missing {what}")))?
                .parse::<f64>()
                .map_err(|e| perr(format!("bad {what}: {e}")))
        };
        let int = |idx: usize, what: &str| -> Result<usize, RoadNetError> {
            fields
                .get(idx)
                .ok_or_else(|| perr(format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| perr(format!("bad {what}: {e}")))
        };
        match section {
            Section::None => return Err(perr("data row before any section header".into())),
            Section::Segments { bearing } => {
                let expected = if bearing { 6 } else { 5 };
                if fields.len() != expected {
                    return Err(perr(format!("expected {expected} fields, got {}", fields.len())));
                }
                let road_type = fields[2].parse::<u32>().map_err(|e| perr(format!("bad type: {e}")))?;
                let bearing = if bearing && !fields[5].is_empty() { Some(num(5, "bearing_deg")?.to_radians()) } else { None };
                segments.push((
                    line_no,
                    RoadSegment { id: int(0, "id")?, length_m: num(1, "length_m")?, road_type, lon: num(3, "lon")?, lat: num(4, "lat")?, bearing },
                ));
            }
            Section::Intersections => {
                if fields.len() != 4 {
                    return Err(perr(format!("expected 4 fields, got {}", fields.len())));
                }
                let reachable = match fields[2] {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => return Err(perr(format!("bad reachable flag {other:?}"))),
                };
                edges.push((line_no, Intersection { from: int(0, "from")?, to: int(1, "to")?, reachable, angle: num(3, "angle_rad")? }));
            }
        }
    }
    let count = segments.len();
    for (line, s) in &segments {
        if !(s.length_m > 0.0) {
            return Err(RoadNetError::NonPositiveLength { id: s.id, length: s.length_m });
        }
        if s.id >= count {
            return Err(RoadNetError::Parse { line: *line, msg: format!("segment id {} exceeds count {count}", s.id) });
        }
    }
    for (line, e) in &edges {
        for id in [e.from, e.to] {
            if id >= count {
                return Err(RoadNetError::DanglingEdge { line: *line, id, count });
            }
        }
    }
    RoadNetwork::new(segments.into_iter().map(|(_, s)| s).collect(), edges.into_iter().map(|(_, e)| e).collect())
}
