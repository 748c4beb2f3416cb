//! Great-circle distance and local planar bearings on (lon, lat) degrees.

use std::f64::consts::PI;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A geographic point in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Haversine distance in kilometers.
pub fn haversine_km(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Offset of `b` from `a` in kilometers (east, north), equirectangular.
pub fn local_offset_km(a: LonLat, b: LonLat) -> (f64, f64) {
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let east = (b.lon - a.lon).to_radians() * mean_lat.cos() * EARTH_RADIUS_KM;
    let north = (b.lat - a.lat).to_radians() * EARTH_RADIUS_KM;
    (east, north)
}

/// Compass bearing from `a` to `b` in radians, clockwise from north, in
/// `(-π, π]`. `None` when the points coincide.
pub fn bearing(a: LonLat, b: LonLat) -> Option<f64> {
    let (east, north) = local_offset_km(a, b);
    if east.abs() < 1e-12 && north.abs() < 1e-12 {
        None
    } else {
        Some(east.atan2(north))
    }
}

/// Moves `dist_km` from `p` along `heading` (radians from north).
pub fn advance(p: LonLat, heading: f64, dist_km: f64) -> LonLat {
    let east = dist_km * heading.sin();
    let north = dist_km * heading.cos();
    let lat = p.lat + (north / EARTH_RADIUS_KM).to_degrees();
    let mean_lat = ((p.lat + lat) / 2.0).to_radians();
    let lon = p.lon + (east / (EARTH_RADIUS_KM * mean_lat.cos())).to_degrees();
    LonLat { lon, lat }
}

/// Absolute difference of two headings folded into `[0, π]`.
pub fn angle_between(h1: f64, h2: f64) -> f64 {
    let d = (h1 - h2).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}
