//! Spherical-earth geodesy helpers.
//!
//! Everything in the crate measures distance with [`haversine_m`] on a sphere of
//! radius [`EARTH_RADIUS_M`]. Short-range work (segment projection, grid cells,
//! coordinate masks) uses a local equirectangular frame via [`meters_per_degree_lat`]
//! and [`meters_per_degree_lon`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("bearing is undefined between identical points ({lat}, {lon})")]
    DegeneratePair { lat: f64, lon: f64 },
    #[error("segment endpoints coincide at ({lat}, {lon})")]
    DegenerateSegment { lat: f64, lon: f64 },
    #[error("bounding box min ({min_lat}, {min_lon}) exceeds max ({max_lat}, {max_lon})")]
    InvertedBBox {
        min_lat: f64,
        min_lon: f64,
        max_lat: f64,
        max_lon: f64,
    },
}

/// WGS84 latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self, GeoError> {
        if min.lat > max.lat || min.lon > max.lon {
            return Err(GeoError::InvertedBBox {
                min_lat: min.lat,
                min_lon: min.lon,
                max_lat: max.lat,
                max_lon: max.lon,
            });
        }
        Ok(BBox { min, max })
    }

    /// Smallest box containing every point, or `None` for an empty iterator.
    pub fn enclosing<I: IntoIterator<Item = GeoPoint>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min.lat = min.lat.min(p.lat);
            min.lon = min.lon.min(p.lon);
            max.lat = max.lat.max(p.lat);
            max.lon = max.lon.max(p.lon);
        }
        Some(BBox { min, max })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min.lat..=self.max.lat).contains(&p.lat)
            && (self.min.lon..=self.max.lon).contains(&p.lon)
    }

    pub fn height_deg(&self) -> f64 {
        self.max.lat - self.min.lat
    }
}

pub fn meters_per_degree_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

pub fn meters_per_degree_lon(at_lat: f64) -> f64 {
    meters_per_degree_lat() * at_lat.to_radians().cos()
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, clockwise from true north, in `[0, 360)`.
pub fn initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if a == b {
        return Err(GeoError::DegeneratePair { lat: a.lat, lon: a.lon });
    }
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_deg(y.atan2(x).to_degrees()))
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can return exactly 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Point reached by travelling `distance_m` along the great circle leaving `origin`
/// at `bearing_deg`.
pub fn destination(origin: GeoPoint, distance_m: f64, bearing_deg: f64) -> GeoPoint {
    if distance_m == 0.0 {
        return origin;
    }
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();
    let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos();
    let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
    let y = theta.sin() * delta.sin() * phi1.cos();
    let x = delta.cos() - phi1.sin() * sin_phi2;
    let lambda2 = lambda1 + y.atan2(x);
    let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint {
        lat: phi2.to_degrees(),
        lon,
    }
}

/// Result of projecting a point onto a segment in the local planar frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    pub distance_m: f64,
    /// Position along the segment, 0 at the first endpoint and 1 at the second.
    pub t: f64,
    pub foot: GeoPoint,
}

/// Projects `p` onto the segment `(a, b)` in an equirectangular frame centered at `p`.
pub fn project_to_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> Result<SegmentProjection, GeoError> {
    if a == b {
        return Err(GeoError::DegenerateSegment { lat: a.lat, lon: a.lon });
    }
    let ky = meters_per_degree_lat();
    let kx = meters_per_degree_lon(p.lat);
    let (ax, ay) = ((a.lon - p.lon) * kx, (a.lat - p.lat) * ky);
    let (bx, by) = ((b.lon - p.lon) * kx, (b.lat - p.lat) * ky);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (fx, fy) = (ax + t * dx, ay + t * dy);
    let foot = if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        GeoPoint {
            lat: a.lat + t * (b.lat - a.lat),
            lon: a.lon + t * (b.lon - a.lon),
        }
    };
    Ok(SegmentProjection {
        distance_m: fx.hypot(fy),
        t,
        foot,
    })
}

/// Minimum distance in meters from `p` to the segment `seg`.
pub fn point_to_segment_m(p: GeoPoint, seg: (GeoPoint, GeoPoint)) -> Result<f64, GeoError> {
    project_to_segment(p, seg.0, seg.1).map(|pr| pr.distance_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_identity_is_zero() {
        let a = gp(37.56, -122.30);
        assert_eq!(haversine_m(a, a), 0.0);
    }

    #[test]
    fn haversine_matches_high_precision_oracle() {
        // 40-digit evaluation of the same formula
        let d = haversine_m(gp(37.56, -122.30), gp(37.56, -122.29));
        assert!((d - 881.459_320_374_844).abs() < 1e-6, "{d}");
        let q = haversine_m(gp(0.0, 0.0), gp(0.0, 90.0));
        assert!((q - 10_007_543.398_010_286).abs() < 1e-6, "{q}");
    }

    #[test]
    fn bearing_cardinal_directions() {
        let a = gp(37.56, -122.30);
        assert_eq!(initial_bearing_deg(a, gp(37.57, -122.30)).unwrap(), 0.0);
        let east = initial_bearing_deg(gp(0.0, 10.0), gp(0.0, 10.01)).unwrap();
        assert!((east - 90.0).abs() < 1e-12);
        let b = initial_bearing_deg(a, gp(37.561, -122.299)).unwrap();
        assert!((b - 38.403_912_745_110_5).abs() < 1e-9, "{b}");
    }

    #[test]
    fn bearing_degenerate_pair_errors() {
        let a = gp(37.56, -122.30);
        assert!(matches!(
            initial_bearing_deg(a, a),
            Err(GeoError::DegeneratePair { .. })
        ));
    }

    #[test]
    fn segment_midpoint_is_zero() {
        let a = gp(37.55, -122.30);
        let b = gp(37.55, -122.29);
        let mid = gp(37.55, -122.295);
        assert!(point_to_segment_m(mid, (a, b)).unwrap() < 1e-9);
    }

    #[test]
    fn segment_perpendicular_offset_one_step() {
        let a = gp(37.55, -122.30);
        let b = gp(37.55, -122.29);
        let p = gp(37.55001, -122.2951);
        let d = point_to_segment_m(p, (a, b)).unwrap();
        // dense planar sampling of the segment
        let ky = meters_per_degree_lat();
        let kx = meters_per_degree_lon(p.lat);
        let mut best = f64::INFINITY;
        for i in 0..=200_000 {
            let lon = a.lon + (b.lon - a.lon) * (i as f64 / 200_000.0);
            let dx = (lon - p.lon) * kx;
            let dy = (a.lat - p.lat) * ky;
            best = best.min(dx.hypot(dy));
        }
        assert!((d - best).abs() < 1e-6, "{d} vs {best}");
        assert!((d - 1.111_949).abs() < 1e-5);
    }

    #[test]
    fn segment_beyond_endpoint_clamps() {
        let a = gp(37.55, -122.30);
        let b = gp(37.55, -122.299);
        let p = gp(37.5503, -122.2985);
        let d = point_to_segment_m(p, (a, b)).unwrap();
        let h = haversine_m(p, b);
        assert!(((d - h) / h).abs() < 1e-3);
    }

    #[test]
    fn degenerate_segment_errors() {
        let a = gp(37.55, -122.30);
        assert!(point_to_segment_m(a, (a, a)).is_err());
    }

    #[test]
    fn destination_round_trips_bearing_and_distance() {
        let a = gp(37.53, -122.31);
        let b = destination(a, 42.0, 123.4);
        assert!((haversine_m(a, b) - 42.0).abs() < 1e-6);
        assert!((initial_bearing_deg(a, b).unwrap() - 123.4).abs() < 1e-6);
    }

    #[test]
    fn invalid_coordinates_rejected() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }
}
