//! Geodesic helpers: haversine distances, a flat local tangent plane around a
//! fixed anchor, bearings, and polygon areas.
//!
//! All synthetic geometry is laid out on the tangent plane in meters and then
//! converted to (lat, lng) degrees; distances are always measured with the
//! haversine formula so the two views stay consistent.

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Anchor of the local tangent plane (degrees).
pub const ANCHOR_LAT: f64 = 30.66;
pub const ANCHOR_LNG: f64 = 104.06;

/// Haversine distance in meters between two (lat, lng) points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lng1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lng2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlng = lng2 - lng1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Total haversine length of a polyline.
pub fn polyline_length_m(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Tangent-plane (x east, y north) meters -> (lat, lng) degrees.
pub fn xy_to_latlng(x_m: f64, y_m: f64) -> (f64, f64) {
    let lat = ANCHOR_LAT + (y_m / EARTH_RADIUS_M).to_degrees();
    let lng = ANCHOR_LNG + (x_m / (EARTH_RADIUS_M * ANCHOR_LAT.to_radians().cos())).to_degrees();
    (lat, lng)
}

/// (lat, lng) degrees -> tangent-plane meters (x east, y north).
pub fn latlng_to_xy(lat: f64, lng: f64) -> (f64, f64) {
    let y = (lat - ANCHOR_LAT).to_radians() * EARTH_RADIUS_M;
    let x = (lng - ANCHOR_LNG).to_radians() * EARTH_RADIUS_M * ANCHOR_LAT.to_radians().cos();
    (x, y)
}

/// Bearing of the displacement `from -> to` on the tangent plane, in degrees
/// in (-180, 180], measured clockwise from north.
pub fn bearing_deg(from: (f64, f64), to: (f64, f64)) -> f64 {
    let (x1, y1) = latlng_to_xy(from.0, from.1);
    let (x2, y2) = latlng_to_xy(to.0, to.1);
    wrap_deg((x2 - x1).atan2(y2 - y1).to_degrees())
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Absolute shoelace area (m^2) of a polygon given as (lat, lng) vertices.
pub fn shoelace_area_m2(points: &[(f64, f64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(la, ln)| latlng_to_xy(la, ln)).collect();
    let mut twice = 0.0;
    for i in 0..xy.len() {
        let (x1, y1) = xy[i];
        let (x2, y2) = xy[(i + 1) % xy.len()];
        twice += x1 * y2 - x2 * y1;
    }
    twice.abs() / 2.0
}
