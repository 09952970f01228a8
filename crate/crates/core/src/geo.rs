//! Spherical-earth geodesy used by the flight simulator.

use thiserror::Error;

use crate::model::{normalize_heading, GeoPoint};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

// Central angles closer than this to 0 or π are treated as degenerate.
const DEGENERATE_EPS: f64 = 1e-12;
const ANTIPODAL_CHORD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("route endpoints are identical or antipodal")]
    DegenerateRoute,
}

/// Central angle between two points, radians, via the haversine formula.
fn central_angle(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = lat2 - lat1;
    let dlng = (b.lng - a.lng).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in kilometers.
///
/// Symmetric bit-for-bit: the endpoints are put in a fixed order first.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (a, b) = ordered(a, b);
    EARTH_RADIUS_KM * central_angle(a, b)
}

fn ordered(a: GeoPoint, b: GeoPoint) -> (GeoPoint, GeoPoint) {
    if (a.lat, a.lng) <= (b.lat, b.lng) {
        (a, b)
    } else {
        (b, a)
    }
}

fn unit_vector(p: GeoPoint) -> [f64; 3] {
    let (lat, lng) = (p.lat.to_radians(), p.lng.to_radians());
    [lat.cos() * lng.cos(), lat.cos() * lng.sin(), lat.sin()]
}

/// True when `b` is (numerically) the antipode of `a`.
///
/// Tested on the chord `|a + b|` because the haversine angle loses
/// precision near π.
pub fn is_antipodal(a: GeoPoint, b: GeoPoint) -> bool {
    let (u, v) = (unit_vector(a), unit_vector(b));
    let s: f64 = (0..3).map(|i| (u[i] + v[i]).powi(2)).sum();
    s.sqrt() < ANTIPODAL_CHORD_EPS
}

/// Forward azimuth from `a` toward `b`, degrees in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    if a == b || central_angle(a, b) < DEGENERATE_EPS || is_antipodal(a, b) {
        return Err(GeoError::DegenerateRoute);
    }
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlng = (b.lng - a.lng).to_radians();
    let y = dlng.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlng.cos();
    Ok(normalize_heading(y.atan2(x).to_degrees()))
}

/// Point at fraction `f` of the way from `a` to `b` along the great circle.
///
/// `f = 0` and `f = 1` return the endpoints exactly.
pub fn intermediate_point(a: GeoPoint, b: GeoPoint, f: f64) -> Result<GeoPoint, GeoError> {
    if is_antipodal(a, b) {
        return Err(GeoError::DegenerateRoute);
    }
    if f <= 0.0 {
        return Ok(a);
    }
    if f >= 1.0 {
        return Ok(b);
    }
    let delta = central_angle(a, b);
    if delta < DEGENERATE_EPS {
        return Ok(a);
    }
    let (lat1, lng1) = (a.lat.to_radians(), a.lng.to_radians());
    let (lat2, lng2) = (b.lat.to_radians(), b.lng.to_radians());
    let sd = delta.sin();
    let wa = ((1.0 - f) * delta).sin() / sd;
    let wb = (f * delta).sin() / sd;
    let x = wa * lat1.cos() * lng1.cos() + wb * lat2.cos() * lng2.cos();
    let y = wa * lat1.cos() * lng1.sin() + wb * lat2.cos() * lng2.sin();
    let z = wa * lat1.sin() + wb * lat2.sin();
    let lat = z.atan2((x * x + y * y).sqrt()).to_degrees().clamp(-90.0, 90.0);
    let mut lng = y.atan2(x).to_degrees();
    if lng <= -180.0 {
        lng += 360.0;
    }
    Ok(GeoPoint { lat, lng })
}
