//! Base-32 geohash cells for spatial binning.

use crate::model::GeoPoint;

pub const MAX_PRECISION: usize = 12;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// Encodes `p` as a geohash of `precision` characters (clamped to 1..=12).
pub fn encode(p: GeoPoint, precision: usize) -> String {
    let precision = precision.clamp(1, MAX_PRECISION);
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lng_lo, mut lng_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    let mut ch = 0u8;
    let mut bit = 0;
    while out.len() < precision {
        if even {
            let mid = (lng_lo + lng_hi) / 2.0;
            if p.lng >= mid {
                ch = (ch << 1) | 1;
                lng_lo = mid;
            } else {
                ch <<= 1;
                lng_hi = mid;
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if p.lat >= mid {
                ch = (ch << 1) | 1;
                lat_lo = mid;
            } else {
                ch <<= 1;
                lat_hi = mid;
            }
        }
        even = !even;
        bit += 1;
        if bit == 5 {
            out.push(BASE32[ch as usize] as char);
            bit = 0;
            ch = 0;
        }
    }
    out
}

/// Bounding box of a cell: `(lat_min, lat_max, lng_min, lng_max)`.
/// Returns `None` for characters outside the geohash alphabet.
pub fn decode_bbox(hash: &str) -> Option<(f64, f64, f64, f64)> {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lng_lo, mut lng_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in hash.bytes() {
        let idx = BASE32.iter().position(|&b| b == c)?;
        for shift in (0..5).rev() {
            let one = (idx >> shift) & 1 == 1;
            if even {
                let mid = (lng_lo + lng_hi) / 2.0;
                if one {
                    lng_lo = mid;
                } else {
                    lng_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if one {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Some((lat_lo, lat_hi, lng_lo, lng_hi))
}

pub fn decode_center(hash: &str) -> Option<GeoPoint> {
    decode_bbox(hash).map(|(a, b, c, d)| GeoPoint { lat: (a + b) / 2.0, lng: (c + d) / 2.0 })
}

/// Cell height and width in degrees at `precision`.
pub fn cell_size(precision: usize) -> (f64, f64) {
    let bits = 5 * precision.clamp(1, MAX_PRECISION) as i32;
    let lng_bits = (bits + 1) / 2;
    let lat_bits = bits / 2;
    (180.0 / 2f64.powi(lat_bits), 360.0 / 2f64.powi(lng_bits))
}

/// All cells at `precision` intersecting the box `[lat_min, lat_max] x [lng_min, lng_max]`
/// (no antimeridian wrap; callers split wrapped boxes). Sorted, deduplicated.
pub fn covering_cells(lat_min: f64, lat_max: f64, lng_min: f64, lng_max: f64, precision: usize) -> Vec<String> {
    let (h, w) = cell_size(precision);
    let lats = grid(lat_min, lat_max, h / 2.0);
    let lngs = grid(lng_min, lng_max, w / 2.0);
    let mut cells: Vec<String> = Vec::with_capacity(lats.len() * lngs.len());
    for &lat in &lats {
        for &lng in &lngs {
            cells.push(encode(GeoPoint { lat, lng }, precision));
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Number of grid points `covering_cells` would sample; lets callers pick a
/// precision before paying for the enumeration.
pub fn covering_estimate(lat_min: f64, lat_max: f64, lng_min: f64, lng_max: f64, precision: usize) -> f64 {
    let (h, w) = cell_size(precision);
    ((lat_max - lat_min) / (h / 2.0) + 2.0) * ((lng_max - lng_min) / (w / 2.0) + 2.0)
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut x = lo;
    while x < hi {
        v.push(x);
        x += step;
    }
    v.push(hi);
    v
}
