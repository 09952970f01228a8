//! Random corpora, random query ASTs and a naive full-scan evaluator used as
//! the reference for the index.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use skystream_core::index::{AggResult, Aggregation, Bound, Bucket, BucketKey, Document, FieldValue, Query, Scalar, Stats};
use skystream_core::model::{EventTime, GeoPoint};
use skystream_core::rng::Xoshiro256;

const STATUSES: [&str; 4] = ["scheduled", "en-route", "landed", "EN-ROUTE"];
const AIRLINES: [&str; 8] = ["UAL", "dal", "AAL", "SWA", "JBU", "ASA", "nks", "FFT"];
pub const T0: u64 = 1_701_388_800;

fn pick<'a>(rng: &mut Xoshiro256, xs: &[&'a str]) -> &'a str {
    xs[rng.below(xs.len() as u64) as usize]
}

fn maybe(rng: &mut Xoshiro256) -> bool {
    rng.next_f64() < 0.9
}

fn point(rng: &mut Xoshiro256) -> GeoPoint {
    if rng.below(20) == 0 {
        // near the antimeridian
        let lng = rng.range_f64(170.0, 190.0);
        GeoPoint::new(rng.range_f64(-30.0, 0.0), if lng > 180.0 { lng - 360.0 } else { lng }).unwrap()
    } else {
        GeoPoint::new(rng.range_f64(25.0, 50.0), rng.range_f64(-125.0, -65.0)).unwrap()
    }
}

/// `n` upserts over roughly `0.9 n` distinct ids, so some documents are replaced.
pub fn gen_corpus(rng: &mut Xoshiro256, n: usize) -> Vec<(String, Document)> {
    let ids = (n as u64 * 9 / 10).max(1);
    (0..n)
        .map(|_| {
            let mut d = Document::new();
            if maybe(rng) {
                d.insert("status".into(), FieldValue::Str(pick(rng, &STATUSES).into()));
            }
            if maybe(rng) {
                d.insert("airline_icao".into(), FieldValue::Str(pick(rng, &AIRLINES).into()));
            }
            if maybe(rng) {
                d.insert("alt".into(), FieldValue::Num((rng.below(27) * 500) as f64));
            }
            if maybe(rng) {
                d.insert("speed".into(), FieldValue::Num(rng.range_f64(0.0, 950.0)));
            }
            if maybe(rng) {
                d.insert("updated".into(), FieldValue::Time(EventTime(T0 + rng.below(7200))));
            }
            if maybe(rng) {
                d.insert("location".into(), FieldValue::Geo(point(rng)));
            }
            (format!("doc{:06}", rng.below(ids)), d)
        })
        .collect()
}

/// The live set after applying `corpus` in order.
pub fn live_set(corpus: &[(String, Document)]) -> BTreeMap<String, Document> {
    corpus.iter().cloned().collect()
}

fn gen_leaf(rng: &mut Xoshiro256) -> Query {
    match rng.below(9) {
        0 => Query::MatchAll,
        1 => Query::Term { field: "status".into(), value: Scalar::Str(pick(rng, &STATUSES).into()) },
        2 => Query::Term { field: "airline_icao".into(), value: Scalar::Str(pick(rng, &AIRLINES).to_lowercase()) },
        3 => Query::Term { field: "alt".into(), value: Scalar::Num((rng.below(27) * 500) as f64) },
        4 => {
            let a = rng.range_f64(0.0, 950.0);
            let b = rng.range_f64(0.0, 950.0);
            Query::Range {
                field: "speed".into(),
                min: (rng.below(4) > 0).then(|| Bound { value: Scalar::Num(a.min(b)), inclusive: rng.below(2) == 0 }),
                max: (rng.below(4) > 0).then(|| Bound { value: Scalar::Num(a.max(b)), inclusive: rng.below(2) == 0 }),
            }
        }
        5 => {
            // discrete fields, so bounds regularly coincide with stored values
            let (field, lo, step) = if rng.below(2) == 0 { ("updated", T0, 1) } else { ("alt", 0, 500) };
            let a = lo + rng.below(27) * step * if step == 1 { 266 } else { 1 };
            let b = a + rng.below(10) * step * if step == 1 { 300 } else { 1 };
            Query::Range {
                field: field.into(),
                min: (rng.below(5) > 0).then(|| Bound { value: Scalar::Num(a as f64), inclusive: rng.below(2) == 0 }),
                max: (rng.below(5) > 0).then(|| Bound { value: Scalar::Num(b as f64), inclusive: rng.below(2) == 0 }),
            }
        }
        6 => Query::Range {
            field: "airline_icao".into(),
            min: Some(Bound { value: Scalar::Str(pick(rng, &AIRLINES).into()), inclusive: rng.below(2) == 0 }),
            max: None,
        },
        7 => {
            // small boxes take the covering-cell path, wide ones the scan path
            let (lat, lng) = (rng.range_f64(25.0, 50.0), rng.range_f64(-125.0, -65.0));
            let (h, w) = if rng.below(2) == 0 { (rng.range_f64(0.1, 2.0), rng.range_f64(0.1, 3.0)) } else { (20.0, 40.0) };
            Query::GeoBbox {
                field: "location".into(),
                top_left: GeoPoint { lat: (lat + h).min(90.0), lng },
                bottom_right: GeoPoint { lat, lng: (lng + w).min(180.0) },
            }
        }
        _ => Query::GeoBbox {
            field: "location".into(),
            top_left: GeoPoint { lat: 0.0, lng: rng.range_f64(165.0, 179.0) },
            bottom_right: GeoPoint { lat: -30.0, lng: rng.range_f64(-179.0, -170.0) },
        },
    }
}

pub fn gen_query(rng: &mut Xoshiro256, depth: u32) -> Query {
    if depth == 0 || rng.below(3) > 0 {
        return gen_leaf(rng);
    }
    let list = |rng: &mut Xoshiro256| (0..rng.below(3)).map(|_| gen_query(rng, depth - 1)).collect::<Vec<_>>();
    Query::Bool { must: list(rng), should: list(rng), must_not: list(rng) }
}

pub fn gen_aggs(rng: &mut Xoshiro256) -> Vec<Aggregation> {
    vec![
        Aggregation::Terms { field: "airline_icao".into(), size: 1 + rng.below(10) as usize },
        Aggregation::Terms { field: "alt".into(), size: 1 + rng.below(30) as usize },
        Aggregation::DateHistogram { field: "updated".into(), interval: [60, 300, 3600][rng.below(3) as usize] },
        Aggregation::Stats { field: "speed".into() },
        Aggregation::Stats { field: "updated".into() },
        Aggregation::GeohashGrid { field: "location".into(), precision: 1 + rng.below(5) as usize },
    ]
}

fn bound_ok<T: PartialOrd>(v: &T, b: &Option<(T, bool)>, lower: bool) -> bool {
    match b {
        None => true,
        Some((x, inc)) => {
            if lower {
                if *inc { v >= x } else { v > x }
            } else if *inc {
                v <= x
            } else {
                v < x
            }
        }
    }
}

/// Reference predicate: evaluates `q` against one document directly.
pub fn matches(doc: &Document, q: &Query) -> bool {
    match q {
        Query::MatchAll => true,
        Query::Term { field, value } => match (doc.get(field), value) {
            (Some(FieldValue::Str(s)), Scalar::Str(t)) => s.to_lowercase() == t.to_lowercase(),
            (Some(FieldValue::Num(x)), Scalar::Num(y)) => x == y,
            (Some(FieldValue::Time(t)), Scalar::Num(y)) => t.0 as f64 == *y,
            _ => false,
        },
        Query::Range { field, min, max } => {
            let Some(v) = doc.get(field) else { return false };
            let as_num = |b: &Option<Bound>| match b {
                None => Some(None),
                Some(Bound { value: Scalar::Num(x), inclusive }) => Some(Some((*x, *inclusive))),
                _ => None,
            };
            let as_str = |b: &Option<Bound>| match b {
                None => Some(None),
                Some(Bound { value: Scalar::Str(s), inclusive }) => Some(Some((s.to_lowercase(), *inclusive))),
                _ => None,
            };
            match v {
                FieldValue::Str(s) => match (as_str(min), as_str(max)) {
                    (Some(lo), Some(hi)) => {
                        let s = s.to_lowercase();
                        bound_ok(&s, &lo, true) && bound_ok(&s, &hi, false)
                    }
                    _ => false,
                },
                FieldValue::Num(_) | FieldValue::Time(_) => {
                    let x = match v {
                        FieldValue::Num(x) => *x,
                        FieldValue::Time(t) => t.0 as f64,
                        _ => unreachable!(),
                    };
                    match (as_num(min), as_num(max)) {
                        (Some(lo), Some(hi)) => bound_ok(&x, &lo, true) && bound_ok(&x, &hi, false),
                        _ => false,
                    }
                }
                FieldValue::Geo(_) => false,
            }
        }
        Query::GeoBbox { field, top_left, bottom_right } => match doc.get(field) {
            Some(FieldValue::Geo(p)) => {
                let lat_ok = p.lat <= top_left.lat && p.lat >= bottom_right.lat;
                let lng_ok = if top_left.lng <= bottom_right.lng {
                    p.lng >= top_left.lng && p.lng <= bottom_right.lng
                } else {
                    p.lng >= top_left.lng || p.lng <= bottom_right.lng
                };
                lat_ok && lng_ok
            }
            _ => false,
        },
        Query::Bool { must, should, must_not } => {
            must.iter().all(|q| matches(doc, q))
                && (should.is_empty() || should.iter().any(|q| matches(doc, q)))
                && !must_not.iter().any(|q| matches(doc, q))
        }
    }
}

/// Matching ids in ascending order.
pub fn oracle_search(live: &BTreeMap<String, Document>, q: &Query) -> Vec<String> {
    live.iter().filter(|(_, d)| matches(d, q)).map(|(id, _)| id.clone()).collect()
}

fn geohash_ref(p: GeoPoint, precision: usize) -> String {
    const B32: &[u8] = b"0123456789bcdefghjkmnpqrstuvwxyz";
    let (mut la, mut lo) = ((-90.0, 90.0), (-180.0, 180.0));
    let mut bits = Vec::new();
    for i in 0..precision * 5 {
        let (r, v): (&mut (f64, f64), f64) = if i % 2 == 0 { (&mut lo, p.lng) } else { (&mut la, p.lat) };
        let mid = (r.0 + r.1) / 2.0;
        if v >= mid {
            bits.push(1u8);
            r.0 = mid;
        } else {
            bits.push(0);
            r.1 = mid;
        }
    }
    bits.chunks(5).map(|c| B32[c.iter().fold(0usize, |a, b| a * 2 + *b as usize)] as char).collect()
}

fn ranked(counts: HashMap<BucketKey, u64>, size: usize) -> Vec<Bucket> {
    // ascending key first, then a stable sort by count puts ties in key order
    let mut keys: Vec<(BucketKey, u64)> = counts.into_iter().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0));
    keys.sort_by_key(|k| std::cmp::Reverse(k.1));
    keys.into_iter().take(size).map(|(key, doc_count)| Bucket { key, doc_count }).collect()
}

/// Brute-force aggregation over the filtered live set.
pub fn oracle_agg(live: &BTreeMap<String, Document>, filter: &Query, agg: &Aggregation) -> AggResult {
    let docs: Vec<&Document> = live.values().filter(|d| matches(d, filter)).collect();
    match agg {
        Aggregation::Terms { field, size } => {
            let mut counts = HashMap::new();
            for d in &docs {
                let key = match d.get(field) {
                    Some(FieldValue::Str(s)) => BucketKey::Str(s.to_lowercase()),
                    Some(FieldValue::Num(x)) => BucketKey::Num(*x),
                    Some(FieldValue::Time(t)) => BucketKey::Time(t.0),
                    _ => continue,
                };
                *counts.entry(key).or_insert(0) += 1;
            }
            AggResult::Buckets(ranked(counts, *size))
        }
        Aggregation::DateHistogram { field, interval } => {
            let mut counts = BTreeMap::new();
            for d in &docs {
                if let Some(FieldValue::Time(t)) = d.get(field) {
                    *counts.entry(t.0 - t.0 % interval).or_insert(0u64) += 1;
                }
            }
            AggResult::Buckets(counts.into_iter().map(|(k, c)| Bucket { key: BucketKey::Time(k), doc_count: c }).collect())
        }
        Aggregation::Stats { field } => {
            let xs: Vec<f64> = docs
                .iter()
                .filter_map(|d| match d.get(field) {
                    Some(FieldValue::Num(x)) => Some(*x),
                    Some(FieldValue::Time(t)) => Some(t.0 as f64),
                    _ => None,
                })
                .collect();
            if xs.is_empty() {
                return AggResult::Stats(Stats { count: 0, min: None, max: None, sum: 0.0, avg: None });
            }
            let mut acc = BigRational::zero();
            for x in &xs {
                acc += BigRational::from_float(*x).unwrap();
            }
            let sum = acc.to_f64().unwrap();
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            AggResult::Stats(Stats { count: xs.len() as u64, min: Some(min), max: Some(max), sum, avg: Some(sum / xs.len() as f64) })
        }
        Aggregation::GeohashGrid { field, precision } => {
            let mut counts = HashMap::new();
            for d in &docs {
                if let Some(FieldValue::Geo(p)) = d.get(field) {
                    *counts.entry(BucketKey::Str(geohash_ref(*p, *precision))).or_insert(0) += 1;
                }
            }
            AggResult::Buckets(ranked(counts, usize::MAX))
        }
    }
}
