//! Aggregation AST, JSON form and bucket computation.
//!
//! ```json
//! {"terms": {"field": "airline_icao", "size": 10}}
//! {"date_histogram": {"field": "updated", "interval": 60}}
//! {"stats": {"field": "speed"}}
//! {"geohash_grid": {"field": "location", "precision": 4}}
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Value};

use crate::geohash;
use crate::numeric::exact_sum;

use super::value::{normalize_keyword, FieldType, FieldValue};
use super::IndexError;

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregation {
    Terms { field: String, size: usize },
    DateHistogram { field: String, interval: u64 },
    Stats { field: String },
    GeohashGrid { field: String, precision: usize },
}

fn malformed(msg: impl Into<String>) -> IndexError {
    IndexError::MalformedQuery(msg.into())
}

/// Parses `60`, `"60"`, `"60s"`, `"5m"`, `"1h"` or `"1d"` into seconds.
fn parse_interval(v: &Value) -> Option<u64> {
    if let Some(n) = v.as_u64() {
        return Some(n);
    }
    let s = v.as_str()?;
    let (digits, unit) = match s.find(|c: char| !c.is_ascii_digit()) {
        Some(i) => s.split_at(i),
        None => (s, "s"),
    };
    let n: u64 = digits.parse().ok()?;
    let mult = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return None,
    };
    n.checked_mul(mult)
}

impl Aggregation {
    pub fn field(&self) -> &str {
        match self {
            Aggregation::Terms { field, .. }
            | Aggregation::DateHistogram { field, .. }
            | Aggregation::Stats { field }
            | Aggregation::GeohashGrid { field, .. } => field,
        }
    }

    pub fn from_json(v: &Value) -> Result<Aggregation, IndexError> {
        let Some((kind, body)) = v.as_object().filter(|m| m.len() == 1).and_then(|m| m.iter().next()) else {
            return Err(malformed("aggregation must be an object with exactly one key"));
        };
        let field = body
            .get("field")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("{kind} needs a string \"field\"")))?
            .to_string();
        let agg = match kind.as_str() {
            "terms" => {
                let size = match body.get("size") {
                    None => 10,
                    Some(v) => v.as_u64().ok_or_else(|| malformed("terms size must be a positive integer"))? as usize,
                };
                Aggregation::Terms { field, size }
            }
            "date_histogram" => {
                let raw = body
                    .get("interval")
                    .or_else(|| body.get("fixed_interval"))
                    .ok_or_else(|| malformed("date_histogram needs \"interval\""))?;
                let interval = parse_interval(raw).ok_or_else(|| malformed("invalid date_histogram interval"))?;
                Aggregation::DateHistogram { field, interval }
            }
            "stats" => Aggregation::Stats { field },
            "geohash_grid" => {
                let precision = match body.get("precision") {
                    None => 4,
                    Some(v) => v.as_u64().ok_or_else(|| malformed("geohash_grid precision must be an integer"))? as usize,
                };
                Aggregation::GeohashGrid { field, precision }
            }
            other => return Err(malformed(format!("unknown aggregation type {other:?}"))),
        };
        agg.validate()?;
        Ok(agg)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        match self {
            Aggregation::Terms { size: 0, .. } => Err(malformed("terms size must be at least 1")),
            Aggregation::DateHistogram { interval: 0, .. } => Err(malformed("date_histogram interval must be at least 1")),
            Aggregation::GeohashGrid { precision, .. } if !(1..=geohash::MAX_PRECISION).contains(precision) => {
                Err(malformed("geohash_grid precision must be within 1..=12"))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Aggregation::Terms { field, size } => json!({ "terms": { "field": field, "size": size } }),
            Aggregation::DateHistogram { field, interval } => {
                json!({ "date_histogram": { "field": field, "interval": interval } })
            }
            Aggregation::Stats { field } => json!({ "stats": { "field": field } }),
            Aggregation::GeohashGrid { field, precision } => {
                json!({ "geohash_grid": { "field": field, "precision": precision } })
            }
        }
    }

    /// Field types this aggregation accepts.
    fn accepts(&self, t: FieldType) -> bool {
        match self {
            Aggregation::Terms { .. } => t != FieldType::GeoPoint,
            Aggregation::DateHistogram { .. } => t == FieldType::Time,
            Aggregation::Stats { .. } => matches!(t, FieldType::Number | FieldType::Time),
            Aggregation::GeohashGrid { .. } => t == FieldType::GeoPoint,
        }
    }

    pub(crate) fn check_type(&self, mapped: Option<FieldType>) -> Result<(), IndexError> {
        match mapped {
            Some(t) if !self.accepts(t) => Err(IndexError::TypeMismatch { field: self.field().to_string(), found: t }),
            _ => Ok(()),
        }
    }

    /// Computes the aggregation over the field values of the matching
    /// documents. Values of other types are ignored (callers type-check first).
    pub(crate) fn compute<'a>(&self, values: impl Iterator<Item = &'a FieldValue>) -> AggResult {
        match self {
            Aggregation::Terms { size, .. } => {
                let mut counts: HashMap<BucketKey, u64> = HashMap::new();
                for v in values {
                    let key = match v {
                        FieldValue::Str(s) => BucketKey::Str(normalize_keyword(s)),
                        FieldValue::Num(x) => BucketKey::Num(*x),
                        FieldValue::Time(t) => BucketKey::Time(t.0),
                        FieldValue::Geo(_) => continue,
                    };
                    *counts.entry(key).or_default() += 1;
                }
                AggResult::Buckets(top_buckets(counts, *size))
            }
            Aggregation::DateHistogram { interval, .. } => {
                let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
                for v in values {
                    if let FieldValue::Time(t) = v {
                        *counts.entry(t.0 / interval * interval).or_default() += 1;
                    }
                }
                AggResult::Buckets(counts.into_iter().map(|(k, c)| Bucket { key: BucketKey::Time(k), doc_count: c }).collect())
            }
            Aggregation::Stats { .. } => {
                let xs: Vec<f64> = values.filter_map(FieldValue::as_f64).collect();
                AggResult::Stats(Stats::of(&xs))
            }
            Aggregation::GeohashGrid { precision, .. } => {
                let mut counts: HashMap<BucketKey, u64> = HashMap::new();
                for v in values {
                    if let FieldValue::Geo(p) = v {
                        *counts.entry(BucketKey::Str(geohash::encode(*p, *precision))).or_default() += 1;
                    }
                }
                AggResult::Buckets(top_buckets(counts, usize::MAX))
            }
        }
    }
}

fn top_buckets(counts: HashMap<BucketKey, u64>, size: usize) -> Vec<Bucket> {
    let mut buckets: Vec<Bucket> = counts.into_iter().map(|(key, doc_count)| Bucket { key, doc_count }).collect();
    buckets.sort_by(|a, b| b.doc_count.cmp(&a.doc_count).then_with(|| a.key.cmp(&b.key)));
    buckets.truncate(size);
    buckets
}

#[derive(Debug, Clone, PartialEq)]
pub enum BucketKey {
    Str(String),
    Num(f64),
    Time(u64),
}

impl Eq for BucketKey {}

impl std::hash::Hash for BucketKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            BucketKey::Str(s) => (0u8, s).hash(state),
            // +0.0 and -0.0 compare equal and must hash equally
            BucketKey::Num(x) => (1u8, if *x == 0.0 { 0 } else { x.to_bits() }).hash(state),
            BucketKey::Time(t) => (2u8, t).hash(state),
        }
    }
}

impl Ord for BucketKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (BucketKey::Str(a), BucketKey::Str(b)) => a.cmp(b),
            (BucketKey::Num(a), BucketKey::Num(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
            (BucketKey::Time(a), BucketKey::Time(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for BucketKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl BucketKey {
    fn rank(&self) -> u8 {
        match self {
            BucketKey::Str(_) => 0,
            BucketKey::Num(_) => 1,
            BucketKey::Time(_) => 2,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            BucketKey::Str(s) => Value::String(s.clone()),
            BucketKey::Num(x) => json!(x),
            BucketKey::Time(t) => json!(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub key: BucketKey,
    pub doc_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub count: u64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Correctly rounded sum of the values.
    pub sum: f64,
    pub avg: Option<f64>,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Stats {
        if xs.is_empty() {
            return Stats { count: 0, min: None, max: None, sum: 0.0, avg: None };
        }
        let sum = exact_sum(xs.iter().copied());
        Stats {
            count: xs.len() as u64,
            min: xs.iter().copied().reduce(f64::min),
            max: xs.iter().copied().reduce(f64::max),
            sum,
            avg: Some(sum / xs.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggResult {
    Buckets(Vec<Bucket>),
    Stats(Stats),
}

impl AggResult {
    pub fn to_json(&self) -> Value {
        match self {
            AggResult::Buckets(b) => json!({
                "buckets": b.iter().map(|b| json!({ "key": b.key.to_json(), "doc_count": b.doc_count })).collect::<Vec<_>>()
            }),
            AggResult::Stats(s) => json!({ "count": s.count, "min": s.min, "max": s.max, "sum": s.sum, "avg": s.avg }),
        }
    }
}
