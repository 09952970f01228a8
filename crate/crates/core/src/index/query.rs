//! Query AST and its JSON form.
//!
//! ```json
//! {"match_all": {}}
//! {"term": {"status": "en-route"}}
//! {"range": {"alt": {"gte": 1000, "lt": 9000}}}
//! {"geo_bbox": {"location": {"top_left": {"lat": 50, "lng": -130},
//!                            "bottom_right": {"lat": 20, "lng": -60}}}}
//! {"bool": {"must": [...], "should": [...], "must_not": [...]}}
//! ```

use serde_json::{json, Map, Value};

use crate::model::GeoPoint;

use super::value::geo_from_json;
use super::IndexError;

/// A term or range operand. Strings match keyword fields, numbers match
/// number and time fields.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Str(String),
    Num(f64),
}

impl Scalar {
    fn from_json(v: &Value) -> Option<Scalar> {
        match v {
            Value::String(s) => Some(Scalar::Str(s.clone())),
            Value::Number(n) => n.as_f64().filter(|x| x.is_finite()).map(Scalar::Num),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Scalar::Str(s) => Value::String(s.clone()),
            Scalar::Num(x) => json!(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub value: Scalar,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    MatchAll,
    Term { field: String, value: Scalar },
    Range { field: String, min: Option<Bound>, max: Option<Bound> },
    GeoBbox { field: String, top_left: GeoPoint, bottom_right: GeoPoint },
    Bool { must: Vec<Query>, should: Vec<Query>, must_not: Vec<Query> },
}

fn malformed(msg: impl Into<String>) -> IndexError {
    IndexError::MalformedQuery(msg.into())
}

fn single_entry<'a>(v: &'a Value, what: &str) -> Result<(&'a String, &'a Value), IndexError> {
    match v {
        Value::Object(m) if m.len() == 1 => Ok(m.iter().next().unwrap()),
        _ => Err(malformed(format!("{what} must be an object with exactly one key"))),
    }
}

impl Query {
    pub fn term(field: &str, value: &str) -> Query {
        Query::Term { field: field.into(), value: Scalar::Str(value.into()) }
    }

    pub fn from_json(v: &Value) -> Result<Query, IndexError> {
        let (kind, body) = single_entry(v, "query")?;
        match kind.as_str() {
            "match_all" => match body {
                Value::Object(m) if m.is_empty() => Ok(Query::MatchAll),
                _ => Err(malformed("match_all takes an empty object")),
            },
            "term" => {
                let (field, operand) = single_entry(body, "term")?;
                let operand = match operand {
                    Value::Object(m) => m.get("value").ok_or_else(|| malformed("term object needs \"value\""))?,
                    other => other,
                };
                let value = Scalar::from_json(operand).ok_or_else(|| malformed("term value must be a string or number"))?;
                Ok(Query::Term { field: field.clone(), value })
            }
            "range" => {
                let (field, bounds) = single_entry(body, "range")?;
                let Value::Object(b) = bounds else {
                    return Err(malformed("range bounds must be an object"));
                };
                for k in b.keys() {
                    if !["gte", "gt", "lte", "lt"].contains(&k.as_str()) {
                        return Err(malformed(format!("unknown range bound {k:?}")));
                    }
                }
                let min = bound(b, "gte", "gt")?;
                let max = bound(b, "lte", "lt")?;
                Ok(Query::Range { field: field.clone(), min, max })
            }
            "geo_bbox" | "geo_bounding_box" => {
                let (field, corners) = single_entry(body, "geo_bbox")?;
                let corner = |name: &str| {
                    corners
                        .get(name)
                        .and_then(Value::as_object)
                        .and_then(geo_from_json)
                        .ok_or_else(|| malformed(format!("geo_bbox needs a valid {name}")))
                };
                let (top_left, bottom_right) = (corner("top_left")?, corner("bottom_right")?);
                if top_left.lat < bottom_right.lat {
                    return Err(malformed("geo_bbox top_left must not be south of bottom_right"));
                }
                Ok(Query::GeoBbox { field: field.clone(), top_left, bottom_right })
            }
            "bool" => {
                let Value::Object(m) = body else {
                    return Err(malformed("bool must be an object"));
                };
                let mut must = vec![];
                let mut should = vec![];
                let mut must_not = vec![];
                for (k, v) in m {
                    let target = match k.as_str() {
                        "must" | "filter" => &mut must,
                        "should" => &mut should,
                        "must_not" => &mut must_not,
                        other => return Err(malformed(format!("unknown bool clause {other:?}"))),
                    };
                    match v {
                        Value::Array(items) => {
                            for q in items {
                                target.push(Query::from_json(q)?);
                            }
                        }
                        q @ Value::Object(_) => target.push(Query::from_json(q)?),
                        _ => return Err(malformed("bool clauses take a query or a list of queries")),
                    }
                }
                Ok(Query::Bool { must, should, must_not })
            }
            other => Err(malformed(format!("unknown query type {other:?}"))),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Query::MatchAll => json!({ "match_all": {} }),
            Query::Term { field, value } => json!({ "term": { field.as_str(): value.to_json() } }),
            Query::Range { field, min, max } => {
                let mut b = Map::new();
                if let Some(m) = min {
                    b.insert(if m.inclusive { "gte" } else { "gt" }.into(), m.value.to_json());
                }
                if let Some(m) = max {
                    b.insert(if m.inclusive { "lte" } else { "lt" }.into(), m.value.to_json());
                }
                json!({ "range": { field.as_str(): b } })
            }
            Query::GeoBbox { field, top_left, bottom_right } => json!({
                "geo_bbox": { field.as_str(): {
                    "top_left": { "lat": top_left.lat, "lng": top_left.lng },
                    "bottom_right": { "lat": bottom_right.lat, "lng": bottom_right.lng },
                }}
            }),
            Query::Bool { must, should, must_not } => {
                let list = |qs: &[Query]| Value::Array(qs.iter().map(Query::to_json).collect());
                json!({ "bool": { "must": list(must), "should": list(should), "must_not": list(must_not) } })
            }
        }
    }
}

fn bound(b: &Map<String, Value>, inclusive: &str, exclusive: &str) -> Result<Option<Bound>, IndexError> {
    match (b.get(inclusive), b.get(exclusive)) {
        (Some(_), Some(_)) => Err(malformed(format!("range cannot have both {inclusive} and {exclusive}"))),
        (Some(v), None) | (None, Some(v)) => {
            let value = Scalar::from_json(v).ok_or_else(|| malformed("range bound must be a string or number"))?;
            Ok(Some(Bound { value, inclusive: b.contains_key(inclusive) }))
        }
        (None, None) => Ok(None),
    }
}
