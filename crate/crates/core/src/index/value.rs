//! Typed field values and dynamic-mapping types.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::{EventTime, GeoPoint};

use super::IndexError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum FieldValue {
    Str(String),
    Num(f64),
    Time(EventTime),
    Geo(GeoPoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Keyword,
    Number,
    Time,
    GeoPoint,
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldType::Keyword => "keyword",
            FieldType::Number => "number",
            FieldType::Time => "time",
            FieldType::GeoPoint => "geo_point",
        })
    }
}

impl FieldValue {
    pub fn field_type(&self) -> FieldType {
        match self {
            FieldValue::Str(_) => FieldType::Keyword,
            FieldValue::Num(_) => FieldType::Number,
            FieldValue::Time(_) => FieldType::Time,
            FieldValue::Geo(_) => FieldType::GeoPoint,
        }
    }

    /// Numeric view used by range queries, stats and sorting.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FieldValue::Num(v) => Some(*v),
            FieldValue::Time(t) => Some(t.0 as f64),
            _ => None,
        }
    }

    /// Plain JSON as returned in search hits.
    pub fn to_json(&self) -> Value {
        match self {
            FieldValue::Str(s) => Value::String(s.clone()),
            FieldValue::Num(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            FieldValue::Time(t) => Value::from(t.0),
            FieldValue::Geo(p) => serde_json::json!({ "lat": p.lat, "lng": p.lng }),
        }
    }

    /// Infers a value from plain JSON: strings are keywords, numbers are
    /// numbers, `{lat, lng|lon}` objects are geo points. Time values cannot be
    /// inferred and must be built explicitly.
    pub fn from_json(field: &str, v: &Value) -> Result<FieldValue, IndexError> {
        let bad = || IndexError::InvalidValue { field: field.to_string() };
        match v {
            Value::String(s) => Ok(FieldValue::Str(s.clone())),
            Value::Number(n) => n.as_f64().filter(|x| x.is_finite()).map(FieldValue::Num).ok_or_else(bad),
            Value::Object(m) => geo_from_json(m).map(FieldValue::Geo).ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

pub(crate) fn geo_from_json(m: &Map<String, Value>) -> Option<GeoPoint> {
    let lat = m.get("lat")?.as_f64()?;
    let lng = m.get("lng").or_else(|| m.get("lon"))?.as_f64()?;
    GeoPoint::new(lat, lng).ok()
}

/// Keyword normalization: whole-value terms, case-folded.
pub fn normalize_keyword(s: &str) -> String {
    s.to_lowercase()
}

/// A document body: field name to typed value.
pub type Document = BTreeMap<String, FieldValue>;

pub fn document_to_json(doc: &Document) -> Value {
    Value::Object(doc.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

/// Builds a document from a plain JSON object using [`FieldValue::from_json`].
/// `null` members are skipped.
pub fn document_from_json(v: &Value) -> Result<Document, IndexError> {
    let Value::Object(m) = v else {
        return Err(IndexError::InvalidValue { field: String::new() });
    };
    m.iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| Ok((k.clone(), FieldValue::from_json(k, v)?)))
        .collect()
}
