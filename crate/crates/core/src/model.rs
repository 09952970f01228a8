//! Shared flight domain types and validation of raw position reports.
//!
//! A raw report is a loose JSON field map as delivered by the flight API or
//! emitted by the simulator. [`validate_position`] turns it into a normalized
//! [`FlightPosition`] or a [`ValidationError`]; callers count failures as dead
//! letters instead of aborting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Integer UTC epoch seconds. The only time representation used across modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventTime(pub u64);

impl EventTime {
    pub const ZERO: EventTime = EventTime(0);

    pub fn seconds(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, secs: u64) -> EventTime {
        EventTime(self.0.saturating_sub(secs))
    }

    pub fn plus(self, secs: u64) -> EventTime {
        EventTime(self.0 + secs)
    }
}

impl fmt::Display for EventTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A latitude/longitude pair in degrees.
///
/// Longitude is kept in `(-180, 180]`; `-180` is folded onto `+180` so every
/// point has a single canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lng: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<GeoPoint, ValidationError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(ValidationError::OutOfRange { field: "lat", value: lat });
        }
        if !lng.is_finite() || !(-180.0..=180.0).contains(&lng) {
            return Err(ValidationError::OutOfRange { field: "lng", value: lng });
        }
        let lng = if lng == -180.0 { 180.0 } else { lng };
        Ok(GeoPoint { lat, lng })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlightStatus {
    #[serde(rename = "scheduled")]
    Scheduled,
    #[serde(rename = "en-route")]
    EnRoute,
    #[serde(rename = "landed")]
    Landed,
}

impl FlightStatus {
    pub const ALL: [FlightStatus; 3] = [FlightStatus::Scheduled, FlightStatus::EnRoute, FlightStatus::Landed];

    pub fn as_str(self) -> &'static str {
        match self {
            FlightStatus::Scheduled => "scheduled",
            FlightStatus::EnRoute => "en-route",
            FlightStatus::Landed => "landed",
        }
    }
}

impl fmt::Display for FlightStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlightStatus {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scheduled" => Ok(FlightStatus::Scheduled),
            "en-route" => Ok(FlightStatus::EnRoute),
            "landed" => Ok(FlightStatus::Landed),
            _ => Err(ValidationError::InvalidType { field: "status" }),
        }
    }
}

/// One timestamped aircraft state report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPosition {
    pub reg_number: Option<String>,
    pub flight_icao: String,
    pub flight_iata: Option<String>,
    pub airline_icao: Option<String>,
    pub dep_icao: Option<String>,
    pub arr_icao: Option<String>,
    pub lat: f64,
    pub lng: f64,
    /// Meters.
    pub alt: f64,
    /// Degrees clockwise from north, `[0, 360)`.
    pub dir: f64,
    /// km/h.
    pub speed: f64,
    pub status: FlightStatus,
    pub updated: EventTime,
}

impl FlightPosition {
    pub fn location(&self) -> GeoPoint {
        GeoPoint { lat: self.lat, lng: self.lng }
    }

    /// The field map form accepted by [`validate_position`]; also the JSON
    /// value written to the event log.
    pub fn to_raw(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut opt = |k: &str, v: &Option<String>| {
            if let Some(s) = v {
                m.insert(k.to_string(), Value::String(s.clone()));
            }
        };
        opt("reg_number", &self.reg_number);
        opt("flight_iata", &self.flight_iata);
        opt("airline_icao", &self.airline_icao);
        opt("dep_icao", &self.dep_icao);
        opt("arr_icao", &self.arr_icao);
        m.insert("flight_icao".into(), Value::String(self.flight_icao.clone()));
        m.insert("lat".into(), num(self.lat));
        m.insert("lng".into(), num(self.lng));
        m.insert("alt".into(), num(self.alt));
        m.insert("dir".into(), num(self.dir));
        m.insert("speed".into(), num(self.speed));
        m.insert("status".into(), Value::String(self.status.as_str().into()));
        m.insert("updated".into(), Value::from(self.updated.0));
        m
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&Value::Object(self.to_raw())).expect("position map serializes")
    }

    /// Decodes and validates a log value.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<FlightPosition, ValidationError> {
        match serde_json::from_slice::<Value>(bytes) {
            Ok(Value::Object(m)) => validate_position(&m),
            _ => Err(ValidationError::NotAnObject),
        }
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("record has no flight_icao")]
    MissingKeyField,
    #[error("required field `{0}` is missing")]
    MissingField(&'static str),
    #[error("field `{field}` has the wrong type")]
    InvalidType { field: &'static str },
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("record is not a JSON object")]
    NotAnObject,
}

/// Normalizes one raw report.
///
/// Required: `flight_icao` (non-empty), `lat`, `lng`, `alt`, `dir`, `speed`,
/// `updated`. Optional string fields that are missing or `null` become `None`.
/// A missing `status` defaults to `en-route`, the state the feed reports for
/// airborne flights.
pub fn validate_position(raw: &Map<String, Value>) -> Result<FlightPosition, ValidationError> {
    let flight_icao = match raw.get("flight_icao") {
        None | Some(Value::Null) => return Err(ValidationError::MissingKeyField),
        Some(Value::String(s)) if s.is_empty() => return Err(ValidationError::MissingKeyField),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ValidationError::InvalidType { field: "flight_icao" }),
    };

    let point = GeoPoint::new(number(raw, "lat")?, number(raw, "lng")?)?;

    let alt = number(raw, "alt")?;
    if alt < 0.0 {
        return Err(ValidationError::OutOfRange { field: "alt", value: alt });
    }
    let speed = number(raw, "speed")?;
    if speed < 0.0 {
        return Err(ValidationError::OutOfRange { field: "speed", value: speed });
    }
    let dir = normalize_heading(number(raw, "dir")?);

    let status = match raw.get("status") {
        None | Some(Value::Null) => FlightStatus::EnRoute,
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(ValidationError::InvalidType { field: "status" }),
    };

    let updated = match raw.get("updated") {
        None | Some(Value::Null) => return Err(ValidationError::MissingField("updated")),
        Some(Value::Number(n)) => {
            if let Some(u) = n.as_u64() {
                u
            } else if let Some(i) = n.as_i64() {
                return Err(ValidationError::OutOfRange { field: "updated", value: i as f64 });
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f.fract() != 0.0 || !(0.0..=u64::MAX as f64).contains(&f) {
                    return Err(ValidationError::OutOfRange { field: "updated", value: f });
                }
                f as u64
            }
        }
        Some(_) => return Err(ValidationError::InvalidType { field: "updated" }),
    };

    Ok(FlightPosition {
        reg_number: optional_string(raw, "reg_number")?,
        flight_icao,
        flight_iata: optional_string(raw, "flight_iata")?,
        airline_icao: optional_string(raw, "airline_icao")?,
        dep_icao: optional_string(raw, "dep_icao")?,
        arr_icao: optional_string(raw, "arr_icao")?,
        lat: point.lat,
        lng: point.lng,
        alt,
        dir,
        speed,
        status,
        updated: EventTime(updated),
    })
}

/// Folds any finite heading into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

fn number(raw: &Map<String, Value>, field: &'static str) -> Result<f64, ValidationError> {
    match raw.get(field) {
        None | Some(Value::Null) => Err(ValidationError::MissingField(field)),
        Some(Value::Number(n)) => {
            let v = n.as_f64().ok_or(ValidationError::InvalidType { field })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ValidationError::OutOfRange { field, value: v })
            }
        }
        Some(_) => Err(ValidationError::InvalidType { field }),
    }
}

fn optional_string(raw: &Map<String, Value>, field: &'static str) -> Result<Option<String>, ValidationError> {
    match raw.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ValidationError::InvalidType { field }),
    }
}
