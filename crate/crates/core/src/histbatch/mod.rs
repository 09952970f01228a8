//! Delay analytics over BTS on-time performance CSV files.
//!
//! A departure delay of 15 minutes or more counts as delayed; cancelled
//! flights are reported separately and left out of the percentage base.
//! Minutes are carried as integer hundredths so every total is exact.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Departure delay, in minutes, at which a flight counts as delayed.
pub const DELAY_THRESHOLD_MINUTES: f64 = 15.0;

pub const REQUIRED_COLUMNS: [&str; 13] = [
    "FL_DATE",
    "OP_CARRIER",
    "OP_CARRIER_FL_NUM",
    "ORIGIN",
    "ORIGIN_STATE_ABR",
    "DEST",
    "DEP_DELAY",
    "CANCELLED",
    "WEATHER_DELAY",
    "NAS_DELAY",
    "SECURITY_DELAY",
    "CARRIER_DELAY",
    "LATE_AIRCRAFT_DELAY",
];

#[derive(Debug, Error)]
pub enum HistError {
    #[error("required column {0} is missing from the header")]
    MissingColumn(&'static str),
    #[error("file is empty")]
    EmptyFile,
    #[error("no non-cancelled flights to summarize")]
    EmptyDataset,
    #[error("unknown dimension {0:?} (expected state, carrier or weekday)")]
    UnknownDimension(String),
    #[error("unknown metric {0:?} (expected flights, delayed or cause:<name>)")]
    UnknownMetric(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("summary json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Minutes in hundredths.
pub type Centi = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct BtsRecord {
    pub fl_date: NaiveDate,
    pub carrier: String,
    pub fl_num: String,
    pub origin: String,
    pub origin_state: String,
    pub dest: String,
    pub dep_delay: Option<Centi>,
    pub cancelled: bool,
    pub weather_delay: Option<Centi>,
    pub nas_delay: Option<Centi>,
    pub security_delay: Option<Centi>,
    pub carrier_delay: Option<Centi>,
    pub late_aircraft_delay: Option<Centi>,
}

impl BtsRecord {
    pub fn causes(&self) -> CauseMinutes {
        let c = |v: Option<Centi>| v.unwrap_or(0);
        CauseMinutes {
            weather: c(self.weather_delay),
            nas: c(self.nas_delay),
            security: c(self.security_delay),
            carrier: c(self.carrier_delay),
            late_aircraft: c(self.late_aircraft_delay),
        }
    }

    /// Treemap leaf name.
    pub fn flight(&self) -> String {
        format!("{}{}", self.carrier, self.fl_num)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    OnTime,
    Delayed,
    Cancelled,
}

pub fn classify(r: &BtsRecord) -> Outcome {
    if r.cancelled {
        Outcome::Cancelled
    } else if r.dep_delay.is_some_and(|d| d >= (DELAY_THRESHOLD_MINUTES * 100.0) as Centi) {
        Outcome::Delayed
    } else {
        Outcome::OnTime
    }
}

fn centi_to_json<S: serde::Serializer>(v: &Centi, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(*v as f64 / 100.0)
}

fn centi_from_json<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Centi, D::Error> {
    let v = f64::deserialize(d)?;
    Ok((v * 100.0).round() as Centi)
}

/// Minutes per delay cause, in hundredths; serialized as minutes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseMinutes {
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub weather: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub nas: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub security: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub carrier: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub late_aircraft: Centi,
}

impl CauseMinutes {
    pub fn total(&self) -> Centi {
        self.weather + self.nas + self.security + self.carrier + self.late_aircraft
    }

    pub fn get(&self, cause: Cause) -> Centi {
        match cause {
            Cause::Weather => self.weather,
            Cause::Nas => self.nas,
            Cause::Security => self.security,
            Cause::Carrier => self.carrier,
            Cause::LateAircraft => self.late_aircraft,
        }
    }

    fn add(&mut self, o: &CauseMinutes) {
        self.weather += o.weather;
        self.nas += o.nas;
        self.security += o.security;
        self.carrier += o.carrier;
        self.late_aircraft += o.late_aircraft;
    }
}

/// The weather / NAS / security subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperCauseMinutes {
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub weather: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub nas: Centi,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub security: Centi,
}

/// A percentage in hundredths; serialized with two decimals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percent(pub u32);

impl Serialize for Percent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0 as f64 / 100.0)
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Percent, D::Error> {
        Ok(Percent((f64::deserialize(d)? * 100.0).round() as u32))
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Per-key rollup. `flights` and `delayed` count non-cancelled flights;
/// `cause_minutes` covers every record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimStats {
    pub flights: u64,
    pub delayed: u64,
    pub cause_minutes: CauseMinutes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreemapNode {
    pub name: String,
    #[serde(serialize_with = "centi_to_json", deserialize_with = "centi_from_json")]
    pub weight: Centi,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreemapNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySummary {
    /// Every accepted record, cancelled ones included.
    pub total_flights: u64,
    pub on_time_count: u64,
    pub delayed_count: u64,
    pub cancelled_count: u64,
    pub on_time_pct: Percent,
    pub delayed_pct: Percent,
    pub cause_minutes: CauseMinutes,
    pub paper_cause_minutes: PaperCauseMinutes,
    pub by_state: BTreeMap<String, DimStats>,
    pub by_carrier: BTreeMap<String, DimStats>,
    pub by_weekday: BTreeMap<String, DimStats>,
    pub treemap: Vec<TreemapNode>,
}

fn weekday_name(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

/// `round(100 * part / whole)` in hundredths, halves rounded up.
fn percent_hundredths(part: u64, whole: u64) -> u32 {
    ((20_000 * part as u128 + whole as u128) / (2 * whole as u128)) as u32
}

pub fn summarize(records: &[BtsRecord]) -> Result<DelaySummary, HistError> {
    let mut s = DelaySummary {
        total_flights: records.len() as u64,
        on_time_count: 0,
        delayed_count: 0,
        cancelled_count: 0,
        on_time_pct: Percent(0),
        delayed_pct: Percent(0),
        cause_minutes: CauseMinutes::default(),
        paper_cause_minutes: PaperCauseMinutes::default(),
        by_state: BTreeMap::new(),
        by_carrier: BTreeMap::new(),
        by_weekday: BTreeMap::new(),
        treemap: vec![],
    };
    for r in records {
        let outcome = classify(r);
        match outcome {
            Outcome::OnTime => s.on_time_count += 1,
            Outcome::Delayed => s.delayed_count += 1,
            Outcome::Cancelled => s.cancelled_count += 1,
        }
        let causes = r.causes();
        s.cause_minutes.add(&causes);
        for (map, key) in [
            (&mut s.by_state, r.origin_state.as_str()),
            (&mut s.by_carrier, r.carrier.as_str()),
            (&mut s.by_weekday, weekday_name(r.fl_date.weekday())),
        ] {
            let d = map.entry(key.to_string()).or_default();
            d.cause_minutes.add(&causes);
            if outcome != Outcome::Cancelled {
                d.flights += 1;
                d.delayed += (outcome == Outcome::Delayed) as u64;
            }
        }
    }
    let base = s.on_time_count + s.delayed_count;
    if base == 0 {
        return Err(HistError::EmptyDataset);
    }
    s.on_time_pct = Percent(percent_hundredths(s.on_time_count, base));
    s.delayed_pct = Percent(10_000 - s.on_time_pct.0);
    s.paper_cause_minutes =
        PaperCauseMinutes { weather: s.cause_minutes.weather, nas: s.cause_minutes.nas, security: s.cause_minutes.security };
    s.treemap = treemap_data(records);
    Ok(s)
}

/// Carrier nodes weighted by total delay-cause minutes, each with one child
/// per flight number. Nodes with zero minutes are left out; siblings are
/// ordered by weight descending, then name.
pub fn treemap_data(records: &[BtsRecord]) -> Vec<TreemapNode> {
    let mut by_carrier: BTreeMap<&str, BTreeMap<String, Centi>> = BTreeMap::new();
    for r in records {
        let m = r.causes().total();
        if m > 0 {
            *by_carrier.entry(&r.carrier).or_default().entry(r.flight()).or_default() += m;
        }
    }
    let order = |a: &TreemapNode, b: &TreemapNode| b.weight.cmp(&a.weight).then_with(|| a.name.cmp(&b.name));
    let mut nodes: Vec<TreemapNode> = by_carrier
        .into_iter()
        .map(|(carrier, flights)| {
            let mut children: Vec<TreemapNode> =
                flights.into_iter().map(|(name, weight)| TreemapNode { name, weight, children: vec![] }).collect();
            children.sort_by(order);
            TreemapNode { name: carrier.to_string(), weight: children.iter().map(|c| c.weight).sum(), children }
        })
        .collect();
    nodes.sort_by(order);
    nodes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    State,
    Carrier,
    Weekday,
}

impl FromStr for Dimension {
    type Err = HistError;

    fn from_str(s: &str) -> Result<Dimension, HistError> {
        match s {
            "state" => Ok(Dimension::State),
            "carrier" => Ok(Dimension::Carrier),
            "weekday" => Ok(Dimension::Weekday),
            other => Err(HistError::UnknownDimension(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Weather,
    Nas,
    Security,
    Carrier,
    LateAircraft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Flights,
    Delayed,
    Cause(Cause),
}

impl FromStr for Metric {
    type Err = HistError;

    fn from_str(s: &str) -> Result<Metric, HistError> {
        let cause = match s {
            "flights" => return Ok(Metric::Flights),
            "delayed" => return Ok(Metric::Delayed),
            "cause:weather" => Cause::Weather,
            "cause:nas" => Cause::Nas,
            "cause:security" => Cause::Security,
            "cause:carrier" => Cause::Carrier,
            "cause:late_aircraft" => Cause::LateAircraft,
            other => return Err(HistError::UnknownMetric(other.into())),
        };
        Ok(Metric::Cause(cause))
    }
}

/// `(key, value)` by value descending, ties by key ascending. Cause values
/// are in hundredths of a minute.
pub fn rank_dimension(summary: &DelaySummary, dim: Dimension, metric: Metric) -> Vec<(String, i64)> {
    let map = match dim {
        Dimension::State => &summary.by_state,
        Dimension::Carrier => &summary.by_carrier,
        Dimension::Weekday => &summary.by_weekday,
    };
    let mut out: Vec<(String, i64)> = map
        .iter()
        .map(|(k, d)| {
            let v = match metric {
                Metric::Flights => d.flights as i64,
                Metric::Delayed => d.delayed as i64,
                Metric::Cause(c) => d.cause_minutes.get(c),
            };
            (k.clone(), v)
        })
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Canonical form: compact JSON with object keys sorted, plus a newline.
pub fn to_canonical_json(summary: &DelaySummary) -> Result<Vec<u8>, HistError> {
    // serde_json's Map keeps keys sorted (no `preserve_order`).
    let mut out = serde_json::to_vec(&serde_json::to_value(summary)?)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes the canonical JSON via a temporary file and rename.
pub fn export_summary(summary: &DelaySummary, path: &Path) -> Result<(), HistError> {
    let bytes = to_canonical_json(summary)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub records: Vec<BtsRecord>,
    /// Data rows that failed type checks.
    pub rejected: u64,
}

pub fn parse_bts_csv(path: &Path) -> Result<ParsedCsv, HistError> {
    parse_bts_reader(std::fs::File::open(path)?)
}

/// Accepts `YYYY-MM-DD` and `M/D/YYYY` with an optional trailing time.
fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.split_whitespace().next()?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d").or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y")).ok()
}

/// Minutes as hundredths; values finer than 1/100 are rejected.
fn parse_minutes(s: &str) -> Result<Option<Centi>, ()> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| ())?;
    let c = (v * 100.0).round();
    if !v.is_finite() || (v * 100.0 - c).abs() > 1e-6 || c.abs() > 1e15 {
        return Err(());
    }
    Ok(Some(c as Centi))
}

fn parse_flag(s: &str) -> Result<bool, ()> {
    match s.trim() {
        "1" | "1.0" | "1.00" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "0.0" | "0.00" | "false" | "FALSE" | "False" => Ok(false),
        _ => Err(()),
    }
}

fn parse_row(row: &csv::StringRecord, cols: &[usize; 13]) -> Result<BtsRecord, ()> {
    let f = |i: usize| row.get(cols[i]).map(str::trim).ok_or(());
    let text = |i: usize| f(i).and_then(|s| if s.is_empty() { Err(()) } else { Ok(s.to_string()) });
    let cause = |i: usize| match parse_minutes(f(i)?)? {
        Some(m) if m < 0 => Err(()),
        m => Ok(m),
    };
    let state = text(4)?;
    if state.len() != 2 || !state.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(());
    }
    let cancelled = parse_flag(f(7)?)?;
    let dep_delay = parse_minutes(f(6)?)?;
    Ok(BtsRecord {
        fl_date: parse_date(f(0)?).ok_or(())?,
        carrier: text(1)?,
        fl_num: text(2)?,
        origin: text(3)?,
        origin_state: state,
        dest: text(5)?,
        // A cancelled flight has no departure delay even if the row has one.
        dep_delay: if cancelled { None } else { dep_delay },
        cancelled,
        weather_delay: cause(8)?,
        nas_delay: cause(9)?,
        security_delay: cause(10)?,
        carrier_delay: cause(11)?,
        late_aircraft_delay: cause(12)?,
    })
}

/// Header-driven parse; columns may come in any order and extra columns are
/// ignored. Rows that fail a type check are counted, not fatal.
pub fn parse_bts_reader(input: impl Read) -> Result<ParsedCsv, HistError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(HistError::EmptyFile);
    }
    let names: Vec<String> = header.iter().map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_uppercase()).collect();
    let mut cols = [0usize; 13];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = names.iter().position(|n| n == name).ok_or(HistError::MissingColumn(name))?;
    }
    let mut out = ParsedCsv { records: vec![], rejected: 0 };
    for row in rdr.records() {
        match row {
            Ok(row) if row.iter().all(|f| f.trim().is_empty()) => {}
            Ok(row) => match parse_row(&row, &cols) {
                Ok(r) => out.records.push(r),
                Err(()) => out.rejected += 1,
            },
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => out.rejected += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
