//! Micro-batch stream processing over the event log.
//!
//! Each batch runs poll, watermark, windows, index actions, apply, commit, in
//! that order. Offsets are committed only after the index has accepted the
//! batch, and never past a record that still sits in an open window, so a
//! restart replays whatever the windows had not yet emitted. Document ids are
//! derived from content, which makes the replay idempotent.

mod pipeline;
mod window;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::eventlog::LogError;
use crate::index::{Aggregation, AggResult, Document, FieldValue, IndexConfig, IndexError, IndexStore, Query};
use crate::model::{EventTime, FlightPosition};

pub use pipeline::{BatchOutcome, CrashPoint, Pipeline};
pub use window::{
    advance_watermark, assign_window, update_windows, WatermarkState, WindowSnapshot, WindowState, UNKNOWN_AIRLINE,
    WINDOW_GEO_PRECISION,
};

/// Per-partition cap on records taken into one batch.
pub const MAX_RECORDS_PER_PARTITION: usize = 10_000;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("log unavailable: {0}")]
    Log(#[from] LogError),
    #[error("index failure: {0}")]
    Index(#[from] IndexError),
    #[error("injected crash after applying batch {0}")]
    InjectedCrash(u64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub batch_interval_seconds: u64,
    pub window_seconds: u64,
    pub allowed_lateness_seconds: u64,
    pub group_id: String,
    pub parallelism: usize,
    pub topic: String,
    pub positions_index: String,
    pub windows_index: String,
    pub max_records_per_partition: usize,
    /// Attempts per batch before an index failure is returned.
    pub apply_retries: u32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            batch_interval_seconds: 5,
            window_seconds: 60,
            allowed_lateness_seconds: 60,
            group_id: "skystream-pipeline".into(),
            parallelism: 2,
            topic: "flights".into(),
            positions_index: "flights".into(),
            windows_index: "flight_windows".into(),
            max_records_per_partition: MAX_RECORDS_PER_PARTITION,
            apply_retries: 5,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: &str| Err(StreamError::InvalidConfig(m.to_string()));
        if self.batch_interval_seconds == 0 {
            return bad("batch_interval_seconds must be > 0");
        }
        if self.window_seconds == 0 || !self.window_seconds.is_multiple_of(self.batch_interval_seconds) {
            return bad("window_seconds must be a positive multiple of batch_interval_seconds");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1");
        }
        if self.max_records_per_partition == 0 {
            return bad("max_records_per_partition must be >= 1");
        }
        if self.positions_index == self.windows_index {
            return bad("positions and windows indices must differ");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub partition: u32,
    pub offset: u64,
    pub position: FlightPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroBatch {
    pub batch_id: u64,
    /// Valid records ordered by partition, then offset.
    pub records: Vec<BatchRecord>,
    pub poll_time: EventTime,
    /// Records that failed to deserialize or validate.
    pub dead_letter: u64,
    /// Every record taken from the log, valid or not.
    pub fetched: u64,
    /// True when some partition hit the per-batch cap.
    pub capped: bool,
}

impl MicroBatch {
    pub fn empty(batch_id: u64, poll_time: EventTime) -> MicroBatch {
        MicroBatch { batch_id, records: vec![], poll_time, dead_letter: 0, fetched: 0, capped: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexAction {
    pub index: String,
    pub id: String,
    pub doc: Document,
}

pub fn position_doc_id(p: &FlightPosition) -> String {
    format!("{}:{}", p.flight_icao, p.updated)
}

pub fn window_doc_id(s: &WindowSnapshot) -> String {
    format!("win:{}", s.window_start)
}

pub fn position_document(p: &FlightPosition) -> Document {
    let mut d = Document::new();
    let mut put = |k: &str, v: FieldValue| {
        d.insert(k.to_string(), v);
    };
    put("flight_icao", FieldValue::Str(p.flight_icao.clone()));
    for (k, v) in [
        ("reg_number", &p.reg_number),
        ("flight_iata", &p.flight_iata),
        ("airline_icao", &p.airline_icao),
        ("dep_icao", &p.dep_icao),
        ("arr_icao", &p.arr_icao),
    ] {
        if let Some(v) = v {
            put(k, FieldValue::Str(v.clone()));
        }
    }
    put("location", FieldValue::Geo(p.location()));
    put("alt", FieldValue::Num(p.alt));
    put("dir", FieldValue::Num(p.dir));
    put("speed", FieldValue::Num(p.speed));
    put("status", FieldValue::Str(p.status.as_str().to_string()));
    put("updated", FieldValue::Time(p.updated));
    d
}

/// Snapshot document; the count maps are flattened to `<map>.<key>` fields.
pub fn window_document(s: &WindowSnapshot) -> Document {
    let mut d = Document::new();
    d.insert("window_start".into(), FieldValue::Time(s.window_start));
    d.insert("window_end".into(), FieldValue::Time(s.window_end));
    d.insert("flight_count".into(), FieldValue::Num(s.flight_count as f64));
    d.insert("distinct_flights".into(), FieldValue::Num(s.distinct_flights as f64));
    d.insert("avg_speed".into(), FieldValue::Num(s.avg_speed));
    d.insert("max_alt".into(), FieldValue::Num(s.max_alt));
    for (prefix, map) in [("status_counts", &s.status_counts), ("airline_counts", &s.airline_counts), ("geo_cell_counts", &s.geo_cell_counts)] {
        for (k, v) in map {
            d.insert(format!("{prefix}.{k}"), FieldValue::Num(*v as f64));
        }
    }
    d
}

/// One position upsert per record, then one snapshot upsert per closed window.
pub fn to_index_actions(batch: &MicroBatch, closed: &[WindowSnapshot], cfg: &StreamConfig) -> Vec<IndexAction> {
    let positions = batch.records.iter().map(|r| IndexAction {
        index: cfg.positions_index.clone(),
        id: position_doc_id(&r.position),
        doc: position_document(&r.position),
    });
    let windows = closed.iter().map(|s| IndexAction { index: cfg.windows_index.clone(), id: window_doc_id(s), doc: window_document(s) });
    positions.chain(windows).collect()
}

/// Where index actions land.
pub trait IndexSink: Send + Sync {
    /// Applies and publishes the actions; must be idempotent per doc id.
    fn apply(&self, actions: &[IndexAction]) -> Result<(), IndexError>;
    /// Makes applied actions durable before offsets are committed. Returns
    /// false when the sink skipped this checkpoint, in which case offsets are
    /// not committed; `force` asks for one regardless of any interval.
    fn checkpoint(&self, force: bool) -> Result<bool, IndexError> {
        let _ = force;
        Ok(true)
    }
    /// Largest `window_end` among stored snapshots.
    fn closed_through(&self) -> Result<EventTime, IndexError>;
    fn doc_count(&self) -> u64 {
        0
    }
}

/// Sink writing into an [`IndexStore`], optionally snapshotting on checkpoint.
pub struct StoreSink {
    store: Arc<IndexStore>,
    positions: String,
    windows: String,
    persist: bool,
    checkpoint_interval: Duration,
    last_checkpoint: Mutex<Option<Instant>>,
}

impl StoreSink {
    /// Creates both indices if needed. With `persist`, every checkpoint writes
    /// index snapshots to the store's directory.
    pub fn new(store: Arc<IndexStore>, cfg: &StreamConfig, persist: bool) -> Result<StoreSink, IndexError> {
        for name in [&cfg.positions_index, &cfg.windows_index] {
            store.ensure(IndexConfig { refresh_interval_seconds: 1, ..IndexConfig::new(name) })?;
        }
        Ok(StoreSink {
            store,
            positions: cfg.positions_index.clone(),
            windows: cfg.windows_index.clone(),
            persist,
            checkpoint_interval: Duration::ZERO,
            last_checkpoint: Mutex::new(None),
        })
    }

    /// Snapshot at most once per `interval` unless forced. Offsets only
    /// advance at snapshots, so a restart replays at most `interval` of log.
    pub fn with_checkpoint_interval(mut self, interval: Duration) -> StoreSink {
        self.checkpoint_interval = interval;
        self
    }

    pub fn store(&self) -> &Arc<IndexStore> {
        &self.store
    }

    /// Loads both indices from their snapshots, when present, and returns a
    /// persisting sink.
    pub fn restore(store: Arc<IndexStore>, cfg: &StreamConfig) -> Result<StoreSink, IndexError> {
        for name in [&cfg.positions_index, &cfg.windows_index] {
            store.load(IndexConfig { refresh_interval_seconds: 1, ..IndexConfig::new(name) })?;
        }
        StoreSink::new(store, cfg, true)
    }
}

impl IndexSink for StoreSink {
    fn apply(&self, actions: &[IndexAction]) -> Result<(), IndexError> {
        for name in [&self.positions, &self.windows] {
            let docs: Vec<(String, Document)> =
                actions.iter().filter(|a| &a.index == name).map(|a| (a.id.clone(), a.doc.clone())).collect();
            let idx = self.store.index(name)?;
            if !docs.is_empty() {
                idx.bulk(docs)?;
            }
            idx.refresh();
        }
        Ok(())
    }

    fn checkpoint(&self, force: bool) -> Result<bool, IndexError> {
        if !self.persist {
            return Ok(true);
        }
        let mut last = self.last_checkpoint.lock().unwrap();
        if !force && last.is_some_and(|t| t.elapsed() < self.checkpoint_interval) {
            return Ok(false);
        }
        self.store.snapshot(&self.positions)?;
        self.store.snapshot(&self.windows)?;
        *last = Some(Instant::now());
        Ok(true)
    }

    fn closed_through(&self) -> Result<EventTime, IndexError> {
        let idx = self.store.index(&self.windows)?;
        idx.refresh();
        match idx.aggregate(&Query::MatchAll, &Aggregation::Stats { field: "window_end".into() })? {
            AggResult::Stats(s) => Ok(EventTime(s.max.map_or(0, |m| m as u64))),
            AggResult::Buckets(_) => unreachable!("stats aggregation returns stats"),
        }
    }

    fn doc_count(&self) -> u64 {
        self.store.index(&self.positions).map_or(0, |i| i.doc_count() as u64)
    }
}

/// A stop flag whose waiters wake as soon as it is raised.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<(Mutex<bool>, Condvar)>);

impl StopSignal {
    pub fn new() -> StopSignal {
        StopSignal::default()
    }

    pub fn stop(&self) {
        *self.0 .0.lock().unwrap() = true;
        self.0 .1.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.0 .0.lock().unwrap()
    }

    /// Sleeps up to `timeout`; returns true if stopped.
    pub fn wait(&self, timeout: Duration) -> bool {
        let guard = self.0 .0.lock().unwrap();
        let (guard, _) = self.0 .1.wait_timeout_while(guard, timeout, |stopped| !*stopped).unwrap();
        *guard
    }
}

#[cfg(test)]
mod tests;
