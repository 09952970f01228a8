//! Event-time watermarks and tumbling-window aggregation.
//!
//! Lateness is judged per partition: an event is late when its time is below
//! `max event time seen so far in its partition - allowed lateness`. Windows
//! close once the minimum of the partition watermarks passes their end. Both
//! decisions depend only on each partition's own prefix, so cutting the same
//! log into different batches yields the same snapshots.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geohash;
use crate::model::{EventTime, FlightPosition};
use crate::numeric::exact_sum;

use super::MicroBatch;

/// Geohash length of `geo_cell_counts`.
pub const WINDOW_GEO_PRECISION: usize = 4;

/// Airline key for positions without an airline code.
pub const UNKNOWN_AIRLINE: &str = "unknown";

/// Start of the half-open window `[start, start + window_seconds)` holding `ts`.
pub fn assign_window(ts: EventTime, window_seconds: u64) -> EventTime {
    EventTime(ts.0 / window_seconds * window_seconds)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkState {
    lateness: u64,
    partition_max: Vec<Option<EventTime>>,
    pub late_dropped: u64,
}

impl WatermarkState {
    pub fn new(partitions: u32, allowed_lateness_seconds: u64) -> WatermarkState {
        WatermarkState { lateness: allowed_lateness_seconds, partition_max: vec![None; partitions as usize], late_dropped: 0 }
    }

    pub fn observe(&mut self, partition: u32, ts: EventTime) {
        let m = &mut self.partition_max[partition as usize];
        *m = Some(m.map_or(ts, |old| old.max(ts)));
    }

    /// Largest event time seen on any partition.
    pub fn max_event_time(&self) -> EventTime {
        self.partition_max.iter().flatten().copied().max().unwrap_or(EventTime::ZERO)
    }

    pub fn partition_watermark(&self, partition: u32) -> EventTime {
        self.partition_max[partition as usize].map_or(EventTime::ZERO, |m| m.saturating_sub(self.lateness))
    }

    /// Minimum over partitions; partitions that have seen nothing hold it at 0.
    pub fn watermark(&self) -> EventTime {
        (0..self.partition_max.len() as u32).map(|p| self.partition_watermark(p)).min().unwrap_or(EventTime::ZERO)
    }
}

/// Folds a batch's event times into the watermark state.
pub fn advance_watermark(state: &WatermarkState, batch: &MicroBatch) -> WatermarkState {
    let mut next = state.clone();
    for r in &batch.records {
        next.observe(r.partition, r.position.updated);
    }
    next
}

/// One closed tumbling-window aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSnapshot {
    pub window_start: EventTime,
    pub window_end: EventTime,
    pub flight_count: u64,
    pub distinct_flights: u64,
    pub avg_speed: f64,
    pub max_alt: f64,
    pub status_counts: BTreeMap<String, u64>,
    pub airline_counts: BTreeMap<String, u64>,
    pub geo_cell_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default)]
struct WindowAcc {
    flights: BTreeSet<String>,
    speeds: Vec<f64>,
    max_alt: f64,
    status_counts: BTreeMap<String, u64>,
    airline_counts: BTreeMap<String, u64>,
    geo_cell_counts: BTreeMap<String, u64>,
    /// Smallest contributing offset per partition.
    min_offsets: BTreeMap<u32, u64>,
}

impl WindowAcc {
    fn add(&mut self, partition: u32, offset: u64, p: &FlightPosition) {
        self.flights.insert(p.flight_icao.clone());
        self.max_alt = if self.speeds.is_empty() { p.alt } else { self.max_alt.max(p.alt) };
        self.speeds.push(p.speed);
        *self.status_counts.entry(p.status.as_str().to_string()).or_default() += 1;
        let airline = p.airline_icao.clone().unwrap_or_else(|| UNKNOWN_AIRLINE.to_string());
        *self.airline_counts.entry(airline).or_default() += 1;
        *self.geo_cell_counts.entry(geohash::encode(p.location(), WINDOW_GEO_PRECISION)).or_default() += 1;
        let m = self.min_offsets.entry(partition).or_insert(offset);
        *m = (*m).min(offset);
    }

    fn snapshot(self, start: EventTime, window_seconds: u64) -> WindowSnapshot {
        let n = self.speeds.len() as u64;
        WindowSnapshot {
            window_start: start,
            window_end: start.plus(window_seconds),
            flight_count: n,
            distinct_flights: self.flights.len() as u64,
            avg_speed: exact_sum(self.speeds.iter().copied()) / n as f64,
            max_alt: self.max_alt,
            status_counts: self.status_counts,
            airline_counts: self.airline_counts,
            geo_cell_counts: self.geo_cell_counts,
        }
    }
}

/// Open windows plus the boundary below which every window has been emitted.
#[derive(Debug, Clone)]
pub struct WindowState {
    window_seconds: u64,
    open: BTreeMap<EventTime, WindowAcc>,
    closed_through: EventTime,
}

impl WindowState {
    pub fn new(window_seconds: u64) -> WindowState {
        WindowState { window_seconds, open: BTreeMap::new(), closed_through: EventTime::ZERO }
    }

    /// Starts with every window ending at or before `closed_through` treated as
    /// already emitted (used after a restart).
    pub fn resume(window_seconds: u64, closed_through: EventTime) -> WindowState {
        WindowState { closed_through, ..WindowState::new(window_seconds) }
    }

    pub fn closed_through(&self) -> EventTime {
        self.closed_through
    }

    pub fn open_windows(&self) -> usize {
        self.open.len()
    }

    /// Accumulates the batch and returns the windows the new watermark closes,
    /// in window order.
    pub fn update(&mut self, wm: &mut WatermarkState, batch: &MicroBatch) -> Vec<WindowSnapshot> {
        for r in &batch.records {
            let ts = r.position.updated;
            let before = wm.partition_watermark(r.partition);
            wm.observe(r.partition, ts);
            let start = assign_window(ts, self.window_seconds);
            if ts < before || start.plus(self.window_seconds) <= self.closed_through {
                wm.late_dropped += 1;
                continue;
            }
            self.open.entry(start).or_default().add(r.partition, r.offset, &r.position);
        }
        self.close_until(wm.watermark())
    }

    fn close_until(&mut self, watermark: EventTime) -> Vec<WindowSnapshot> {
        // end <= watermark  <=>  start < floor(watermark / w) * w
        let boundary = assign_window(watermark, self.window_seconds);
        self.closed_through = self.closed_through.max(boundary);
        let keep = self.open.split_off(&boundary);
        let closed = std::mem::replace(&mut self.open, keep);
        closed.into_iter().map(|(start, acc)| acc.snapshot(start, self.window_seconds)).collect()
    }

    /// Closes every open window regardless of the watermark.
    pub fn finish(&mut self) -> Vec<WindowSnapshot> {
        let open = std::mem::take(&mut self.open);
        if let Some((&last, _)) = open.last_key_value() {
            self.closed_through = self.closed_through.max(last.plus(self.window_seconds));
        }
        open.into_iter().map(|(start, acc)| acc.snapshot(start, self.window_seconds)).collect()
    }

    /// Offsets safe to commit: never past a record still held by an open window.
    pub fn commit_offsets(&self, positions: &[u64]) -> Vec<u64> {
        let mut out = positions.to_vec();
        for acc in self.open.values() {
            for (&p, &o) in &acc.min_offsets {
                out[p as usize] = out[p as usize].min(o);
            }
        }
        out
    }
}

/// Convenience wrapper over [`WindowState::update`].
pub fn update_windows(state: &mut WindowState, wm: &mut WatermarkState, batch: &MicroBatch) -> Vec<WindowSnapshot> {
    state.update(wm, batch)
}
