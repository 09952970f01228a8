//! Process-wide pipeline counters exposed by the query service.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct Metrics {
    pub records_produced: AtomicU64,
    pub records_consumed: AtomicU64,
    pub dead_letter: AtomicU64,
    pub late_dropped: AtomicU64,
    pub batches_processed: AtomicU64,
    pub last_batch_latency_ms: AtomicU64,
    pub index_doc_count: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub records_produced: u64,
    pub records_consumed: u64,
    pub dead_letter: u64,
    pub late_dropped: u64,
    pub batches_processed: u64,
    pub last_batch_latency_ms: u64,
    pub index_doc_count: u64,
}

impl Metrics {
    pub fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Relaxed);
    }

    /// Raises a gauge that is only allowed to grow.
    pub fn raise(counter: &AtomicU64, v: u64) {
        counter.fetch_max(v, Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            records_produced: self.records_produced.load(Relaxed),
            records_consumed: self.records_consumed.load(Relaxed),
            dead_letter: self.dead_letter.load(Relaxed),
            late_dropped: self.late_dropped.load(Relaxed),
            batches_processed: self.batches_processed.load(Relaxed),
            last_batch_latency_ms: self.last_batch_latency_ms.load(Relaxed),
            index_doc_count: self.index_doc_count.load(Relaxed),
        }
    }
}
