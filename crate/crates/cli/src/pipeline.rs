//! `pipeline`: consumes the topic in micro-batches into the positions and
//! windows indices, snapshotting them under the data directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use skystream_core::eventlog::Topic;
use skystream_core::index::IndexStore;
use skystream_core::metrics::{Metrics, MetricsSnapshot};
use skystream_core::stream::{BatchOutcome, Pipeline, StopSignal, StoreSink};

use crate::{open_log, open_topic, CliError, Report, RunConfig};

pub fn metrics_path(data_dir: &Path) -> PathBuf {
    data_dir.join("_metrics.json")
}

/// Counters continuing from a previous run's snapshot, if any.
pub fn load_metrics(path: &Path) -> Metrics {
    let prev: MetricsSnapshot =
        std::fs::read(path).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default();
    let m = Metrics::default();
    Metrics::add(&m.records_produced, prev.records_produced);
    Metrics::add(&m.records_consumed, prev.records_consumed);
    Metrics::add(&m.dead_letter, prev.dead_letter);
    Metrics::add(&m.late_dropped, prev.late_dropped);
    Metrics::add(&m.batches_processed, prev.batches_processed);
    Metrics::add(&m.last_batch_latency_ms, prev.last_batch_latency_ms);
    Metrics::add(&m.index_doc_count, prev.index_doc_count);
    m
}

/// Writes the snapshot atomically so `serve` never reads a partial file.
pub fn write_metrics(path: &Path, snap: &MetricsSnapshot) -> Result<(), CliError> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec(snap).expect("metrics serialize");
    std::fs::write(&tmp, body)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))
}

fn publish(metrics: &Metrics, topic: &Topic, path: &Path) -> Result<(), CliError> {
    Metrics::raise(&metrics.records_produced, topic.high_watermarks().iter().sum());
    write_metrics(path, &metrics.snapshot())
}

#[derive(Debug, Default)]
struct Totals {
    batches: u64,
    fetched: u64,
    records: u64,
    dead_letter: u64,
    late_dropped: u64,
    windows_closed: u64,
}

impl Totals {
    fn add(&mut self, o: &BatchOutcome) {
        self.batches += 1;
        self.fetched += o.fetched;
        self.records += o.records;
        self.dead_letter += o.dead_letter;
        self.late_dropped += o.late_dropped;
        self.windows_closed += o.closed.len() as u64;
    }
}

/// With `drain`, processes everything already in the topic, closes the open
/// windows and returns. Otherwise runs one batch per interval until `stop`.
pub fn run_pipeline(cfg: &RunConfig, drain: bool, stop: &StopSignal) -> Result<Report, CliError> {
    let log = open_log(&cfg.data_dir)?;
    let (topic, _) = open_topic(&log, cfg)?;
    let store = Arc::new(IndexStore::with_dir(&cfg.data_dir));
    let stream = &cfg.pipeline.stream;
    let sink = StoreSink::restore(store.clone(), stream)?
        .with_checkpoint_interval(Duration::from_secs(cfg.pipeline.checkpoint_seconds));
    let mpath = metrics_path(&cfg.data_dir);
    let metrics = Arc::new(load_metrics(&mpath));
    let mut pipe = Pipeline::open(stream.clone(), log.clone(), Arc::new(sink), metrics.clone())?;
    log::info!("pipeline resuming at offsets {:?}", pipe.committed());
    let mut totals = Totals::default();
    if drain {
        for o in pipe.run_until_drained()? {
            totals.add(&o);
        }
        publish(&metrics, &topic, &mpath)?;
    } else {
        let mut failed = None;
        pipe.run(stop, |o| {
            totals.add(o);
            if o.fetched > 0 || !o.closed.is_empty() {
                log::info!(
                    "batch={} records={} dead_letter={} late_dropped={} closed={} latency_ms={}",
                    o.batch_id,
                    o.records,
                    o.dead_letter,
                    o.late_dropped,
                    o.closed.len(),
                    o.latency.as_millis()
                );
            }
            if let Err(e) = publish(&metrics, &topic, &mpath) {
                failed.get_or_insert(e);
                stop.stop();
            }
        })?;
        if let Some(e) = failed {
            return Err(e);
        }
    }
    let mut r = Report::default();
    r.push("batches", totals.batches)
        .push("fetched", totals.fetched)
        .push("records", totals.records)
        .push("dead_letter", totals.dead_letter)
        .push("late_dropped", totals.late_dropped)
        .push("windows_closed", totals.windows_closed)
        .push("committed", pipe.committed().iter().sum::<u64>())
        .push("positions_docs", store.index(&stream.positions_index)?.doc_count())
        .push("windows_docs", store.index(&stream.windows_index)?.doc_count());
    Ok(r)
}
