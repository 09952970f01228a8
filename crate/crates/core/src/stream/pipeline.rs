//! The poll / window / apply / commit loop.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};

use crate::eventlog::{EventLog, LogError, Topic};
use crate::metrics::Metrics;
use crate::model::{EventTime, FlightPosition};

use super::window::{WatermarkState, WindowSnapshot, WindowState};
use super::{to_index_actions, BatchRecord, IndexSink, MicroBatch, StopSignal, StreamConfig, StreamError};

/// Fault injection for restart tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Fail the given batch after its index actions were applied and before
    /// its offsets are committed.
    AfterApplyBeforeCommit { batch_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub batch_id: u64,
    pub fetched: u64,
    pub records: u64,
    pub dead_letter: u64,
    pub late_dropped: u64,
    pub closed: Vec<WindowSnapshot>,
    pub watermark: EventTime,
    pub committed: Vec<u64>,
    pub latency: Duration,
    pub capped: bool,
}

pub struct Pipeline {
    cfg: StreamConfig,
    log: Arc<EventLog>,
    topic: Arc<Topic>,
    sink: Arc<dyn IndexSink>,
    metrics: Arc<Metrics>,
    positions: Vec<u64>,
    committed: Vec<u64>,
    watermarks: WatermarkState,
    windows: WindowState,
    next_batch_id: u64,
    crash: Option<CrashPoint>,
}

type PartitionPoll = (u32, Vec<(u64, Option<FlightPosition>)>, u64, bool);

fn wall_clock() -> EventTime {
    EventTime(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

impl Pipeline {
    /// Registers the consumer group and restores state from the committed
    /// offsets: partition watermarks from the already-consumed log prefix and
    /// the closed-window boundary from the snapshot index.
    pub fn open(
        cfg: StreamConfig,
        log: Arc<EventLog>,
        sink: Arc<dyn IndexSink>,
        metrics: Arc<Metrics>,
    ) -> Result<Pipeline, StreamError> {
        cfg.validate()?;
        let topic = log.topic(&cfg.topic)?;
        log.register_group(&cfg.group_id)?;
        let parts = topic.partition_count();
        let mut watermarks = WatermarkState::new(parts, cfg.allowed_lateness_seconds);
        let mut committed = Vec::with_capacity(parts as usize);
        let mut positions = Vec::with_capacity(parts as usize);
        for p in 0..parts {
            let c = log.committed(&cfg.group_id, &cfg.topic, p)?;
            let floor = topic.log_start_offset(p)?;
            let mut at = floor.min(c);
            while at < c {
                let recs = topic.fetch(p, at, cfg.max_records_per_partition.min((c - at) as usize))?;
                if recs.is_empty() {
                    break;
                }
                for r in &recs {
                    if let Ok(pos) = FlightPosition::from_json_bytes(&r.value) {
                        watermarks.observe(p, pos.updated);
                    }
                }
                at = recs.last().unwrap().offset + 1;
            }
            committed.push(c);
            positions.push(c.max(floor));
        }
        let windows = WindowState::resume(cfg.window_seconds, sink.closed_through()?);
        Ok(Pipeline {
            cfg,
            log,
            topic,
            sink,
            metrics,
            positions,
            committed,
            watermarks,
            windows,
            next_batch_id: 0,
            crash: None,
        })
    }

    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash = Some(point);
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions
    }

    pub fn committed(&self) -> &[u64] {
        &self.committed
    }

    pub fn watermark_state(&self) -> &WatermarkState {
        &self.watermarks
    }

    pub fn window_state(&self) -> &WindowState {
        &self.windows
    }

    /// True when every partition has been read up to its high watermark.
    pub fn caught_up(&self) -> bool {
        self.topic.high_watermarks().iter().zip(&self.positions).all(|(hw, pos)| pos >= hw)
    }

    fn poll_partition(&self, p: u32, cutoff: Option<EventTime>) -> Result<PartitionPoll, LogError> {
        let cap = self.cfg.max_records_per_partition;
        let mut from = self.positions[p as usize];
        let recs = match self.topic.fetch(p, from, cap) {
            Err(LogError::OffsetOutOfRange { floor, .. }) => {
                warn!("partition {p}: offsets {from}..{floor} were removed by retention before being consumed");
                from = floor;
                self.topic.fetch(p, from, cap)?
            }
            other => other?,
        };
        let capped = recs.len() == cap;
        let take = match cutoff {
            Some(c) => recs.iter().position(|r| r.timestamp > c).unwrap_or(recs.len()),
            None => recs.len(),
        };
        let next = recs[..take].last().map_or(from, |r| r.offset + 1);
        let decoded = recs[..take].iter().map(|r| (r.offset, FlightPosition::from_json_bytes(&r.value).ok())).collect();
        Ok((p, decoded, next, capped && take == recs.len()))
    }

    /// Takes the records available since the current positions, up to the
    /// per-partition cap and, with `cutoff`, only those whose log timestamp is
    /// at most `cutoff`. Positions are not advanced until the batch is
    /// processed.
    pub fn poll_batch(&mut self, cutoff: Option<EventTime>) -> Result<(MicroBatch, Vec<u64>), StreamError> {
        let parts = self.topic.partition_count();
        let workers = self.cfg.parallelism.min(parts as usize).max(1);
        let mut polled: Vec<PartitionPoll> = if workers == 1 {
            (0..parts).map(|p| self.poll_partition(p, cutoff)).collect::<Result<_, _>>()?
        } else {
            let this = &*self;
            thread::scope(|s| {
                let handles: Vec<_> = (0..workers as u32)
                    .map(|w| {
                        s.spawn(move || {
                            (w..parts)
                                .step_by(workers)
                                .map(|p| this.poll_partition(p, cutoff))
                                .collect::<Result<Vec<_>, LogError>>()
                        })
                    })
                    .collect();
                let mut all = Vec::new();
                for h in handles {
                    all.extend(h.join().expect("poll worker panicked")?);
                }
                Ok::<_, LogError>(all)
            })?
        };
        polled.sort_by_key(|x| x.0);
        let batch_id = self.next_batch_id;
        self.next_batch_id += 1;
        let mut batch = MicroBatch::empty(batch_id, cutoff.unwrap_or_else(wall_clock));
        let mut next_positions = self.positions.clone();
        for (p, decoded, next, capped) in polled {
            batch.fetched += decoded.len() as u64;
            batch.capped |= capped;
            next_positions[p as usize] = next;
            for (offset, pos) in decoded {
                match pos {
                    Some(position) => batch.records.push(BatchRecord { partition: p, offset, position }),
                    None => batch.dead_letter += 1,
                }
            }
        }
        Ok((batch, next_positions))
    }

    fn apply_with_retry(&self, actions: &[super::IndexAction]) -> Result<(), StreamError> {
        let mut delay = Duration::from_millis(10);
        for attempt in 1..=self.cfg.apply_retries.max(1) {
            match self.sink.apply(actions) {
                Ok(()) => return Ok(()),
                Err(e) if attempt == self.cfg.apply_retries.max(1) => return Err(e.into()),
                Err(e) => {
                    warn!("index apply failed (attempt {attempt}): {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!()
    }

    /// Runs windows, index actions, apply and commit for a polled batch. On
    /// failure nothing is committed and the pipeline state is left as it was
    /// before the batch, so the same records are polled again.
    pub fn process(&mut self, batch: MicroBatch, next_positions: Vec<u64>, started: Instant) -> Result<BatchOutcome, StreamError> {
        let mut watermarks = self.watermarks.clone();
        let mut windows = self.windows.clone();
        let late_before = watermarks.late_dropped;
        let closed = windows.update(&mut watermarks, &batch);
        self.apply_and_commit(batch, closed, watermarks, windows, next_positions, late_before, started, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_and_commit(
        &mut self,
        batch: MicroBatch,
        closed: Vec<WindowSnapshot>,
        watermarks: WatermarkState,
        windows: WindowState,
        next_positions: Vec<u64>,
        late_before: u64,
        started: Instant,
        force_checkpoint: bool,
    ) -> Result<BatchOutcome, StreamError> {
        let actions = to_index_actions(&batch, &closed, &self.cfg);
        if !actions.is_empty() {
            self.apply_with_retry(&actions)?;
        }
        if self.crash == Some(CrashPoint::AfterApplyBeforeCommit { batch_id: batch.batch_id }) {
            return Err(StreamError::InjectedCrash(batch.batch_id));
        }
        let target = windows.commit_offsets(&next_positions);
        let entries: Vec<(u32, u64)> = target
            .iter()
            .enumerate()
            .filter(|(p, &o)| o > self.committed[*p])
            .map(|(p, &o)| (p as u32, o))
            .collect();
        let durable = (!entries.is_empty() || force_checkpoint) && self.sink.checkpoint(force_checkpoint)?;
        if durable && !entries.is_empty() {
            self.log.commit_all(&self.cfg.group_id, &self.cfg.topic, &entries)?;
            for (p, o) in entries {
                self.committed[p as usize] = o;
            }
        }
        let late_dropped = watermarks.late_dropped - late_before;
        self.watermarks = watermarks;
        self.windows = windows;
        self.positions = next_positions;

        let latency = started.elapsed();
        let m = &self.metrics;
        Metrics::add(&m.records_consumed, batch.fetched);
        Metrics::add(&m.dead_letter, batch.dead_letter);
        Metrics::add(&m.late_dropped, late_dropped);
        Metrics::add(&m.batches_processed, 1);
        m.last_batch_latency_ms.store(latency.as_millis() as u64, std::sync::atomic::Ordering::Relaxed);
        Metrics::raise(&m.index_doc_count, self.sink.doc_count());
        debug!(
            "batch={} fetched={} dead_letter={} late={} closed={} watermark={}",
            batch.batch_id,
            batch.fetched,
            batch.dead_letter,
            late_dropped,
            closed.len(),
            self.watermarks.watermark()
        );
        Ok(BatchOutcome {
            batch_id: batch.batch_id,
            fetched: batch.fetched,
            records: batch.records.len() as u64,
            dead_letter: batch.dead_letter,
            late_dropped,
            closed,
            watermark: self.watermarks.watermark(),
            committed: self.committed.clone(),
            latency,
            capped: batch.capped,
        })
    }

    /// Poll and process one batch.
    pub fn step(&mut self, cutoff: Option<EventTime>) -> Result<BatchOutcome, StreamError> {
        let started = Instant::now();
        let (batch, next) = self.poll_batch(cutoff)?;
        self.process(batch, next, started)
    }

    /// Closes every open window, applies the snapshots and commits the
    /// current positions.
    pub fn finish(&mut self) -> Result<BatchOutcome, StreamError> {
        let started = Instant::now();
        let batch_id = self.next_batch_id;
        self.next_batch_id += 1;
        let batch = MicroBatch::empty(batch_id, wall_clock());
        let watermarks = self.watermarks.clone();
        let mut windows = self.windows.clone();
        let closed = windows.finish();
        let late_before = watermarks.late_dropped;
        let positions = self.positions.clone();
        self.apply_and_commit(batch, closed, watermarks, windows, positions, late_before, started, true)
    }

    /// Processes batches until every partition is read to its high watermark,
    /// then closes the remaining windows.
    pub fn run_until_drained(&mut self) -> Result<Vec<BatchOutcome>, StreamError> {
        let mut out = vec![];
        loop {
            let o = self.step(None)?;
            let idle = o.fetched == 0;
            out.push(o);
            if idle && self.caught_up() {
                break;
            }
        }
        out.push(self.finish()?);
        Ok(out)
    }

    /// Replays the log as if a batch had been cut every batch interval of
    /// log time, then closes the remaining windows.
    pub fn replay(&mut self) -> Result<Vec<BatchOutcome>, StreamError> {
        let interval = self.cfg.batch_interval_seconds;
        let mut first: Option<EventTime> = None;
        for p in 0..self.topic.partition_count() {
            if let Some(r) = self.topic.fetch(p, self.positions[p as usize], 1)?.first() {
                first = Some(first.map_or(r.timestamp, |f| f.min(r.timestamp)));
            }
        }
        let mut out = vec![];
        if let Some(first) = first {
            let mut cutoff = EventTime(first.0 / interval * interval + interval - 1);
            while !self.caught_up() {
                let o = self.step(Some(cutoff))?;
                if !o.capped {
                    cutoff = cutoff.plus(interval);
                }
                out.push(o);
            }
        }
        out.push(self.finish()?);
        Ok(out)
    }

    /// Live loop: one batch per interval (immediately again when a batch hit
    /// the cap) until `stop` is raised, then closes the open windows.
    pub fn run(&mut self, stop: &StopSignal, mut on_batch: impl FnMut(&BatchOutcome)) -> Result<(), StreamError> {
        let interval = Duration::from_secs(self.cfg.batch_interval_seconds);
        while !stop.is_stopped() {
            let started = Instant::now();
            let o = self.step(None)?;
            on_batch(&o);
            if !o.capped {
                let rest = interval.saturating_sub(started.elapsed());
                stop.wait(rest);
            }
        }
        let o = self.finish()?;
        on_batch(&o);
        Ok(())
    }
}
