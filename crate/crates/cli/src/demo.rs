//! `demo`: simulator, broker, pipeline and query service in one process.
//!
//! The producer writes the simulated fleet into a fresh topic while the
//! pipeline consumes it and the query service answers over the same indices.
//! Afterwards the positions index is checked against the produced set: every
//! `(flight, updated)` pair must appear exactly once. With a crash injected,
//! the pipeline is torn down after applying a batch but before committing it
//! and reopened from its snapshots and committed offsets.
//!
//! Sustain mode paces the producer at a fixed record rate and reports
//! throughput and end-to-end latency, measured from the start of the tick that
//! produced a batch's oldest record to the moment the batch is applied.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::Value;
use skystream_core::api::{ApiState, MetricsSource};
use skystream_core::eventlog::{fnv1a64, EventLog, Topic};
use skystream_core::index::{document_to_json, IndexStore, Query};
use skystream_core::metrics::Metrics;
use skystream_core::model::EventTime;
use skystream_core::simsource::{generate_fleet, tick, AirportTable, FlightPlan};
use skystream_core::stream::{position_doc_id, CrashPoint, Pipeline, StopSignal, StoreSink, StreamError};

use crate::serve::{bind, serve_state};
use crate::{open_log, open_topic, percentile, CliError, Report, RunConfig};

/// Fleet size used in sustain mode when the configured fleet is smaller.
pub const SUSTAIN_MIN_FLIGHTS: u64 = 4000;

/// Throughput a sustain run must reach, records per second.
pub const SUSTAIN_TARGET_RPS: u64 = 5000;

#[derive(Debug, Clone)]
pub struct DemoOptions {
    /// Crash the pipeline after applying, before committing, this batch id.
    pub crash_after_batch: Option<u64>,
    /// Run inside the configured data directory and leave it in place,
    /// instead of a temporary directory.
    pub keep: bool,
    /// Pace the producer at `rate` records per second for this many seconds.
    pub sustain_seconds: Option<u64>,
    pub rate: u64,
    /// Keep serving on `api.bind` after the run until Ctrl-C.
    pub serve: bool,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions { crash_after_batch: None, keep: false, sustain_seconds: None, rate: 6000, serve: false }
    }
}

/// What the producer thread hands back.
struct Produced {
    records: u64,
    ids: BTreeSet<String>,
    flights: BTreeSet<String>,
}

/// Start instant of each produced tick with the high watermarks before it.
type TickLog = Arc<Mutex<Vec<(Instant, Vec<u64>)>>>;

fn spawn_producer(
    topic: Arc<Topic>,
    fleet: Vec<FlightPlan>,
    ticks: Box<dyn Iterator<Item = EventTime> + Send>,
    pace: Option<(u64, Duration)>,
    ticks_log: TickLog,
    done: StopSignal,
) -> JoinHandle<Result<Produced, CliError>> {
    thread::spawn(move || {
        let began = Instant::now();
        let mut out = Produced { records: 0, ids: BTreeSet::new(), flights: BTreeSet::new() };
        let result = (|| {
            for t in ticks {
                if let Some((_, limit)) = pace {
                    if began.elapsed() >= limit {
                        break;
                    }
                }
                ticks_log.lock().unwrap().push((Instant::now(), topic.high_watermarks()));
                for p in tick(&fleet, t) {
                    topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), t)?;
                    out.ids.insert(position_doc_id(&p));
                    out.flights.insert(p.flight_icao);
                    out.records += 1;
                }
                if let Some((rate, _)) = pace {
                    let due = Duration::from_secs_f64(out.records as f64 / rate as f64);
                    thread::sleep(due.saturating_sub(began.elapsed()));
                }
            }
            topic.flush()?;
            Ok(())
        })();
        done.stop();
        result.map(|_| out)
    })
}

/// A running query service over one store.
struct Server {
    addr: SocketAddr,
    stop: StopSignal,
    handle: JoinHandle<Result<(), CliError>>,
}

impl Server {
    fn start(store: Arc<IndexStore>, metrics: Arc<Metrics>, cfg: &RunConfig, addr: &str, data_dir: &Path) -> Result<Server, CliError> {
        let state = ApiState::new(
            store,
            MetricsSource::Live(metrics),
            Some(data_dir.join("_delays")),
            &cfg.pipeline.stream.positions_index,
        )?;
        let listener = bind(addr)?;
        let addr = listener.local_addr().map_err(|e| CliError::Network(e.to_string()))?;
        let stop = StopSignal::new();
        let (s, cors) = (stop.clone(), cfg.api.cors);
        let handle = thread::spawn(move || serve_state(state, cors, listener, None, s));
        Ok(Server { addr, stop, handle })
    }

    fn shutdown(self) -> Result<(), CliError> {
        self.stop.stop();
        self.handle.join().map_err(|_| CliError::Failed("server thread panicked".into()))?
    }
}

fn open_pipeline(
    cfg: &RunConfig,
    log: &Arc<EventLog>,
    dir: &Path,
    metrics: &Arc<Metrics>,
) -> Result<(Pipeline, Arc<IndexStore>), CliError> {
    let store = Arc::new(IndexStore::with_dir(dir));
    let sink = StoreSink::restore(store.clone(), &cfg.pipeline.stream)?
        .with_checkpoint_interval(Duration::from_secs(cfg.pipeline.checkpoint_seconds));
    let pipe = Pipeline::open(cfg.pipeline.stream.clone(), log.clone(), Arc::new(sink), metrics.clone())?;
    Ok((pipe, store))
}

/// FNV-1a over the index's documents in id order.
pub fn index_digest(store: &IndexStore, name: &str) -> Result<(u64, Vec<String>), CliError> {
    let idx = store.index(name)?;
    idx.refresh();
    let mut hits = idx.search(&Query::MatchAll, usize::MAX, None).hits;
    hits.sort_by(|a, b| a.id.cmp(&b.id));
    let mut bytes = vec![];
    for h in &hits {
        bytes.extend_from_slice(h.id.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(document_to_json(&h.source).to_string().as_bytes());
        bytes.push(b'\n');
    }
    Ok((fnv1a64(&bytes), hits.into_iter().map(|h| h.id).collect()))
}

/// Oldest production instant of the records in `[before, after)`.
fn oldest_tick(ticks: &[(Instant, Vec<u64>)], before: &[u64], after: &[u64]) -> Option<Instant> {
    (0..before.len())
        .filter(|&p| after[p] > before[p])
        .filter_map(|p| {
            let i = ticks.partition_point(|(_, hw)| hw[p] <= before[p]);
            i.checked_sub(1).map(|i| ticks[i].0)
        })
        .min()
}

fn get_json(client: &reqwest::blocking::Client, url: &str) -> Result<Value, CliError> {
    let resp = client.get(url).send().map_err(|e| CliError::Network(format!("{url}: {e}")))?;
    let body = resp.bytes().map_err(|e| CliError::Network(format!("{url}: {e}")))?;
    serde_json::from_slice(&body).map_err(|e| CliError::Failed(format!("{url}: {e}")))
}

pub fn demo(cfg: &RunConfig, opts: &DemoOptions) -> Result<Report, CliError> {
    let tmp;
    let dir = if opts.keep {
        cfg.data_dir.clone()
    } else {
        tmp = tempfile::TempDir::new().map_err(|e| CliError::Storage(format!("cannot create temp dir: {e}")))?;
        tmp.path().to_path_buf()
    };
    let mut cfg = cfg.clone();
    cfg.data_dir = dir.clone();
    let log = open_log(&dir)?;
    let (topic, _) = open_topic(&log, &cfg)?;
    if topic.high_watermarks().iter().any(|&h| h > 0) {
        return Err(CliError::Failed(format!("demo needs an empty topic, {} already has records", dir.display())));
    }

    let mut sim = cfg.sim_config();
    let (ticks, pace): (Box<dyn Iterator<Item = EventTime> + Send>, _) = match opts.sustain_seconds {
        Some(secs) => {
            sim.flight_count = sim.flight_count.max(SUSTAIN_MIN_FLIGHTS as usize);
            let (start, step) = (sim.start_time.0, sim.tick_seconds);
            (Box::new((0..).map(move |k| EventTime(start + k * step))), Some((opts.rate.max(1), Duration::from_secs(secs))))
        }
        None => (Box::new(skystream_core::simsource::tick_times(&sim, cfg.sim.duration_seconds)), None),
    };
    let fleet = generate_fleet(&sim, &AirportTable::embedded())?;

    let metrics = Arc::new(Metrics::default());
    let (mut pipe, mut store) = open_pipeline(&cfg, &log, &dir, &metrics)?;
    if let Some(b) = opts.crash_after_batch {
        pipe.inject_crash(CrashPoint::AfterApplyBeforeCommit { batch_id: b });
    }
    let bind_addr = if opts.serve { cfg.api.bind.clone() } else { "127.0.0.1:0".to_string() };
    let mut server = Server::start(store.clone(), metrics.clone(), &cfg, &bind_addr, &dir)?;

    let started = Instant::now();
    let ticks_log: TickLog = Arc::default();
    let done = StopSignal::new();
    let producer = spawn_producer(topic.clone(), fleet, ticks, pace, ticks_log.clone(), done.clone());

    let interval = Duration::from_secs(cfg.pipeline.stream.batch_interval_seconds);
    let (mut batch_ms, mut e2e_ms) = (vec![], vec![]);
    let (mut batches, mut fetched, mut late_dropped, mut dead_letter) = (0u64, 0u64, 0u64, 0u64);
    let mut crashed_at = None;
    let mut drained_at = started;
    loop {
        let batch_started = Instant::now();
        let finished = done.is_stopped();
        let before = pipe.positions().to_vec();
        let outcome = match pipe.step(None) {
            Ok(o) => o,
            Err(StreamError::InjectedCrash(b)) => {
                log::warn!("injected crash after applying batch {b}; restarting from snapshots");
                crashed_at = Some(b);
                server.shutdown()?;
                drop(pipe);
                (pipe, store) = open_pipeline(&cfg, &log, &dir, &metrics)?;
                server = Server::start(store.clone(), metrics.clone(), &cfg, &bind_addr, &dir)?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        batches += 1;
        late_dropped += outcome.late_dropped;
        dead_letter += outcome.dead_letter;
        if outcome.fetched > 0 {
            fetched += outcome.fetched;
            drained_at = Instant::now();
            batch_ms.push(outcome.latency.as_secs_f64() * 1000.0);
            if let Some(t) = oldest_tick(&ticks_log.lock().unwrap(), &before, pipe.positions()) {
                e2e_ms.push(drained_at.duration_since(t).as_secs_f64() * 1000.0);
            }
        }
        if finished && outcome.fetched == 0 && pipe.caught_up() {
            break;
        }
        if outcome.capped || finished {
            continue;
        }
        if pace.is_some() {
            done.wait(interval.saturating_sub(batch_started.elapsed()));
        } else if outcome.fetched == 0 {
            thread::sleep(Duration::from_millis(10));
        }
    }
    let fin = pipe.finish()?;
    late_dropped += fin.late_dropped;
    batches += 1;
    let produced = producer.join().map_err(|_| CliError::Failed("producer thread panicked".into()))??;
    let elapsed = started.elapsed();
    let busy = drained_at.duration_since(started).as_secs_f64().max(1e-9);

    let stream = &cfg.pipeline.stream;
    let (positions_digest, ids) = index_digest(&store, &stream.positions_index)?;
    let (windows_digest, window_ids) = index_digest(&store, &stream.windows_index)?;
    let indexed = ids.len() as u64;
    let exactly_once = indexed == produced.ids.len() as u64 && ids.iter().eq(produced.ids.iter());

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| CliError::Network(e.to_string()))?;
    let base = format!("http://{}", server.addr);
    let live = get_json(&client, &format!("{base}/api/flights/live"))?;
    let api_live_total = live["total"].as_u64().unwrap_or(0);
    let api_metrics = get_json(&client, &format!("{base}/api/metrics"))?;
    let api_ok = api_live_total == produced.flights.len() as u64
        && api_metrics["index_doc_count"].as_u64() == Some(indexed);

    let mut r = Report::default();
    r.push("data_dir", if opts.keep { dir.display().to_string() } else { "(temporary)".into() })
        .push("produced", produced.records)
        .push("expected_distinct", produced.ids.len())
        .push("indexed", indexed)
        .push("exactly_once", exactly_once)
        .push("flights", produced.flights.len())
        .push("windows", window_ids.len())
        .push("batches", batches)
        .push("late_dropped", late_dropped)
        .push("dead_letter", dead_letter)
        .push("crash_injected", crashed_at.map_or("none".to_string(), |b| b.to_string()))
        .push("p50_batch_latency_ms", format!("{:.1}", percentile(&batch_ms, 50.0)))
        .push("p99_batch_latency_ms", format!("{:.1}", percentile(&batch_ms, 99.0)))
        .push("throughput_rps", format!("{:.0}", fetched as f64 / busy))
        .push("elapsed_ms", elapsed.as_millis())
        .push("positions_digest", format!("{positions_digest:016x}"))
        .push("windows_digest", format!("{windows_digest:016x}"))
        .push("api_live_total", api_live_total)
        .push("api_ok", api_ok);
    let mut problems = vec![];
    if !exactly_once {
        problems.push(format!("indexed {indexed} documents for {} distinct positions", produced.ids.len()));
    }
    if !api_ok {
        problems.push("query service disagrees with the index".to_string());
    }
    if let Some(secs) = opts.sustain_seconds {
        let rps = fetched as f64 / busy;
        let p99 = percentile(&e2e_ms, 99.0);
        let bound = 2.0 * interval.as_secs_f64() * 1000.0;
        let ok = rps >= SUSTAIN_TARGET_RPS as f64 && p99 < bound;
        r.push("sustain_seconds", secs)
            .push("sustain_target_rps", opts.rate)
            .push("p50_e2e_latency_ms", format!("{:.1}", percentile(&e2e_ms, 50.0)))
            .push("p99_e2e_latency_ms", format!("{p99:.1}"))
            .push("e2e_latency_bound_ms", bound)
            .push("sustain_ok", ok);
        if !ok {
            problems.push(format!("sustained {rps:.0} rec/s with p99 end-to-end latency {p99:.0} ms"));
        }
    }
    if !problems.is_empty() {
        r.failure = Some(problems.join("; "));
    }

    if opts.serve {
        log::info!("serving on http://{}; Ctrl-C to stop", server.addr);
        server.handle.join().map_err(|_| CliError::Failed("server thread panicked".into()))??;
    } else {
        server.shutdown()?;
    }
    Ok(r)
}
