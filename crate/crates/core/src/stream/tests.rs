use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use tempfile::TempDir;

use super::*;
use crate::eventlog::{EventLog, TopicConfig};
use crate::geohash;
use crate::metrics::Metrics;
use crate::model::FlightStatus;
use crate::rng::Xoshiro256;
use crate::simsource::{generate_fleet, tick, tick_times, AirportTable, SimConfig};

const T0: u64 = 1_701_388_800;

fn pos(flight: &str, ts: u64, speed: f64, alt: f64) -> FlightPosition {
    FlightPosition {
        reg_number: None,
        flight_icao: flight.into(),
        flight_iata: None,
        airline_icao: Some(flight[..3].to_string()),
        dep_icao: None,
        arr_icao: None,
        lat: 40.0 + (ts % 7) as f64,
        lng: -73.0 - (ts % 11) as f64,
        alt,
        dir: 90.0,
        speed,
        status: FlightStatus::EnRoute,
        updated: EventTime(ts),
    }
}

fn batch(id: u64, recs: &[(u32, u64, FlightPosition)]) -> MicroBatch {
    let mut b = MicroBatch::empty(id, EventTime::ZERO);
    b.fetched = recs.len() as u64;
    b.records = recs.iter().map(|(p, o, x)| BatchRecord { partition: *p, offset: *o, position: x.clone() }).collect();
    b
}

struct Env {
    _dir: TempDir,
    log: Arc<EventLog>,
}

fn env(partitions: u32) -> Env {
    let dir = TempDir::new().unwrap();
    let log = Arc::new(EventLog::open(dir.path()).unwrap());
    let mut tc = TopicConfig::new("flights", partitions);
    tc.retention = Default::default();
    log.create_topic(tc).unwrap();
    Env { _dir: dir, log }
}

fn memory_pipeline(log: &Arc<EventLog>, cfg: StreamConfig) -> (Pipeline, Arc<IndexStore>) {
    let store = Arc::new(IndexStore::in_memory());
    let sink = Arc::new(StoreSink::new(store.clone(), &cfg, false).unwrap());
    (Pipeline::open(cfg, log.clone(), sink, Arc::new(Metrics::default())).unwrap(), store)
}

fn all_closed(outcomes: &[BatchOutcome]) -> Vec<WindowSnapshot> {
    outcomes.iter().flat_map(|o| o.closed.clone()).collect()
}

fn content(store: &IndexStore, name: &str) -> Vec<(String, Document)> {
    let idx = store.index(name).unwrap();
    idx.refresh();
    idx.search(&Query::MatchAll, usize::MAX, None).hits.into_iter().map(|h| (h.id, h.source)).collect()
}

#[test]
fn assign_window_examples() {
    assert_eq!(assign_window(EventTime(0), 60), EventTime(0));
    assert_eq!(assign_window(EventTime(119), 60), EventTime(60));
    assert_eq!(assign_window(EventTime(120), 60), EventTime(120));
}

#[test]
fn watermark_examples() {
    let s = WatermarkState::new(1, 60);
    assert_eq!(advance_watermark(&s, &batch(0, &[])), s);
    let s = advance_watermark(&s, &batch(0, &[(0, 0, pos("AAL1", 1000, 800.0, 1.0)), (0, 1, pos("AAL1", 400, 800.0, 1.0))]));
    assert_eq!(s.max_event_time(), EventTime(1000));
    assert_eq!(s.watermark(), EventTime(940));
}

#[test]
fn config_validation() {
    assert!(StreamConfig::default().validate().is_ok());
    for bad in [
        StreamConfig { batch_interval_seconds: 0, ..Default::default() },
        StreamConfig { window_seconds: 62, ..Default::default() },
        StreamConfig { window_seconds: 0, ..Default::default() },
        StreamConfig { parallelism: 0, ..Default::default() },
        StreamConfig { max_records_per_partition: 0, ..Default::default() },
        StreamConfig { windows_index: "flights".into(), ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(StreamError::InvalidConfig(_))), "{bad:?}");
    }
}

#[test]
fn single_event_closes_into_one_snapshot_and_late_event_is_dropped() {
    let mut wm = WatermarkState::new(1, 10);
    let mut ws = WindowState::new(60);
    assert!(ws.update(&mut wm, &batch(0, &[(0, 0, pos("AAL1", 30, 800.0, 9000.0))])).is_empty());
    let closed = ws.update(&mut wm, &batch(1, &[(0, 1, pos("AAL2", 75, 700.0, 8000.0))]));
    assert_eq!(closed.len(), 1);
    let s = &closed[0];
    assert_eq!((s.window_start, s.window_end, s.flight_count, s.distinct_flights), (EventTime(0), EventTime(60), 1, 1));
    assert_eq!((s.avg_speed, s.max_alt), (800.0, 9000.0));
    assert_eq!(s.airline_counts.get("AAL"), Some(&1));
    assert_eq!(s.status_counts.get("en-route"), Some(&1));

    let open_before = ws.open_windows();
    assert!(ws.update(&mut wm, &batch(2, &[(0, 2, pos("AAL3", 64, 1.0, 1.0))])).is_empty());
    assert_eq!(wm.late_dropped, 1);
    assert_eq!(ws.open_windows(), open_before);
}

#[test]
fn missing_airline_counts_as_unknown() {
    let mut p = pos("AAL1", 5, 800.0, 1.0);
    p.airline_icao = None;
    let mut wm = WatermarkState::new(1, 0);
    let mut ws = WindowState::new(60);
    ws.update(&mut wm, &batch(0, &[(0, 0, p)]));
    let s = ws.finish();
    assert_eq!(s[0].airline_counts.get(UNKNOWN_AIRLINE), Some(&1));
}

#[test]
fn commit_offsets_hold_back_open_windows() {
    let mut wm = WatermarkState::new(2, 0);
    let mut ws = WindowState::new(60);
    ws.update(&mut wm, &batch(0, &[(0, 5, pos("AAL1", 10, 1.0, 1.0)), (1, 3, pos("AAL2", 20, 1.0, 1.0))]));
    assert_eq!(ws.commit_offsets(&[9, 9]), vec![5, 3]);
    ws.finish();
    assert_eq!(ws.commit_offsets(&[9, 9]), vec![9, 9]);
}

proptest! {
    #[test]
    fn watermark_never_decreases(
        events in prop::collection::vec((0u32..3, 0u64..5000), 1..200),
        cuts in prop::collection::vec(1usize..20, 1..20),
        lateness in 0u64..300,
    ) {
        let mut wm = WatermarkState::new(3, lateness);
        let mut ws = WindowState::new(60);
        let mut last = wm.watermark();
        let mut i = 0;
        for (k, c) in cuts.iter().cycle().enumerate() {
            if i >= events.len() { break; }
            let end = (i + c).min(events.len());
            let recs: Vec<_> = events[i..end].iter().enumerate()
                .map(|(j, &(p, t))| (p, (i + j) as u64, pos("UAL1", t, 1.0, 1.0))).collect();
            let expected = advance_watermark(&wm, &batch(k as u64, &recs));
            ws.update(&mut wm, &batch(k as u64, &recs));
            prop_assert_eq!(wm.watermark(), expected.watermark());
            prop_assert!(wm.watermark() >= last);
            last = wm.watermark();
            i = end;
        }
    }
}

/// Naive reference for one drained run: per-partition lateness, then grouping
/// by window.
struct Expected {
    windows: BTreeMap<u64, Vec<FlightPosition>>,
    late: u64,
}

fn window_oracle(events: &[(u32, u64, FlightPosition)], window: u64, lateness: u64) -> Expected {
    let mut by_part: BTreeMap<u32, Vec<&(u32, u64, FlightPosition)>> = BTreeMap::new();
    for e in events {
        by_part.entry(e.0).or_default().push(e);
    }
    let mut out = Expected { windows: BTreeMap::new(), late: 0 };
    for mut evs in by_part.into_values() {
        evs.sort_by_key(|e| e.1);
        let mut max: Option<u64> = None;
        for (_, _, p) in evs {
            let t = p.updated.0;
            if max.is_some_and(|m| t + lateness < m) {
                out.late += 1;
            } else {
                out.windows.entry(t - t % window).or_default().push(p.clone());
            }
            max = Some(max.map_or(t, |m| m.max(t)));
        }
    }
    out
}

fn check_against_oracle(got: &[WindowSnapshot], exp: &Expected, window: u64) {
    let starts: Vec<u64> = got.iter().map(|s| s.window_start.0).collect();
    assert_eq!(starts, exp.windows.keys().copied().collect::<Vec<_>>());
    for s in got {
        let evs = &exp.windows[&s.window_start.0];
        assert_eq!(s.window_end.0, s.window_start.0 + window);
        assert_eq!(s.flight_count, evs.len() as u64);
        let distinct: BTreeSet<_> = evs.iter().map(|p| &p.flight_icao).collect();
        assert_eq!(s.distinct_flights, distinct.len() as u64);
        let sum = evs.iter().fold(BigRational::from_integer(0.into()), |a, p| a + BigRational::from_float(p.speed).unwrap());
        assert_eq!(s.avg_speed, sum.to_f64().unwrap() / evs.len() as f64);
        assert_eq!(s.max_alt, evs.iter().map(|p| p.alt).fold(f64::MIN, f64::max));
        let mut status = BTreeMap::new();
        let mut airline = BTreeMap::new();
        let mut cells = BTreeMap::new();
        for p in evs {
            *status.entry(p.status.as_str().to_string()).or_insert(0) += 1;
            *airline.entry(p.airline_icao.clone().unwrap_or("unknown".into())).or_insert(0) += 1;
            *cells.entry(geohash::encode(p.location(), 4)).or_insert(0) += 1;
        }
        assert_eq!(s.status_counts, status);
        assert_eq!(s.airline_counts, airline);
        assert_eq!(s.geo_cell_counts, cells);
        assert_eq!(s.status_counts.values().sum::<u64>(), s.flight_count);
        assert_eq!(s.airline_counts.values().sum::<u64>(), s.flight_count);
    }
}

/// Produces `n` positions whose event times trail the log clock by a random
/// delay, with some far-late ones and some undecodable values. Returns the
/// valid records as (partition, offset, position) and the number of bad ones.
fn produce_random(log: &EventLog, seed: u64, n: usize) -> (Vec<(u32, u64, FlightPosition)>, u64) {
    let topic = log.topic("flights").unwrap();
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let airlines = ["AAL", "DAL", "UAL", "SWA"];
    let mut clock = T0;
    let mut valid = vec![];
    let mut bad = 0;
    for i in 0..n {
        clock += rng.below(3);
        let delay = if rng.below(10) == 0 { 60 + rng.below(400) } else { rng.below(40) };
        let flight = format!("{}{}", airlines[rng.below(4) as usize], 100 + rng.below(25));
        let mut p = pos(&flight, clock.saturating_sub(delay), rng.range_f64(100.0, 950.0), rng.range_f64(0.0, 12000.0));
        p.status = [FlightStatus::EnRoute, FlightStatus::Landed, FlightStatus::Scheduled][rng.below(3) as usize];
        p.lat = rng.range_f64(-60.0, 60.0);
        p.lng = rng.range_f64(-179.0, 179.0);
        if i % 9 == 0 {
            p.airline_icao = None;
        }
        if rng.below(50) == 0 {
            topic.produce(Some(flight.as_bytes()), b"{\"flight_icao\": 7}", EventTime(clock)).unwrap();
            bad += 1;
        } else {
            let (part, off) = topic.produce(Some(flight.as_bytes()), &p.to_json_bytes(), EventTime(clock)).unwrap();
            valid.push((part, off, p));
        }
    }
    (valid, bad)
}

#[test]
fn thousand_random_events_match_window_oracle_and_conserve() {
    let e = env(4);
    let (events, bad) = produce_random(&e.log, 11, 1000);
    assert!(bad > 0);
    let cfg = StreamConfig { group_id: "oracle".into(), ..Default::default() };
    let (mut pipe, _) = memory_pipeline(&e.log, cfg.clone());
    let outs = pipe.replay().unwrap();
    let closed = all_closed(&outs);
    let exp = window_oracle(&events, cfg.window_seconds, cfg.allowed_lateness_seconds);
    assert!(exp.late > 0, "corpus should contain late events");
    check_against_oracle(&closed, &exp, cfg.window_seconds);

    let late: u64 = outs.iter().map(|o| o.late_dropped).sum();
    let dead: u64 = outs.iter().map(|o| o.dead_letter).sum();
    let fetched: u64 = outs.iter().map(|o| o.fetched).sum();
    assert_eq!(late, exp.late);
    assert_eq!(dead, bad);
    assert_eq!(fetched, 1000);
    assert_eq!(closed.iter().map(|s| s.flight_count).sum::<u64>() + late + dead, fetched);
    assert_eq!(pipe.committed(), e.log.topic("flights").unwrap().high_watermarks().as_slice());
}

#[test]
fn snapshots_do_not_depend_on_batch_boundaries() {
    let e = env(4);
    produce_random(&e.log, 23, 1000);
    let run = |cfg: StreamConfig, live: bool| {
        let (mut p, _) = memory_pipeline(&e.log, cfg);
        all_closed(&if live { p.run_until_drained().unwrap() } else { p.replay().unwrap() })
    };
    let one = run(StreamConfig { batch_interval_seconds: 1, group_id: "b1".into(), ..Default::default() }, false);
    let five = run(StreamConfig { batch_interval_seconds: 5, group_id: "b5".into(), ..Default::default() }, false);
    let capped = run(
        StreamConfig { group_id: "cap".into(), max_records_per_partition: 7, parallelism: 3, ..Default::default() },
        true,
    );
    assert!(!one.is_empty());
    assert_eq!(one, five);
    assert_eq!(one, capped);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn batching_invariance_over_random_caps(seed in 0u64..1000, cap in 1usize..60, par in 1usize..5) {
        let e = env(3);
        let (events, _) = produce_random(&e.log, seed, 300);
        let base = StreamConfig { window_seconds: 30, batch_interval_seconds: 5, allowed_lateness_seconds: 20, ..Default::default() };
        let (mut p, _) = memory_pipeline(&e.log, StreamConfig { group_id: "a".into(), ..base.clone() });
        let a = all_closed(&p.replay().unwrap());
        let (mut p, _) = memory_pipeline(&e.log, StreamConfig { group_id: "b".into(), max_records_per_partition: cap, parallelism: par, ..base.clone() });
        let b = all_closed(&p.run_until_drained().unwrap());
        prop_assert_eq!(&a, &b);
        let exp = window_oracle(&events, 30, 20);
        prop_assert_eq!(a.iter().map(|s| s.flight_count).sum::<u64>(), exp.windows.values().map(|v| v.len() as u64).sum::<u64>());
    }
}

#[test]
fn poll_returns_the_produced_multiset() {
    let e = env(4);
    let topic = e.log.topic("flights").unwrap();
    let mut produced = vec![];
    for i in 0..100u64 {
        let p = pos(&format!("DAL{}", i % 13), T0 + i, 500.0 + i as f64, 1000.0);
        topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), p.updated).unwrap();
        produced.push(p);
    }
    let cfg = StreamConfig { max_records_per_partition: 9, ..Default::default() };
    let (mut pipe, _) = memory_pipeline(&e.log, cfg);
    let mut got = vec![];
    let mut last_id = None;
    loop {
        let (b, next) = pipe.poll_batch(None).unwrap();
        assert!(last_id.is_none_or(|l| b.batch_id > l));
        last_id = Some(b.batch_id);
        for w in b.records.windows(2) {
            if w[0].partition == w[1].partition {
                assert!(w[0].offset < w[1].offset);
            }
        }
        let n = b.fetched;
        got.extend(b.records.iter().map(|r| r.position.clone()));
        pipe.process(b, next, Instant::now()).unwrap();
        if n == 0 {
            break;
        }
    }
    let key = |p: &FlightPosition| (p.flight_icao.clone(), p.updated);
    let mut a: Vec<_> = produced.iter().map(key).collect();
    let mut b: Vec<_> = got.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn empty_topic_batches_still_get_ids() {
    let e = env(2);
    let (mut pipe, _) = memory_pipeline(&e.log, StreamConfig::default());
    let a = pipe.step(None).unwrap();
    let b = pipe.step(None).unwrap();
    assert_eq!((a.batch_id, b.batch_id), (0, 1));
    assert_eq!((a.fetched, a.records), (0, 0));
}

#[test]
fn index_actions() {
    let cfg = StreamConfig::default();
    assert!(to_index_actions(&MicroBatch::empty(0, EventTime::ZERO), &[], &cfg).is_empty());

    let recs: Vec<_> = (0..20u64).map(|i| (0, i, pos(&format!("SWA{}", i % 4), T0 + i / 2, 1.0, 1.0))).collect();
    let b = batch(0, &recs);
    let distinct: BTreeSet<_> = recs.iter().map(|r| (r.2.flight_icao.clone(), r.2.updated)).collect();
    let actions = to_index_actions(&b, &[], &cfg);
    assert_eq!(actions.len(), recs.len());
    assert_eq!(actions.iter().map(|a| &a.id).collect::<BTreeSet<_>>().len(), distinct.len());
    assert_eq!(actions[0].id, format!("SWA0:{}", T0));
    assert_eq!(to_index_actions(&b, &[], &cfg), actions);

    let store = Arc::new(IndexStore::in_memory());
    let sink = StoreSink::new(store.clone(), &cfg, false).unwrap();
    sink.apply(&actions).unwrap();
    let first = content(&store, "flights");
    sink.apply(&actions).unwrap();
    assert_eq!(content(&store, "flights"), first);
    assert_eq!(first.len(), distinct.len());

    let mut wm = WatermarkState::new(1, 0);
    let mut ws = WindowState::new(60);
    ws.update(&mut wm, &b);
    let snaps = ws.finish();
    let actions = to_index_actions(&MicroBatch::empty(1, EventTime::ZERO), &snaps, &cfg);
    assert_eq!(actions.len(), 1);
    assert_eq!(actions[0].index, "flight_windows");
    assert_eq!(actions[0].id, format!("win:{}", T0 - T0 % 60));
    assert_eq!(actions[0].doc.get("airline_counts.SWA"), Some(&FieldValue::Num(20.0)));
    assert_eq!(actions[0].doc.get("window_end"), Some(&FieldValue::Time(EventTime(T0 - T0 % 60 + 60))));
}

fn produce_sim(log: &EventLog, flights: usize, seconds: u64) -> BTreeSet<(String, EventTime)> {
    let topic = log.topic("flights").unwrap();
    let cfg = SimConfig { flight_count: flights, ..Default::default() };
    let fleet = generate_fleet(&cfg, &AirportTable::embedded()).unwrap();
    let mut keys = BTreeSet::new();
    for t in tick_times(&cfg, seconds) {
        for p in tick(&fleet, t) {
            topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), t).unwrap();
            keys.insert((p.flight_icao.clone(), p.updated));
        }
    }
    keys
}

#[test]
fn five_hundred_positions_give_five_hundred_docs() {
    let e = env(4);
    let topic = e.log.topic("flights").unwrap();
    for i in 0..500u64 {
        let p = pos(&format!("JBU{}", i % 50), T0 + i, 800.0, 1.0);
        topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), p.updated).unwrap();
    }
    let (mut pipe, store) = memory_pipeline(&e.log, StreamConfig::default());
    pipe.run_until_drained().unwrap();
    assert_eq!(store.index("flights").unwrap().doc_count(), 500);
}

#[test]
fn crash_between_apply_and_commit_restarts_to_identical_state() {
    let e = env(4);
    let keys = produce_sim(&e.log, 120, 900);
    let cfg = StreamConfig { batch_interval_seconds: 5, ..Default::default() };

    let clean_dir = TempDir::new().unwrap();
    let clean = Arc::new(IndexStore::with_dir(clean_dir.path()));
    let sink = Arc::new(StoreSink::restore(clean.clone(), &cfg).unwrap());
    let metrics = Arc::new(Metrics::default());
    let mut p = Pipeline::open(StreamConfig { group_id: "clean".into(), ..cfg.clone() }, e.log.clone(), sink, metrics).unwrap();
    p.replay().unwrap();

    for crash_at in [3u64, 40, 175] {
        let dir = TempDir::new().unwrap();
        let group = format!("crash{crash_at}");
        let ccfg = StreamConfig { group_id: group, ..cfg.clone() };
        {
            let store = Arc::new(IndexStore::with_dir(dir.path()));
            let sink = Arc::new(StoreSink::restore(store, &ccfg).unwrap());
            let mut p = Pipeline::open(ccfg.clone(), e.log.clone(), sink, Arc::new(Metrics::default())).unwrap();
            p.inject_crash(CrashPoint::AfterApplyBeforeCommit { batch_id: crash_at });
            let err = p.replay().unwrap_err();
            assert!(matches!(err, StreamError::InjectedCrash(b) if b == crash_at));
        }
        let store = Arc::new(IndexStore::with_dir(dir.path()));
        let sink = Arc::new(StoreSink::restore(store.clone(), &ccfg).unwrap());
        let mut p = Pipeline::open(ccfg.clone(), e.log.clone(), sink, Arc::new(Metrics::default())).unwrap();
        p.replay().unwrap();
        for name in ["flights", "flight_windows"] {
            assert_eq!(content(&store, name), content(&clean, name), "{name} after crash at {crash_at}");
        }
        let ids: BTreeSet<String> = content(&store, "flights").into_iter().map(|(id, _)| id).collect();
        assert_eq!(ids, keys.iter().map(|(f, t)| format!("{f}:{t}")).collect());
    }
}

struct FlakySink {
    inner: StoreSink,
    failures: AtomicU32,
}

impl IndexSink for FlakySink {
    fn apply(&self, actions: &[IndexAction]) -> Result<(), IndexError> {
        if self.failures.load(Ordering::SeqCst) > 0 {
            self.failures.fetch_sub(1, Ordering::SeqCst);
            return Err(IndexError::InvalidConfig("injected".into()));
        }
        self.inner.apply(actions)
    }

    fn closed_through(&self) -> Result<EventTime, IndexError> {
        self.inner.closed_through()
    }
}

#[test]
fn index_failures_are_retried_and_block_commit() {
    let e = env(2);
    let topic = e.log.topic("flights").unwrap();
    for i in 0..50u64 {
        let p = pos(&format!("NKS{}", i % 5), T0 + i, 800.0, 1.0);
        topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), p.updated).unwrap();
    }
    let store = Arc::new(IndexStore::in_memory());
    let cfg = StreamConfig { apply_retries: 3, ..Default::default() };
    let sink = Arc::new(FlakySink { inner: StoreSink::new(store.clone(), &cfg, false).unwrap(), failures: AtomicU32::new(2) });
    let mut pipe = Pipeline::open(cfg.clone(), e.log.clone(), sink.clone(), Arc::new(Metrics::default())).unwrap();
    pipe.step(None).unwrap();
    assert_eq!(store.index("flights").unwrap().doc_count(), 50);

    let p = pos("NKS9", T0 + 500, 1.0, 1.0);
    topic.produce(Some(b"NKS9"), &p.to_json_bytes(), p.updated).unwrap();
    sink.failures.store(3, Ordering::SeqCst);
    let committed = pipe.committed().to_vec();
    let positions = pipe.positions().to_vec();
    assert!(matches!(pipe.step(None), Err(StreamError::Index(_))));
    assert_eq!(pipe.committed(), committed.as_slice());
    assert_eq!(pipe.positions(), positions.as_slice());
    assert_eq!(e.log.committed(&cfg.group_id, "flights", 0).unwrap(), committed[0]);

    let o = pipe.step(None).unwrap();
    assert_eq!(o.records, 1);
    assert_eq!(store.index("flights").unwrap().doc_count(), 51);
}

#[test]
fn stop_interrupts_wait_and_keeps_snapshots() {
    let e = env(2);
    let (mut pipe, store) = memory_pipeline(&e.log, StreamConfig { batch_interval_seconds: 30, window_seconds: 60, ..Default::default() });
    let stop = StopSignal::new();
    let s2 = stop.clone();
    let started = Instant::now();
    let h = std::thread::spawn(move || {
        let mut n = 0;
        pipe.run(&s2, |_| n += 1).map(|_| n)
    });
    std::thread::sleep(Duration::from_millis(100));
    stop.stop();
    let batches = h.join().unwrap().unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(batches >= 2);
    assert_eq!(store.index("flight_windows").unwrap().doc_count(), 0);

    let e = env(1);
    let p = pos("FFT1", T0, 800.0, 1.0);
    e.log.topic("flights").unwrap().produce(None, &p.to_json_bytes(), p.updated).unwrap();
    let (mut pipe, store) = memory_pipeline(&e.log, StreamConfig::default());
    let stop = StopSignal::new();
    stop.stop();
    pipe.step(None).unwrap();
    pipe.run(&stop, |_| {}).unwrap();
    assert_eq!(store.index("flight_windows").unwrap().doc_count(), 1);
    assert_eq!(pipe.committed(), &[1]);
}

#[test]
fn restart_restores_watermarks_from_committed_prefix() {
    let e = env(2);
    produce_random(&e.log, 5, 400);
    let cfg = StreamConfig { group_id: "wm".into(), ..Default::default() };
    let (mut a, _) = memory_pipeline(&e.log, cfg.clone());
    for _ in 0..30 {
        a.step(Some(EventTime(T0 + 200))).unwrap();
    }
    let sink = Arc::new(StoreSink::new(Arc::new(IndexStore::in_memory()), &cfg, false).unwrap());
    let b = Pipeline::open(cfg, e.log.clone(), sink, Arc::new(Metrics::default())).unwrap();
    for p in 0..2 {
        assert!(b.watermark_state().partition_watermark(p) <= a.watermark_state().partition_watermark(p));
    }
    assert_eq!(b.positions(), a.committed());
}

#[test]
fn skipped_checkpoints_hold_back_commits() {
    let e = env(2);
    produce_random(&e.log, 8, 300);
    let dir = TempDir::new().unwrap();
    let cfg = StreamConfig { max_records_per_partition: 20, ..Default::default() };
    let store = Arc::new(IndexStore::with_dir(dir.path()));
    let sink = StoreSink::restore(store, &cfg).unwrap().with_checkpoint_interval(Duration::from_secs(3600));
    let mut pipe = Pipeline::open(cfg.clone(), e.log.clone(), Arc::new(sink), Arc::new(Metrics::default())).unwrap();
    let mut committed = vec![];
    for _ in 0..6 {
        committed.push(pipe.step(None).unwrap().committed);
    }
    assert!(committed.windows(2).skip(1).all(|w| w[0] == w[1]), "{committed:?}");
    pipe.finish().unwrap();
    let hw = e.log.topic("flights").unwrap().high_watermarks();
    let on_disk: Vec<u64> = (0..2).map(|p| e.log.committed(&cfg.group_id, "flights", p).unwrap()).collect();
    assert!(on_disk.iter().zip(&hw).all(|(c, h)| c <= h));
    assert!(pipe.committed().iter().zip(pipe.positions()).all(|(c, p)| c == p));
    assert!(dir.path().join("_index/flight_windows.skix").exists());
}
