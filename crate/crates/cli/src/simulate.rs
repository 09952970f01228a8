//! `simulate`: feeds flight positions into the topic, from the deterministic
//! simulator or by polling a live flight API.

use std::time::{Duration, Instant};

use skystream_core::model::EventTime;
use skystream_core::simsource::{generate_fleet, tick, tick_times, AirportTable, ApiClient};
use skystream_core::stream::StopSignal;

use crate::{open_log, open_topic, CliError, Report, RunConfig};

/// Consecutive failed API polls tolerated before giving up.
pub const MAX_POLL_FAILURES: u32 = 3;

pub fn simulate(cfg: &RunConfig, stop: &StopSignal) -> Result<Report, CliError> {
    match cfg.sim.source.as_str() {
        "api" => poll_api(cfg, stop),
        _ => run_simulator(cfg, stop),
    }
}

/// Produces every tick in `[start, start + duration)`, keyed by flight, with
/// the simulated time as the log timestamp.
fn run_simulator(cfg: &RunConfig, stop: &StopSignal) -> Result<Report, CliError> {
    let sim = cfg.sim_config();
    let fleet = generate_fleet(&sim, &AirportTable::embedded())?;
    let log = open_log(&cfg.data_dir)?;
    let (topic, _) = open_topic(&log, cfg)?;
    let began = Instant::now();
    let (mut ticks, mut produced) = (0u64, 0u64);
    let mut last_ts = None;
    for t in tick_times(&sim, cfg.sim.duration_seconds) {
        if cfg.sim.speed > 0.0 {
            let due = Duration::from_secs_f64((t.0 - sim.start_time.0) as f64 / cfg.sim.speed);
            if stop.wait(due.saturating_sub(began.elapsed())) {
                break;
            }
        } else if stop.is_stopped() {
            break;
        }
        for p in tick(&fleet, t) {
            topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), t)?;
            produced += 1;
        }
        ticks += 1;
        last_ts = Some(t);
    }
    topic.flush()?;
    log::info!("simulator produced {produced} positions over {ticks} ticks");
    let mut r = Report::default();
    r.push("source", "sim")
        .push("flights", fleet.len())
        .push("ticks", ticks)
        .push("produced", produced)
        .push("last_ts", last_ts.map_or(0, |t| t.0));
    Ok(r)
}

/// Polls the API every `poll_seconds` for `duration_seconds` of wall time
/// (until interrupted when 0). Log timestamps are ingestion times.
fn poll_api(cfg: &RunConfig, stop: &StopSignal) -> Result<Report, CliError> {
    let key = (!cfg.sim.api_key.is_empty()).then(|| cfg.sim.api_key.clone());
    let client = ApiClient::new(cfg.sim.api_url.clone(), key)?;
    let log = open_log(&cfg.data_dir)?;
    let (topic, _) = open_topic(&log, cfg)?;
    let began = Instant::now();
    let deadline = (cfg.sim.duration_seconds > 0).then(|| Duration::from_secs(cfg.sim.duration_seconds));
    let interval = Duration::from_secs(cfg.sim.poll_seconds);
    let (mut polls, mut produced, mut dead_letter, mut failures) = (0u64, 0u64, 0u64, 0u32);
    loop {
        let started = Instant::now();
        match client.fetch() {
            Ok(page) => {
                failures = 0;
                let now = EventTime(
                    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                );
                for p in &page.positions {
                    topic.produce(Some(p.flight_icao.as_bytes()), &p.to_json_bytes(), now)?;
                }
                topic.flush()?;
                produced += page.positions.len() as u64;
                dead_letter += page.dead_letter;
                log::info!("poll {polls}: {} positions, {} dead-lettered", page.positions.len(), page.dead_letter);
            }
            Err(e) => {
                failures += 1;
                log::warn!("poll {polls} failed ({failures}/{MAX_POLL_FAILURES}): {e}");
                if failures >= MAX_POLL_FAILURES {
                    return Err(e.into());
                }
            }
        }
        polls += 1;
        if deadline.is_some_and(|d| began.elapsed() + interval.saturating_sub(started.elapsed()) > d) {
            break;
        }
        if stop.wait(interval.saturating_sub(started.elapsed())) {
            break;
        }
    }
    let mut r = Report::default();
    r.push("source", "api").push("polls", polls).push("produced", produced).push("dead_letter", dead_letter);
    Ok(r)
}
