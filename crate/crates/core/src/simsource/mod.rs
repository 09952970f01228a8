//! Flight position sources.
//!
//! The default source is a deterministic simulator: a seeded fleet of flight
//! plans between the embedded airport table, each flown along its great circle
//! with a trapezoidal altitude profile. [`api`] parses the live flight API's
//! wire format for recorded fixtures or a real endpoint.

pub mod api;

use std::collections::HashSet;

use thiserror::Error;

use crate::geo::{self, haversine_km, initial_bearing, intermediate_point};
use crate::model::{EventTime, FlightPosition, FlightStatus, GeoPoint};
use crate::rng::Xoshiro256;

pub use api::{parse_api_response, ApiClient, ApiPage};

/// Embedded airport table (`icao,lat,lng,state`).
pub const AIRPORTS_CSV: &str = include_str!("../../data/airports.csv");

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("invalid flight plan: {0}")]
    InvalidPlan(String),
    #[error("need at least two airports to build routes")]
    InsufficientAirports,
    #[error("airport table line {line}: {msg}")]
    AirportTable { line: usize, msg: String },
    #[error("malformed API envelope: {0}")]
    MalformedEnvelope(String),
    #[error("API request failed: {0}")]
    Http(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Airport {
    pub icao: String,
    pub location: GeoPoint,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirportTable {
    airports: Vec<Airport>,
}

impl AirportTable {
    /// The 30-airport table shipped with the crate.
    pub fn embedded() -> AirportTable {
        AirportTable::parse(AIRPORTS_CSV).expect("embedded airport table is valid")
    }

    pub fn parse(text: &str) -> Result<AirportTable, SimError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "icao,lat,lng,state" => {}
            _ => return Err(SimError::AirportTable { line: 1, msg: "expected header icao,lat,lng,state".into() }),
        }
        let mut airports = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| SimError::AirportTable { line: line_no, msg: msg.to_string() };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(err("expected 4 columns"));
            }
            if cols[0].len() != 4 {
                return Err(err("icao must be 4 characters"));
            }
            if cols[3].len() != 2 {
                return Err(err("state must be a 2-letter code"));
            }
            let lat: f64 = cols[1].parse().map_err(|_| err("bad latitude"))?;
            let lng: f64 = cols[2].parse().map_err(|_| err("bad longitude"))?;
            let location = GeoPoint::new(lat, lng).map_err(|e| err(&e.to_string()))?;
            if !seen.insert(cols[0].to_string()) {
                return Err(err("duplicate icao"));
            }
            airports.push(Airport { icao: cols[0].to_string(), location, state: cols[3].to_string() });
        }
        Ok(AirportTable { airports })
    }

    pub fn airports(&self) -> &[Airport] {
        &self.airports
    }

    pub fn get(&self, icao: &str) -> Option<&Airport> {
        self.airports.iter().find(|a| a.icao == icao)
    }

    pub fn len(&self) -> usize {
        self.airports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.airports.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightPlan {
    pub flight_icao: String,
    pub flight_iata: Option<String>,
    pub reg_number: Option<String>,
    pub airline_icao: String,
    pub dep: Airport,
    pub arr: Airport,
    pub depart_time: EventTime,
    /// km/h.
    pub cruise_speed: f64,
    /// Meters.
    pub cruise_alt: f64,
    pub climb_fraction: f64,
    pub descent_fraction: f64,
}

impl FlightPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidPlan(format!("{}: {m}", self.flight_icao)));
        if self.flight_icao.is_empty() {
            return bad("empty flight_icao");
        }
        if self.dep.icao == self.arr.icao {
            return bad("departure equals arrival");
        }
        if geo::is_antipodal(self.dep.location, self.arr.location) {
            return bad("antipodal route");
        }
        if self.cruise_speed.is_nan() || self.cruise_speed <= 0.0 || self.cruise_alt.is_nan() || self.cruise_alt <= 0.0 {
            return bad("cruise speed and altitude must be positive");
        }
        let in_open = |f: f64| f > 0.0 && f < 0.5;
        if !in_open(self.climb_fraction) || !in_open(self.descent_fraction) {
            return bad("climb/descent fractions must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn route_km(&self) -> f64 {
        haversine_km(self.dep.location, self.arr.location)
    }

    /// Fraction of the route flown at `t`, clamped to `[0, 1]`.
    pub fn route_fraction(&self, t: EventTime) -> f64 {
        if t <= self.depart_time {
            return 0.0;
        }
        let hours = (t.0 - self.depart_time.0) as f64 / 3600.0;
        (self.cruise_speed * hours / self.route_km()).clamp(0.0, 1.0)
    }
}

/// Trapezoidal altitude profile: linear climb, cruise, linear descent.
pub fn altitude_at(plan: &FlightPlan, route_fraction: f64) -> f64 {
    let f = route_fraction.clamp(0.0, 1.0);
    let descent_start = 1.0 - plan.descent_fraction;
    if f < plan.climb_fraction {
        plan.cruise_alt * f / plan.climb_fraction
    } else if f <= descent_start {
        plan.cruise_alt
    } else {
        plan.cruise_alt * (1.0 - f) / plan.descent_fraction
    }
}

/// The plan's state report at `t`.
///
/// Before departure the flight is `scheduled` at its origin; once the whole
/// route is covered it is `landed` at its destination; otherwise `en-route`.
pub fn position_at(plan: &FlightPlan, t: EventTime) -> FlightPosition {
    let fraction = plan.route_fraction(t);
    let course = initial_bearing(plan.dep.location, plan.arr.location).unwrap_or(0.0);
    let (status, point, alt, speed, dir) = if t < plan.depart_time || fraction <= 0.0 {
        (FlightStatus::Scheduled, plan.dep.location, 0.0, 0.0, course)
    } else if fraction >= 1.0 {
        let final_course = initial_bearing(plan.arr.location, plan.dep.location)
            .map(|b| crate::model::normalize_heading(b + 180.0))
            .unwrap_or(course);
        (FlightStatus::Landed, plan.arr.location, 0.0, 0.0, final_course)
    } else {
        let point = intermediate_point(plan.dep.location, plan.arr.location, fraction)
            .expect("plans are validated against antipodal routes");
        let dir = initial_bearing(point, plan.arr.location).unwrap_or(course);
        (FlightStatus::EnRoute, point, altitude_at(plan, fraction), plan.cruise_speed, dir)
    };
    FlightPosition {
        reg_number: plan.reg_number.clone(),
        flight_icao: plan.flight_icao.clone(),
        flight_iata: plan.flight_iata.clone(),
        airline_icao: Some(plan.airline_icao.clone()),
        dep_icao: Some(plan.dep.icao.clone()),
        arr_icao: Some(plan.arr.icao.clone()),
        lat: point.lat,
        lng: point.lng,
        alt,
        dir,
        speed,
        status,
        updated: t,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub flight_count: usize,
    pub tick_seconds: u64,
    pub start_time: EventTime,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 42, flight_count: 500, tick_seconds: 5, start_time: EventTime(1_701_388_800) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.flight_count == 0 {
            return Err(SimError::InvalidConfig("flight_count must be > 0".into()));
        }
        if self.tick_seconds == 0 {
            return Err(SimError::InvalidConfig("tick_seconds must be > 0".into()));
        }
        Ok(())
    }
}

/// Operators the simulator draws from: (ICAO, IATA).
const AIRLINES: [(&str, &str); 8] = [
    ("AAL", "AA"),
    ("DAL", "DL"),
    ("UAL", "UA"),
    ("SWA", "WN"),
    ("JBU", "B6"),
    ("ASA", "AS"),
    ("NKS", "NK"),
    ("FFT", "F9"),
];

/// Departures are spread over `[start - LEAD, start - LEAD + SPREAD)`.
const DEPARTURE_LEAD_SECONDS: u64 = 2 * 3600;
const DEPARTURE_SPREAD_SECONDS: u64 = 3 * 3600;

/// Draws `cfg.flight_count` flight plans. A pure function of `cfg` and the table.
pub fn generate_fleet(cfg: &SimConfig, airports: &AirportTable) -> Result<Vec<FlightPlan>, SimError> {
    cfg.validate()?;
    let table = airports.airports();
    if table.len() < 2 {
        return Err(SimError::InsufficientAirports);
    }
    let mut rng = Xoshiro256::seed_from_u64(cfg.seed);
    let mut plans = Vec::with_capacity(cfg.flight_count);
    for i in 0..cfg.flight_count {
        let (airline_icao, airline_iata) = AIRLINES[rng.below(AIRLINES.len() as u64) as usize];
        let number = 100 + i;
        let (dep, arr) = loop {
            let d = rng.below(table.len() as u64) as usize;
            let mut a = rng.below(table.len() as u64 - 1) as usize;
            if a >= d {
                a += 1;
            }
            if !geo::is_antipodal(table[d].location, table[a].location) {
                break (&table[d], &table[a]);
            }
        };
        let offset = rng.below(DEPARTURE_SPREAD_SECONDS);
        let depart_time = EventTime((cfg.start_time.0 + offset).saturating_sub(DEPARTURE_LEAD_SECONDS));
        let plan = FlightPlan {
            flight_icao: format!("{airline_icao}{number}"),
            flight_iata: Some(format!("{airline_iata}{number}")),
            reg_number: Some(format!("N{}", 10_000 + rng.below(90_000))),
            airline_icao: airline_icao.to_string(),
            dep: dep.clone(),
            arr: arr.clone(),
            depart_time,
            cruise_speed: rng.range_f64(780.0, 920.0),
            cruise_alt: rng.range_f64(9_000.0, 12_500.0),
            climb_fraction: rng.range_f64(0.05, 0.2),
            descent_fraction: rng.range_f64(0.05, 0.2),
        };
        plan.validate()?;
        plans.push(plan);
    }
    Ok(plans)
}

/// State reports of every flight airborne at `t`.
pub fn tick(fleet: &[FlightPlan], t: EventTime) -> Vec<FlightPosition> {
    fleet
        .iter()
        .filter(|p| {
            let f = p.route_fraction(t);
            f > 0.0 && f < 1.0
        })
        .map(|p| position_at(p, t))
        .collect()
}

/// Tick instants `start, start + tick, ...` strictly before `start + duration`.
pub fn tick_times(cfg: &SimConfig, duration_seconds: u64) -> impl Iterator<Item = EventTime> {
    let start = cfg.start_time.0;
    let step = cfg.tick_seconds.max(1);
    (0..duration_seconds.div_ceil(step)).map(move |k| EventTime(start + k * step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_position;
    use proptest::prelude::*;

    fn plan(dep: &str, arr: &str) -> FlightPlan {
        let t = AirportTable::embedded();
        FlightPlan {
            flight_icao: "TST1".into(),
            flight_iata: None,
            reg_number: None,
            airline_icao: "TST".into(),
            dep: t.get(dep).unwrap().clone(),
            arr: t.get(arr).unwrap().clone(),
            depart_time: EventTime(1_000_000),
            cruise_speed: 800.0,
            cruise_alt: 10_000.0,
            climb_fraction: 0.1,
            descent_fraction: 0.1,
        }
    }

    #[test]
    fn embedded_table_has_thirty_unique_airports() {
        let t = AirportTable::embedded();
        assert_eq!(t.len(), 30);
        assert_eq!(t.get("KJFK").unwrap().state, "NY");
    }

    #[test]
    fn airport_table_rejects_bad_rows() {
        assert!(AirportTable::parse("icao,lat,lng,state\nKXYZ,95,0,CA\n").is_err());
        assert!(AirportTable::parse("icao,lat,lng,state\nKXYZ,1,0,CA\nKXYZ,2,0,CA\n").is_err());
        assert!(AirportTable::parse("lat,lng\n").is_err());
    }

    #[test]
    fn altitude_profile() {
        let p = plan("KJFK", "KLAX");
        assert_eq!(altitude_at(&p, 0.0), 0.0);
        assert_eq!(altitude_at(&p, 0.5), 10_000.0);
        assert_eq!(altitude_at(&p, 0.05), 5_000.0);
        assert!((altitude_at(&p, 0.95) - 5_000.0).abs() < 1e-9);
        assert_eq!(altitude_at(&p, 1.0), 0.0);
    }

    #[test]
    fn before_departure_is_scheduled_at_origin() {
        let p = plan("KJFK", "KLAX");
        let pos = position_at(&p, EventTime(999_000));
        assert_eq!(pos.status, FlightStatus::Scheduled);
        assert_eq!(pos.location(), p.dep.location);
        assert_eq!(pos.alt, 0.0);
    }

    #[test]
    fn after_arrival_is_landed_at_destination() {
        let p = plan("KJFK", "KLAX");
        let hours = p.route_km() / p.cruise_speed;
        let t = EventTime(p.depart_time.0 + (hours * 3600.0) as u64 + 10);
        let pos = position_at(&p, t);
        assert_eq!(pos.status, FlightStatus::Landed);
        assert_eq!(pos.location(), p.arr.location);
        assert_eq!(pos.alt, 0.0);
    }

    #[test]
    fn mid_flight_follows_great_circle() {
        let p = plan("KJFK", "KLAX");
        let t = EventTime(p.depart_time.0 + 3600);
        let pos = position_at(&p, t);
        assert_eq!(pos.status, FlightStatus::EnRoute);
        let f = p.route_fraction(t);
        let expected = intermediate_point(p.dep.location, p.arr.location, f).unwrap();
        assert_eq!(pos.location(), expected);
        // one hour at 800 km/h
        assert!((haversine_km(p.dep.location, pos.location()) - 800.0).abs() < 1e-6);
    }

    #[test]
    fn zero_flight_count_rejected() {
        let cfg = SimConfig { flight_count: 0, ..SimConfig::default() };
        assert!(matches!(generate_fleet(&cfg, &AirportTable::embedded()), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn too_few_airports() {
        let t = AirportTable::parse("icao,lat,lng,state\nKJFK,40.6413,-73.7781,NY\n").unwrap();
        assert!(matches!(generate_fleet(&SimConfig::default(), &t), Err(SimError::InsufficientAirports)));
    }

    #[test]
    fn fleet_is_deterministic_and_unique() {
        let cfg = SimConfig { seed: 42, flight_count: 500, ..SimConfig::default() };
        let a = generate_fleet(&cfg, &AirportTable::embedded()).unwrap();
        let b = generate_fleet(&cfg, &AirportTable::embedded()).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<_> = a.iter().map(|p| p.flight_icao.clone()).collect();
        assert_eq!(ids.len(), 500);
        assert!(a.iter().all(|p| p.dep.icao != p.arr.icao));
    }

    #[test]
    fn tick_edges() {
        let cfg = SimConfig { flight_count: 50, ..SimConfig::default() };
        let fleet = generate_fleet(&cfg, &AirportTable::embedded()).unwrap();
        assert!(tick(&fleet, EventTime(0)).is_empty());
        assert!(tick(&fleet, EventTime(cfg.start_time.0 + 100 * 3600)).is_empty());
    }

    #[test]
    fn tick_times_cover_duration() {
        let cfg = SimConfig { tick_seconds: 5, ..SimConfig::default() };
        assert_eq!(tick_times(&cfg, 0).count(), 0);
        assert_eq!(tick_times(&cfg, 3600).count(), 720);
        assert_eq!(tick_times(&cfg, 7).count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_tick_position_is_valid(seed in any::<u64>(), count in 1usize..40, offset in 0u64..20_000) {
            let cfg = SimConfig { seed, flight_count: count, ..SimConfig::default() };
            let fleet = generate_fleet(&cfg, &AirportTable::embedded()).unwrap();
            let t = EventTime(cfg.start_time.0 - 7200 + offset);
            for pos in tick(&fleet, t) {
                prop_assert_eq!(pos.status, FlightStatus::EnRoute);
                prop_assert_eq!(validate_position(&pos.to_raw()).unwrap(), pos);
            }
        }
    }
}
