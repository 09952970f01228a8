use proptest::prelude::*;

use super::*;

fn rec(carrier: &str, fl_num: &str, state: &str, dep: Option<i64>, cancelled: bool, causes: [i64; 5]) -> BtsRecord {
    let opt = |v: i64| (v > 0).then_some(v * 100);
    BtsRecord {
        fl_date: NaiveDate::from_ymd_opt(2023, 12, 1).unwrap(),
        carrier: carrier.into(),
        fl_num: fl_num.into(),
        origin: "XXX".into(),
        origin_state: state.into(),
        dest: "YYY".into(),
        dep_delay: dep.map(|d| d * 100),
        cancelled,
        weather_delay: opt(causes[0]),
        nas_delay: opt(causes[1]),
        security_delay: opt(causes[2]),
        carrier_delay: opt(causes[3]),
        late_aircraft_delay: opt(causes[4]),
    }
}

const HEADER: &str = "FL_DATE,OP_CARRIER,OP_CARRIER_FL_NUM,ORIGIN,ORIGIN_STATE_ABR,DEST,DEP_DELAY,CANCELLED,WEATHER_DELAY,NAS_DELAY,SECURITY_DELAY,CARRIER_DELAY,LATE_AIRCRAFT_DELAY";

#[test]
fn classify_boundaries() {
    let c = |d| classify(&rec("WN", "1", "TX", d, false, [0; 5]));
    assert_eq!(c(Some(0)), Outcome::OnTime);
    assert_eq!(c(Some(15)), Outcome::Delayed);
    assert_eq!(c(Some(14)), Outcome::OnTime);
    assert_eq!(c(Some(-20)), Outcome::OnTime);
    assert_eq!(c(None), Outcome::OnTime);
    assert_eq!(classify(&rec("WN", "1", "TX", None, true, [0; 5])), Outcome::Cancelled);
    let mut r = rec("WN", "1", "TX", None, false, [0; 5]);
    r.dep_delay = Some(1499);
    assert_eq!(classify(&r), Outcome::OnTime);
}

#[test]
fn all_on_time() {
    let rs: Vec<_> = (0..7).map(|i| rec("AA", &i.to_string(), "TX", Some(0), false, [0; 5])).collect();
    let s = summarize(&rs).unwrap();
    assert_eq!((s.on_time_pct.to_string(), s.delayed_pct.to_string()), ("100.00".into(), "0.00".into()));
    assert!(s.treemap.is_empty());
}

#[test]
fn percentages_round_half_up_and_close() {
    assert_eq!(percent_hundredths(2, 3), 6667);
    assert_eq!(percent_hundredths(1, 3), 3333);
    assert_eq!(percent_hundredths(1, 20_000), 1);
    assert_eq!(percent_hundredths(1, 40_000), 0);
    assert_eq!(percent_hundredths(1, 8), 1250);
    let rs = vec![
        rec("AA", "1", "TX", Some(0), false, [0; 5]),
        rec("AA", "2", "TX", Some(0), false, [0; 5]),
        rec("AA", "3", "TX", Some(30), false, [0; 5]),
        rec("AA", "4", "TX", None, true, [0; 5]),
    ];
    let s = summarize(&rs).unwrap();
    assert_eq!((s.on_time_pct, s.delayed_pct), (Percent(6667), Percent(3333)));
    assert_eq!((s.total_flights, s.cancelled_count), (4, 1));
}

#[test]
fn empty_or_all_cancelled_is_an_error() {
    assert!(matches!(summarize(&[]), Err(HistError::EmptyDataset)));
    assert!(matches!(summarize(&[rec("AA", "1", "TX", None, true, [0; 5])]), Err(HistError::EmptyDataset)));
}

#[test]
fn treemap_two_flights() {
    let rs = vec![
        rec("UA", "1", "IL", Some(40), false, [30, 0, 0, 0, 0]),
        rec("UA", "2", "IL", Some(80), false, [0, 50, 0, 20, 0]),
        rec("UA", "3", "IL", Some(0), false, [0; 5]),
    ];
    let t = treemap_data(&rs);
    assert_eq!(t.len(), 1);
    assert_eq!((t[0].name.as_str(), t[0].weight), ("UA", 10_000));
    let kids: Vec<_> = t[0].children.iter().map(|c| (c.name.as_str(), c.weight)).collect();
    assert_eq!(kids, vec![("UA2", 7_000), ("UA1", 3_000)]);
    assert!(treemap_data(&[rec("UA", "1", "IL", Some(0), false, [0; 5])]).is_empty());
}

#[test]
fn ranking() {
    let rs = vec![
        rec("DL", "1", "GA", Some(20), false, [0; 5]),
        rec("AA", "1", "TX", Some(20), false, [0; 5]),
        rec("AA", "2", "TX", Some(0), false, [0; 5]),
        rec("UA", "1", "IL", Some(0), false, [0, 0, 0, 5, 0]),
    ];
    let s = summarize(&rs).unwrap();
    let r = rank_dimension(&s, Dimension::Carrier, Metric::Delayed);
    assert_eq!(r, vec![("AA".into(), 1), ("DL".into(), 1), ("UA".into(), 0)]);
    let r = rank_dimension(&s, Dimension::Carrier, "cause:carrier".parse().unwrap());
    assert_eq!(r[0], ("UA".into(), 500));
    let one = summarize(&[rec("AA", "1", "TX", Some(0), false, [0; 5])]).unwrap();
    assert_eq!(rank_dimension(&one, Dimension::State, Metric::Flights), vec![("TX".into(), 1)]);
    assert_eq!(rank_dimension(&s, "weekday".parse().unwrap(), Metric::Flights), vec![("Friday".into(), 4)]);
    assert!(matches!("airport".parse::<Dimension>(), Err(HistError::UnknownDimension(_))));
    assert!(matches!("cause:fog".parse::<Metric>(), Err(HistError::UnknownMetric(_))));
}

#[test]
fn parse_errors_and_rejections() {
    assert!(matches!(parse_bts_reader("".as_bytes()), Err(HistError::EmptyFile)));
    let no_date = HEADER.replace("FL_DATE,", "");
    assert!(matches!(parse_bts_reader(no_date.as_bytes()), Err(HistError::MissingColumn("FL_DATE"))));

    let rows = [
        "2023-12-01,WN,1,DAL,TX,HOU,-3.00,0.00,,,,,",
        "12/2/2023 12:00:00 AM,WN,1,DAL,TX,HOU,-3,0,,,,,",
        "2023-12-01,WN,1,DAL,TX,HOU,,1.00,,,,,",
        "2023-12-01,WN,1,DAL,TX,HOU,20.00,0.00,5.50,,,,14.5",
        "2023-13-01,WN,1,DAL,TX,HOU,0,0,,,,,",
        "2023-12-01,,1,DAL,TX,HOU,0,0,,,,,",
        "2023-12-01,WN,1,DAL,Texas,HOU,0,0,,,,,",
        "2023-12-01,WN,1,DAL,TX,HOU,0,2,,,,,",
        "2023-12-01,WN,1,DAL,TX,HOU,0,0,-1,,,,",
        "2023-12-01,WN,1,DAL,TX,HOU,0.001,0,,,,,",
        "2023-12-01,WN,1,DAL,TX",
        ",,,,,,,,,,,,",
    ];
    let text = format!("{HEADER}\n{}\n", rows.join("\n"));
    let p = parse_bts_reader(text.as_bytes()).unwrap();
    assert_eq!((p.records.len(), p.rejected), (4, 7));
    assert_eq!(p.records[1].fl_date, NaiveDate::from_ymd_opt(2023, 12, 2).unwrap());
    assert_eq!(p.records[1].dep_delay, Some(-300));
    assert!(p.records[2].cancelled && p.records[2].dep_delay.is_none());
    assert_eq!((p.records[3].weather_delay, p.records[3].late_aircraft_delay), (Some(550), Some(1450)));
}

#[test]
fn export_is_canonical_and_round_trips() {
    let rs = vec![
        rec("WN", "7", "TX", Some(25), false, [10, 0, 3, 0, 12]),
        rec("AA", "9", "CA", Some(-1), false, [0; 5]),
        rec("AA", "9", "CA", None, true, [0; 5]),
    ];
    let s = summarize(&rs).unwrap();
    let dir = tempfile::TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("sub/b.json"));
    export_summary(&s, &a).unwrap();
    export_summary(&s, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(bytes.ends_with(b"\n"));
    let back: DelaySummary = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(back, s);
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("{\"by_carrier\":"));
    assert!(text.contains("\"on_time_pct\":50.0"));
}

fn arb_record() -> impl Strategy<Value = BtsRecord> {
    (
        prop::sample::select(vec!["WN", "AA", "DL"]),
        0u32..6,
        prop::sample::select(vec!["TX", "CA", "NY", "FL"]),
        prop::option::of(-30i64..200),
        prop::bool::weighted(0.1),
        prop::array::uniform5(prop::option::of(0i64..5000)),
        1u32..=31,
    )
        .prop_map(|(carrier, n, state, dep, cancelled, causes, day)| BtsRecord {
            fl_date: NaiveDate::from_ymd_opt(2023, 12, day).unwrap(),
            carrier: carrier.into(),
            fl_num: n.to_string(),
            origin: "AAA".into(),
            origin_state: state.into(),
            dest: "BBB".into(),
            dep_delay: if cancelled { None } else { dep.map(|d| d * 100) },
            cancelled,
            weather_delay: causes[0],
            nas_delay: causes[1],
            security_delay: causes[2],
            carrier_delay: causes[3],
            late_aircraft_delay: causes[4],
        })
}

proptest! {
    #[test]
    fn summary_invariants(rs in prop::collection::vec(arb_record(), 1..120)) {
        let Ok(s) = summarize(&rs) else {
            prop_assert!(rs.iter().all(|r| r.cancelled));
            return Ok(());
        };
        prop_assert_eq!(s.on_time_pct.0 + s.delayed_pct.0, 10_000);
        prop_assert_eq!(s.on_time_count + s.delayed_count + s.cancelled_count, rs.len() as u64);
        let base = s.on_time_count + s.delayed_count;
        for dim in [&s.by_state, &s.by_carrier, &s.by_weekday] {
            prop_assert_eq!(dim.values().map(|d| d.flights).sum::<u64>(), base);
            prop_assert_eq!(dim.values().map(|d| d.delayed).sum::<u64>(), s.delayed_count);
            prop_assert_eq!(dim.values().map(|d| d.cause_minutes.total()).sum::<i64>(), s.cause_minutes.total());
        }
        let mut tree_total = 0;
        for node in &s.treemap {
            prop_assert!(node.weight > 0);
            prop_assert_eq!(node.children.iter().map(|c| c.weight).sum::<i64>(), node.weight);
            tree_total += node.weight;
        }
        prop_assert_eq!(tree_total, s.cause_minutes.total());
        let text = to_canonical_json(&s).unwrap();
        let back: DelaySummary = serde_json::from_slice(&text).unwrap();
        prop_assert_eq!(back, s);
    }
}
