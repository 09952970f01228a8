//! `analyze`: historical on-time summary of a BTS on-time performance CSV.

use std::path::PathBuf;

use skystream_core::api::dataset_path;
use skystream_core::histbatch::{export_summary, parse_bts_csv, rank_dimension, summarize, Dimension, Metric};

use crate::{CliError, Report, RunConfig};

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub csv: PathBuf,
    /// Output file; defaults to `<data_dir>/_delays/<analyze.dataset>.json`.
    pub out: Option<PathBuf>,
    pub expect_total: Option<u64>,
    pub expect_on_time_pct: Option<f64>,
    /// Allowed absolute difference, in percentage points, for the on-time share.
    pub tolerance: f64,
}

pub fn analyze(cfg: &RunConfig, opts: &AnalyzeOptions) -> Result<Report, CliError> {
    let parsed = parse_bts_csv(&opts.csv)?;
    if parsed.rejected > 0 {
        log::warn!("{} rows failed type checks and were skipped", parsed.rejected);
    }
    let summary = summarize(&parsed.records)?;
    let out = match &opts.out {
        Some(p) => p.clone(),
        None => dataset_path(&cfg.data_dir.join("_delays"), &cfg.analyze.dataset)
            .map_err(|e| CliError::Config(crate::ConfigError::Invalid(e.message)))?,
    };
    export_summary(&summary, &out)?;

    let mut r = Report::default();
    r.push("rows", parsed.records.len() as u64 + parsed.rejected)
        .push("rejected", parsed.rejected)
        .push("total_flights", summary.total_flights)
        .push("cancelled", summary.cancelled_count)
        .push("on_time", summary.on_time_count)
        .push("delayed", summary.delayed_count)
        .push("on_time_pct", summary.on_time_pct)
        .push("delayed_pct", summary.delayed_pct);
    for (dim, name) in [(Dimension::Carrier, "carrier"), (Dimension::State, "state")] {
        if let Some((k, v)) = rank_dimension(&summary, dim, Metric::Delayed).first() {
            r.push(&format!("top_{name}_by_delayed"), format!("{k}:{v}"));
        }
    }
    r.push("output", out.display());

    let mut problems = vec![];
    if let Some(want) = opts.expect_total {
        let ok = summary.total_flights == want;
        r.push("expect_total", format!("{want} {}", if ok { "ok" } else { "MISMATCH" }));
        if !ok {
            problems.push(format!("total_flights {} != {want}", summary.total_flights));
        }
    }
    if let Some(want) = opts.expect_on_time_pct {
        let got = summary.on_time_pct.0 as f64 / 100.0;
        let ok = (got - want).abs() <= opts.tolerance + 1e-9;
        r.push("expect_on_time_pct", format!("{want} {}", if ok { "ok" } else { "MISMATCH" }));
        if !ok {
            problems.push(format!("on_time_pct {got:.2} differs from {want} by more than {}", opts.tolerance));
        }
    }
    if !problems.is_empty() {
        r.failure = Some(problems.join("; "));
    }
    Ok(r)
}
