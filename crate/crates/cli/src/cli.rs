//! Command-line surface. Dedicated flags are shorthands for `--set` keys and
//! share their precedence.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use skystream_core::stream::StopSignal;

use crate::analyze::{analyze, AnalyzeOptions};
use crate::config::{parse_override, resolve, Layers, RunConfig};
use crate::demo::{demo, DemoOptions};
use crate::pipeline::run_pipeline;
use crate::serve::serve;
use crate::simulate::simulate;
use crate::{broker_init, CliError, Report};

#[derive(Debug, Parser)]
#[command(name = "skystream", version, about = "Real-time flight analytics pipeline")]
pub struct Cli {
    /// TOML config file (default: $SKYSTREAM_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set pipeline.window_seconds=120`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct SimFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub flights: Option<u64>,
    /// Simulated seconds to generate.
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the data directory and the topic.
    BrokerInit,
    /// Produce flight positions into the topic.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        /// Simulated seconds per wall second; 0 is unpaced.
        #[arg(long)]
        speed: Option<f64>,
        /// `sim` or `api`.
        #[arg(long)]
        source: Option<String>,
    },
    /// Consume the topic into the indices.
    Pipeline {
        /// Process what is in the topic, close all windows and exit.
        #[arg(long)]
        drain: bool,
    },
    /// Run the HTTP query service.
    Serve {
        #[arg(long, value_name = "HOST:PORT")]
        bind: Option<String>,
    },
    /// Summarize a BTS on-time performance CSV.
    Analyze {
        csv: PathBuf,
        /// Dataset id served at /api/delays/summary?dataset=<id>.
        #[arg(long)]
        dataset: Option<String>,
        /// Write the summary here instead of under the data directory.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Fail unless total_flights equals this.
        #[arg(long)]
        expect_total: Option<u64>,
        /// Fail unless the on-time share is within --tolerance of this.
        #[arg(long, value_name = "PCT")]
        expect_on_time_pct: Option<f64>,
        #[arg(long, default_value_t = 0.01, value_name = "POINTS")]
        tolerance: f64,
    },
    /// Simulator, pipeline and query service in one process, with checks.
    Demo {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long, value_name = "BATCH_ID")]
        crash_after_batch: Option<u64>,
        /// Use --data-dir and leave it in place instead of a temporary directory.
        #[arg(long)]
        keep: bool,
        /// Pace the producer for this many wall seconds and report throughput.
        #[arg(long, value_name = "SECONDS")]
        sustain_seconds: Option<u64>,
        /// Records per second in sustain mode.
        #[arg(long, default_value_t = 6000)]
        rate: u64,
        /// Keep serving on api.bind after the run until Ctrl-C.
        #[arg(long)]
        serve: bool,
        #[arg(long, value_name = "HOST:PORT")]
        bind: Option<String>,
    },
}

impl Cli {
    /// Flag overrides as `section.key` pairs, dedicated flags first.
    pub fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut out = vec![];
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        put("log_level", self.log_level.clone());
        let sim_flags = |put: &mut dyn FnMut(&str, Option<String>), s: &SimFlags| {
            put("sim.seed", s.seed.map(|v| v.to_string()));
            put("sim.flights", s.flights.map(|v| v.to_string()));
            put("sim.duration_seconds", s.duration.map(|v| v.to_string()));
        };
        match &self.command {
            Command::Simulate { sim, speed, source } => {
                sim_flags(&mut put, sim);
                put("sim.speed", speed.map(|v| v.to_string()));
                put("sim.source", source.clone());
            }
            Command::Serve { bind } => put("api.bind", bind.clone()),
            Command::Analyze { dataset, .. } => put("analyze.dataset", dataset.clone()),
            Command::Demo { sim, bind, .. } => {
                sim_flags(&mut put, sim);
                put("api.bind", bind.clone());
            }
            Command::BrokerInit | Command::Pipeline { .. } => {}
        }
        for s in &self.set {
            out.push(parse_override(s)?);
        }
        Ok(out)
    }

    pub fn resolve_config(&self, env: Vec<(String, String)>) -> Result<RunConfig, CliError> {
        let layers = Layers::load(self.config.as_deref(), env, self.overrides()?)?;
        Ok(resolve(&layers)?)
    }

    /// Runs the subcommand. `stop` ends long-running commands early.
    pub fn run(&self, cfg: &RunConfig, stop: &StopSignal) -> Result<Report, CliError> {
        match &self.command {
            Command::BrokerInit => broker_init(cfg),
            Command::Simulate { .. } => simulate(cfg, stop),
            Command::Pipeline { drain } => run_pipeline(cfg, *drain, stop),
            Command::Serve { .. } => serve(cfg, stop.clone(), |_| {}),
            Command::Analyze { csv, out, expect_total, expect_on_time_pct, tolerance, .. } => analyze(
                cfg,
                &AnalyzeOptions {
                    csv: csv.clone(),
                    out: out.clone(),
                    expect_total: *expect_total,
                    expect_on_time_pct: *expect_on_time_pct,
                    tolerance: *tolerance,
                },
            ),
            Command::Demo { crash_after_batch, keep, sustain_seconds, rate, serve, .. } => demo(
                cfg,
                &DemoOptions {
                    crash_after_batch: *crash_after_batch,
                    keep: *keep,
                    sustain_seconds: *sustain_seconds,
                    rate: *rate,
                    serve: *serve,
                },
            ),
        }
    }

    /// Whether Ctrl-C should raise the stop signal rather than being left to
    /// the command itself.
    pub fn stops_on_interrupt(&self) -> bool {
        matches!(self.command, Command::Simulate { .. } | Command::Pipeline { drain: false })
    }
}
