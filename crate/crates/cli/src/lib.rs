//! The `skystream` command: broker setup, simulator, pipeline, query service,
//! historical delay analysis and an all-in-one demo.
//!
//! Commands print their results to stdout as `key=value` lines and log to
//! stderr. Exit codes: 0 success, 1 failure, 2 configuration, 3 storage,
//! 4 network.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod demo;
pub mod pipeline;
pub mod serve;
pub mod simulate;

use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use skystream_core::eventlog::{EventLog, LogError, Topic};
use skystream_core::histbatch::HistError;
use skystream_core::index::IndexError;
use skystream_core::simsource::SimError;
use skystream_core::stream::StreamError;
use thiserror::Error;

pub use config::{resolve, ConfigError, Layers, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("storage: {0}")]
    Storage(String),
    #[error("network: {0}")]
    Network(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Storage(_) => 3,
            CliError::Network(_) => 4,
        }
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> CliError {
        match e {
            LogError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Storage(other.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> CliError {
        match e {
            IndexError::Io(_) | IndexError::CorruptSnapshot(_) | IndexError::NoSnapshotDir => {
                CliError::Storage(e.to_string())
            }
            IndexError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> CliError {
        match e {
            StreamError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            StreamError::Log(e) => e.into(),
            StreamError::Index(e) => e.into(),
            StreamError::InjectedCrash(_) => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        match e {
            SimError::Http(m) => CliError::Network(m),
            SimError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<HistError> for CliError {
    fn from(e: HistError) -> CliError {
        match e {
            HistError::Io(_) => CliError::Storage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

/// Ordered `key=value` result lines. A report may carry a failed check, in
/// which case it is still printed and the command exits 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<(String, String)>,
    pub failure: Option<String>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Report {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (k, v) in &self.lines {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Opens the configured topic, creating it on first use.
pub fn open_topic(log: &EventLog, cfg: &RunConfig) -> Result<(Arc<Topic>, bool), CliError> {
    let wanted = cfg.topic_config();
    match log.topic(&wanted.name) {
        Ok(t) => {
            if t.partition_count() != wanted.partitions {
                log::warn!(
                    "topic {} has {} partitions, config asks for {}; keeping the existing layout",
                    wanted.name,
                    t.partition_count(),
                    wanted.partitions
                );
            }
            Ok((t, false))
        }
        Err(LogError::UnknownTopic(_)) => Ok((log.create_topic(wanted)?, true)),
        Err(e) => Err(e.into()),
    }
}

pub fn open_log(data_dir: &Path) -> Result<Arc<EventLog>, CliError> {
    Ok(Arc::new(EventLog::open(data_dir)?))
}

/// `broker-init`: creates the data directory and the topic.
pub fn broker_init(cfg: &RunConfig) -> Result<Report, CliError> {
    let log = open_log(&cfg.data_dir)?;
    let (topic, created) = open_topic(&log, cfg)?;
    let mut r = Report::default();
    r.push("topic", topic.name())
        .push("partitions", topic.partition_count())
        .push("created", created)
        .push("data_dir", cfg.data_dir.display());
    Ok(r)
}

/// Nearest-rank percentile of unsorted samples; 0 for none.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}
