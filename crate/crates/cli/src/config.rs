//! Run configuration.
//!
//! Every value has a default. A TOML file (`--config` or `SKYSTREAM_CONFIG`)
//! overrides defaults, `SKYSTREAM_<SECTION>_<KEY>` environment variables
//! override the file, and command-line flags override everything. Unknown keys
//! in the file or in `--set` are errors; unknown `SKYSTREAM_` variables are
//! ignored with a warning.

use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use skystream_core::api::dataset_path;
use skystream_core::eventlog::{FlushPolicy, RetentionPolicy, TopicConfig};
use skystream_core::model::EventTime;
use skystream_core::simsource::SimConfig;
use skystream_core::stream::StreamConfig;
use thiserror::Error;
use toml::Value;

/// Prefix of configuration environment variables.
pub const ENV_PREFIX: &str = "SKYSTREAM_";

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "SKYSTREAM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config file {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot use {value:?} as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("malformed override {0:?}, expected section.key=value")]
    MalformedOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root for the log, index snapshots, metrics and delay summaries.
    pub data_dir: PathBuf,
    /// One of off, error, warn, info, debug, trace.
    pub log_level: String,
    pub topic: TopicSection,
    pub pipeline: PipelineSection,
    pub sim: SimSection,
    pub api: ApiSection,
    pub analyze: AnalyzeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("./skystream-data"),
            log_level: "info".into(),
            topic: TopicSection::default(),
            pipeline: PipelineSection::default(),
            sim: SimSection::default(),
            api: ApiSection::default(),
            analyze: AnalyzeSection::default(),
        }
    }
}

/// Broker settings for the topic named by `pipeline.topic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSection {
    pub partitions: u32,
    pub segment_max_bytes: u64,
    /// 0 keeps records regardless of age.
    pub retention_max_age_seconds: u64,
    /// 0 keeps records regardless of size.
    pub retention_max_bytes: u64,
    /// Records buffered per partition before a write-out; 1 writes every record.
    pub flush_every_records: u64,
    pub fsync: bool,
}

impl Default for TopicSection {
    fn default() -> Self {
        TopicSection {
            partitions: 4,
            segment_max_bytes: 64 * 1024 * 1024,
            retention_max_age_seconds: 0,
            retention_max_bytes: 0,
            flush_every_records: 1,
            fsync: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    #[serde(flatten)]
    pub stream: StreamConfig,
    /// Minimum wall time between index snapshots; offsets are committed only
    /// at snapshots.
    pub checkpoint_seconds: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection { stream: StreamConfig::default(), checkpoint_seconds: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// `sim` (deterministic simulator) or `api` (poll `api_url`).
    pub source: String,
    pub seed: u64,
    pub flights: u64,
    pub tick_seconds: u64,
    /// Unix seconds of the first tick.
    pub start_time: u64,
    /// Simulated seconds to generate, or wall seconds to poll the API.
    pub duration_seconds: u64,
    /// Simulated seconds per wall second; 0 produces as fast as possible.
    pub speed: f64,
    pub api_url: String,
    /// Sent as a bearer token when non-empty.
    pub api_key: String,
    pub poll_seconds: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        SimSection {
            source: "sim".into(),
            seed: sim.seed,
            flights: sim.flight_count as u64,
            tick_seconds: sim.tick_seconds,
            start_time: sim.start_time.0,
            duration_seconds: 3600,
            speed: 0.0,
            api_url: String::new(),
            api_key: String::new(),
            poll_seconds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub bind: String,
    pub cors: bool,
    /// How often `serve` checks for newer index snapshots.
    pub reload_seconds: u64,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection { bind: "127.0.0.1:8080".into(), cors: true, reload_seconds: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Dataset id the summary is exported under.
    pub dataset: String,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { dataset: skystream_core::api::DEFAULT_DATASET.into() }
    }
}

const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !LOG_LEVELS.contains(&self.log_level.as_str()) {
            return bad(format!("log_level must be one of {}", LOG_LEVELS.join(", ")));
        }
        self.topic_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline.stream.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.pipeline.checkpoint_seconds == 0 {
            return bad("pipeline.checkpoint_seconds must be > 0".into());
        }
        self.sim_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.sim.source.as_str() {
            "sim" => {}
            "api" if self.sim.api_url.is_empty() => return bad("sim.source = \"api\" needs sim.api_url".into()),
            "api" if self.sim.poll_seconds == 0 => return bad("sim.poll_seconds must be > 0".into()),
            "api" => {}
            other => return bad(format!("sim.source must be \"sim\" or \"api\", got {other:?}")),
        }
        if !(self.sim.speed.is_finite() && self.sim.speed >= 0.0) {
            return bad("sim.speed must be a finite number >= 0".into());
        }
        if self.api.bind.parse::<SocketAddr>().is_err() {
            return bad(format!("api.bind {:?} is not host:port", self.api.bind));
        }
        if self.api.reload_seconds == 0 {
            return bad("api.reload_seconds must be > 0".into());
        }
        dataset_path(std::path::Path::new(""), &self.analyze.dataset).map_err(|e| ConfigError::Invalid(e.message))?;
        Ok(())
    }

    pub fn topic_config(&self) -> TopicConfig {
        let t = &self.topic;
        let nonzero = |v: u64| (v > 0).then_some(v);
        TopicConfig {
            name: self.pipeline.stream.topic.clone(),
            partitions: t.partitions,
            replication_factor: 1,
            retention: RetentionPolicy {
                max_age_seconds: nonzero(t.retention_max_age_seconds),
                max_bytes_per_partition: nonzero(t.retention_max_bytes),
            },
            segment_max_bytes: t.segment_max_bytes,
            flush: match t.flush_every_records {
                0 | 1 => FlushPolicy::EveryRecord,
                n => FlushPolicy::EveryRecords(n),
            },
            fsync: t.fsync,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.sim.seed,
            flight_count: self.sim.flights as usize,
            tick_seconds: self.sim.tick_seconds,
            start_time: EventTime(self.sim.start_time),
        }
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Configuration sources in increasing precedence.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    /// `(origin, text)` of a TOML file.
    pub file: Option<(String, String)>,
    /// Environment variables; only `SKYSTREAM_*` ones are considered.
    pub env: Vec<(String, String)>,
    /// `section.key` overrides from the command line, applied in order.
    pub flags: Vec<(String, String)>,
}

impl Layers {
    /// Reads the config file named by `config_flag`, else by `SKYSTREAM_CONFIG`.
    pub fn load(config_flag: Option<&std::path::Path>, env: Vec<(String, String)>, flags: Vec<(String, String)>) -> Result<Layers, ConfigError> {
        let path = config_flag
            .map(PathBuf::from)
            .or_else(|| env.iter().find(|(k, _)| k == CONFIG_ENV).map(|(_, v)| PathBuf::from(v)));
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
                Some((p.display().to_string(), text))
            }
            None => None,
        };
        Ok(Layers { file, env, flags })
    }
}

/// Splits `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(ConfigError::MalformedOverride(s.to_string())),
    }
}

/// Merges the layers over the defaults and validates the result.
pub fn resolve(layers: &Layers) -> Result<RunConfig, ConfigError> {
    let mut root = Value::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some((origin, text)) = &layers.file {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.clone(),
            msg: e.message().to_string(),
        })?;
        merge(&mut root, Value::Table(table), "")?;
    }
    let leaves = leaf_paths(&root);
    for (name, value) in &layers.env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        if name == CONFIG_ENV {
            continue;
        }
        match leaves.iter().find(|p| p.join("_").to_uppercase() == rest) {
            Some(path) => set_leaf(&mut root, path, value)?,
            None => log::warn!("ignoring unknown environment variable {name}"),
        }
    }
    for (key, value) in &layers.flags {
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        if !leaves.contains(&path) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        set_leaf(&mut root, &path, value)?;
    }
    let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn leaf_paths(v: &Value) -> Vec<Vec<String>> {
    let mut out = vec![];
    fn walk(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        match v {
            Value::Table(t) => {
                for (k, child) in t {
                    prefix.push(k.clone());
                    walk(child, prefix, out);
                    prefix.pop();
                }
            }
            _ => out.push(prefix.clone()),
        }
    }
    walk(v, &mut vec![], &mut out);
    out
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

/// Overlays `new` on `base`, requiring every key to exist with a compatible type.
fn merge(base: &mut Value, new: Value, prefix: &str) -> Result<(), ConfigError> {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match (base, new) {
        (Value::Table(b), Value::Table(n)) => {
            for (k, v) in n {
                let key = join(&k);
                let slot = b.get_mut(&k).ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (slot @ Value::Float(_), Value::Integer(i)) => {
            *slot = Value::Float(i as f64);
            Ok(())
        }
        (slot, v) if std::mem::discriminant(slot) == std::mem::discriminant(&v) && !v.is_table() => {
            *slot = v;
            Ok(())
        }
        (slot, v) => Err(ConfigError::BadValue { key: prefix.to_string(), value: v.to_string(), expected: type_name(slot) }),
    }
}

/// Parses a raw string as the type of the existing leaf and stores it.
fn set_leaf(root: &mut Value, path: &[String], raw: &str) -> Result<(), ConfigError> {
    let key = path.join(".");
    let mut slot = root;
    for part in path {
        slot = slot.get_mut(part.as_str()).ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
    }
    let bad = |expected| ConfigError::BadValue { key: key.clone(), value: raw.to_string(), expected };
    let t = raw.trim();
    *slot = match slot {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Integer(_) => Value::Integer(t.parse().map_err(|_| bad("an integer"))?),
        Value::Float(_) => Value::Float(t.parse().map_err(|_| bad("a number"))?),
        Value::Boolean(_) => Value::Boolean(match t.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => true,
            "false" | "0" | "no" | "off" => false,
            _ => return Err(bad("a boolean")),
        }),
        other => return Err(bad(type_name(other))),
    };
    Ok(())
}
