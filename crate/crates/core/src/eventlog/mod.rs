//! Embedded partitioned commit log.
//!
//! A topic has a fixed number of partitions; each partition is a directory of
//! segment files `<data_dir>/<topic>/<partition>/<base_offset>.seg` holding
//! CRC-checked frames (see [`frame`]). Offsets are dense per partition.
//! Keyed records go to `fnv1a64(key) % partitions`; unkeyed records rotate
//! round-robin per producer handle. Consumer groups persist the next offset to
//! read per partition in `<data_dir>/_groups/<group_id>.offsets`.
//!
//! Single node: `replication_factor` is validated and stored but no copies
//! are made.

pub mod frame;
mod groups;
mod partition;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EventTime;
pub use frame::LogRecord;
use groups::GroupStore;
use partition::Partition;
pub use partition::SegmentInfo;

const TOPIC_META: &str = "topic.json";
const GROUPS_DIR: &str = "_groups";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("topic `{0}` already exists")]
    TopicExists(String),
    #[error("invalid topic config: {0}")]
    InvalidConfig(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` has no partition {partition}")]
    UnknownPartition { topic: String, partition: u32 },
    #[error("record of {size} bytes exceeds segment_max_bytes {max}")]
    RecordTooLarge { size: usize, max: u64 },
    #[error("record value must not be empty")]
    EmptyValue,
    #[error("offset {requested} is below the retention floor {floor}")]
    OffsetOutOfRange { requested: u64, floor: u64 },
    #[error("corrupt record in partition {partition} at offset {offset}")]
    CorruptRecord { partition: u32, offset: u64 },
    #[error("unknown consumer group `{0}`")]
    UnknownGroup(String),
    #[error("invalid consumer group id `{0}`")]
    InvalidGroupId(String),
    #[error("commit {requested} is behind committed offset {committed}")]
    RegressingCommit { committed: u64, requested: u64 },
    #[error("commit {requested} is past the high watermark {high_watermark}")]
    CommitBeyondHighWatermark { requested: u64, high_watermark: u64 },
    #[error("corrupt consumer group file {0}")]
    CorruptGroupFile(String),
    #[error("corrupt topic metadata {0}")]
    CorruptTopicMeta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushPolicy {
    #[default]
    EveryRecord,
    EveryRecords(u64),
    IntervalMs(u64),
}

/// `None` means unlimited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub max_age_seconds: Option<u64>,
    pub max_bytes_per_partition: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    pub name: String,
    pub partitions: u32,
    pub replication_factor: u32,
    pub retention: RetentionPolicy,
    pub segment_max_bytes: u64,
    pub flush: FlushPolicy,
    /// fsync after each flush, not just write to the OS.
    pub fsync: bool,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            name: "flights".into(),
            partitions: 4,
            replication_factor: 1,
            retention: RetentionPolicy { max_age_seconds: Some(24 * 3600), max_bytes_per_partition: None },
            segment_max_bytes: 64 * 1024 * 1024,
            flush: FlushPolicy::EveryRecord,
            fsync: false,
        }
    }
}

impl TopicConfig {
    pub fn new(name: impl Into<String>, partitions: u32) -> TopicConfig {
        TopicConfig { name: name.into(), partitions, ..TopicConfig::default() }
    }

    pub fn validate(&self) -> Result<(), LogError> {
        if !valid_name(&self.name) {
            return Err(LogError::InvalidConfig(format!("bad topic name `{}`", self.name)));
        }
        if self.partitions == 0 {
            return Err(LogError::InvalidConfig("partitions must be >= 1".into()));
        }
        if self.replication_factor == 0 {
            return Err(LogError::InvalidConfig("replication_factor must be >= 1".into()));
        }
        if self.segment_max_bytes == 0 {
            return Err(LogError::InvalidConfig("segment_max_bytes must be > 0".into()));
        }
        if matches!(self.flush, FlushPolicy::EveryRecords(0)) {
            return Err(LogError::InvalidConfig("flush every 0 records".into()));
        }
        Ok(())
    }
}

/// Names used as directory or file names: ASCII alphanumerics, `.`, `_`, `-`;
/// no leading `_` (reserved) or `.`.
fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 200
        && !name.starts_with('_')
        && !name.starts_with('.')
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET_BASIS, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Partition for a record. `round_robin` is the caller's rotation counter,
/// advanced only for unkeyed records.
pub fn assign_partition(key: Option<&[u8]>, partitions: u32, round_robin: &mut u64) -> u32 {
    assert!(partitions >= 1);
    match key {
        Some(k) => (fnv1a64(k) % partitions as u64) as u32,
        None => {
            let p = (*round_robin % partitions as u64) as u32;
            *round_robin = round_robin.wrapping_add(1);
            p
        }
    }
}

#[derive(Debug)]
pub struct Topic {
    cfg: Arc<TopicConfig>,
    partitions: Vec<Partition>,
    round_robin: std::sync::Mutex<u64>,
}

impl Topic {
    fn open(dir: &Path, cfg: TopicConfig) -> Result<Topic, LogError> {
        let cfg = Arc::new(cfg);
        let partitions = (0..cfg.partitions)
            .map(|p| Partition::open(dir.join(p.to_string()), p, cfg.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Topic { cfg, partitions, round_robin: std::sync::Mutex::new(0) })
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn config(&self) -> &TopicConfig {
        &self.cfg
    }

    pub fn partition_count(&self) -> u32 {
        self.partitions.len() as u32
    }

    fn partition(&self, p: u32) -> Result<&Partition, LogError> {
        self.partitions
            .get(p as usize)
            .ok_or_else(|| LogError::UnknownPartition { topic: self.cfg.name.clone(), partition: p })
    }

    /// Appends one record, choosing the partition from the key (or the topic's
    /// shared rotation when unkeyed). Returns `(partition, offset)`.
    pub fn produce(&self, key: Option<&[u8]>, value: &[u8], timestamp: EventTime) -> Result<(u32, u64), LogError> {
        let p = {
            let mut rr = self.round_robin.lock().unwrap();
            assign_partition(key, self.partition_count(), &mut rr)
        };
        self.produce_to(p, key, value, timestamp)
    }

    pub fn produce_to(
        &self,
        partition: u32,
        key: Option<&[u8]>,
        value: &[u8],
        timestamp: EventTime,
    ) -> Result<(u32, u64), LogError> {
        if value.is_empty() {
            return Err(LogError::EmptyValue);
        }
        let offset = self.partition(partition)?.append(key, value, timestamp)?;
        Ok((partition, offset))
    }

    /// Records in `[from_offset, min(high_watermark, from_offset + max_records))`.
    pub fn fetch(&self, partition: u32, from_offset: u64, max_records: usize) -> Result<Vec<LogRecord>, LogError> {
        self.partition(partition)?.fetch(from_offset, max_records)
    }

    pub fn high_watermark(&self, partition: u32) -> Result<u64, LogError> {
        Ok(self.partition(partition)?.high_watermark())
    }

    pub fn high_watermarks(&self) -> Vec<u64> {
        self.partitions.iter().map(Partition::high_watermark).collect()
    }

    /// Lowest offset still readable (the retention floor).
    pub fn log_start_offset(&self, partition: u32) -> Result<u64, LogError> {
        Ok(self.partition(partition)?.log_start_offset())
    }

    pub fn segment_infos(&self, partition: u32) -> Result<Vec<SegmentInfo>, LogError> {
        Ok(self.partition(partition)?.segment_infos())
    }

    /// Publishes buffered appends (relevant for non-default flush policies).
    pub fn flush(&self) -> Result<(), LogError> {
        self.partitions.iter().try_for_each(Partition::flush)
    }

    /// Applies the retention policy against the wall clock.
    pub fn enforce_retention(&self) -> Result<u64, LogError> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.enforce_retention_at(EventTime(now))
    }

    /// Applies the retention policy as of `now`; returns the number of purged records.
    pub fn enforce_retention_at(&self, now: EventTime) -> Result<u64, LogError> {
        let mut purged = 0;
        for p in &self.partitions {
            purged += p.enforce_retention(now)?;
        }
        Ok(purged)
    }

    /// Re-reads every partition from disk, truncating torn tails.
    /// Returns the high watermarks.
    pub fn recover(&self) -> Result<Vec<u64>, LogError> {
        self.partitions.iter().map(Partition::recover).collect()
    }
}

/// A producer handle with its own round-robin rotation for unkeyed records.
#[derive(Debug, Clone)]
pub struct Producer {
    topic: Arc<Topic>,
    round_robin: u64,
}

impl Producer {
    pub fn new(topic: Arc<Topic>) -> Producer {
        Producer { topic, round_robin: 0 }
    }

    pub fn topic(&self) -> &Arc<Topic> {
        &self.topic
    }

    pub fn send(&mut self, key: Option<&[u8]>, value: &[u8], timestamp: EventTime) -> Result<(u32, u64), LogError> {
        let p = assign_partition(key, self.topic.partition_count(), &mut self.round_robin);
        self.topic.produce_to(p, key, value, timestamp)
    }
}

/// A log rooted at one data directory.
#[derive(Debug)]
pub struct EventLog {
    data_dir: PathBuf,
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    groups: GroupStore,
}

impl EventLog {
    /// Opens the data directory, loading and recovering every existing topic.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<EventLog, LogError> {
        let data_dir = data_dir.as_ref().to_path_buf();
        fs::create_dir_all(&data_dir)?;
        let mut topics = BTreeMap::new();
        for entry in fs::read_dir(&data_dir)? {
            let entry = entry?;
            let meta = entry.path().join(TOPIC_META);
            if !entry.file_type()?.is_dir() || !meta.exists() {
                continue;
            }
            let text = fs::read_to_string(&meta)?;
            let cfg: TopicConfig =
                serde_json::from_str(&text).map_err(|_| LogError::CorruptTopicMeta(meta.display().to_string()))?;
            let topic = Topic::open(&entry.path(), cfg)?;
            topics.insert(topic.name().to_string(), Arc::new(topic));
        }
        let groups = GroupStore::open(data_dir.join(GROUPS_DIR))?;
        Ok(EventLog { data_dir, topics: RwLock::new(topics), groups })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn create_topic(&self, cfg: TopicConfig) -> Result<Arc<Topic>, LogError> {
        cfg.validate()?;
        let mut topics = self.topics.write().unwrap();
        let dir = self.data_dir.join(&cfg.name);
        if topics.contains_key(&cfg.name) || dir.join(TOPIC_META).exists() {
            return Err(LogError::TopicExists(cfg.name));
        }
        fs::create_dir_all(&dir)?;
        let topic = Arc::new(Topic::open(&dir, cfg.clone())?);
        let tmp = dir.join("topic.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&cfg).expect("config serializes"))?;
        fs::rename(&tmp, dir.join(TOPIC_META))?;
        topics.insert(cfg.name.clone(), topic.clone());
        Ok(topic)
    }

    pub fn topic(&self, name: &str) -> Result<Arc<Topic>, LogError> {
        self.topics.read().unwrap().get(name).cloned().ok_or_else(|| LogError::UnknownTopic(name.to_string()))
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.read().unwrap().keys().cloned().collect()
    }

    pub fn produce(
        &self,
        topic: &str,
        key: Option<&[u8]>,
        value: &[u8],
        timestamp: EventTime,
    ) -> Result<(u32, u64), LogError> {
        self.topic(topic)?.produce(key, value, timestamp)
    }

    pub fn fetch(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: usize,
    ) -> Result<Vec<LogRecord>, LogError> {
        self.topic(topic)?.fetch(partition, from_offset, max_records)
    }

    pub fn register_group(&self, group: &str) -> Result<(), LogError> {
        if !valid_name(group) {
            return Err(LogError::InvalidGroupId(group.to_string()));
        }
        self.groups.register(group)
    }

    /// Next offset to read for the group; 0 if nothing was committed.
    pub fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, LogError> {
        self.topic(topic)?.partition(partition)?;
        self.groups.committed(group, topic, partition)
    }

    pub fn commit(&self, group: &str, topic: &str, partition: u32, offset: u64) -> Result<(), LogError> {
        self.commit_all(group, topic, &[(partition, offset)])
    }

    /// Commits several partitions at once (one durable write).
    pub fn commit_all(&self, group: &str, topic: &str, entries: &[(u32, u64)]) -> Result<(), LogError> {
        let t = self.topic(topic)?;
        self.groups.commit(group, topic, entries, |p, offset| {
            let high_watermark = t.high_watermark(p)?;
            if offset > high_watermark {
                return Err(LogError::CommitBeyondHighWatermark { requested: offset, high_watermark });
            }
            Ok(())
        })
    }

    pub fn enforce_retention(&self, topic: &str) -> Result<u64, LogError> {
        self.topic(topic)?.enforce_retention()
    }

    pub fn recover(&self, topic: &str) -> Result<Vec<u64>, LogError> {
        self.topic(topic)?.recover()
    }
}
