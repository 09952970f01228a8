//! Consumer-group offset store: one small file per group, replaced atomically.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::LogError;

const HEADER: &str = "skystream-offsets v1";

type Offsets = BTreeMap<(String, u32), u64>;

#[derive(Debug)]
pub(crate) struct GroupStore {
    dir: PathBuf,
    groups: Mutex<HashMap<String, Arc<Mutex<Offsets>>>>,
}

impl GroupStore {
    pub(crate) fn open(dir: PathBuf) -> Result<GroupStore, LogError> {
        fs::create_dir_all(&dir)?;
        Ok(GroupStore { dir, groups: Mutex::new(HashMap::new()) })
    }

    fn path(&self, group: &str) -> PathBuf {
        self.dir.join(format!("{group}.offsets"))
    }

    /// Creates the group's file if needed and loads its committed offsets.
    pub(crate) fn register(&self, group: &str) -> Result<(), LogError> {
        let mut groups = self.groups.lock().unwrap();
        if groups.contains_key(group) {
            return Ok(());
        }
        let path = self.path(group);
        let offsets = if path.exists() { read_offsets(&path)? } else { Offsets::new() };
        if !path.exists() {
            write_atomic(&self.dir, &path, &offsets)?;
        }
        groups.insert(group.to_string(), Arc::new(Mutex::new(offsets)));
        Ok(())
    }

    fn handle(&self, group: &str) -> Result<Arc<Mutex<Offsets>>, LogError> {
        if let Some(h) = self.groups.lock().unwrap().get(group) {
            return Ok(h.clone());
        }
        // registered by an earlier process
        if self.path(group).exists() {
            self.register(group)?;
            return Ok(self.groups.lock().unwrap()[group].clone());
        }
        Err(LogError::UnknownGroup(group.to_string()))
    }

    pub(crate) fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, LogError> {
        let h = self.handle(group)?;
        let offsets = h.lock().unwrap();
        Ok(offsets.get(&(topic.to_string(), partition)).copied().unwrap_or(0))
    }

    /// Commits several partitions of one topic in a single atomic file replace.
    /// `check` validates each requested offset against the partition.
    pub(crate) fn commit(
        &self,
        group: &str,
        topic: &str,
        entries: &[(u32, u64)],
        check: impl Fn(u32, u64) -> Result<(), LogError>,
    ) -> Result<(), LogError> {
        let h = self.handle(group)?;
        let mut offsets = h.lock().unwrap();
        let mut next = offsets.clone();
        for &(partition, offset) in entries {
            check(partition, offset)?;
            let key = (topic.to_string(), partition);
            let current = next.get(&key).copied().unwrap_or(0);
            if offset < current {
                return Err(LogError::RegressingCommit { committed: current, requested: offset });
            }
            next.insert(key, offset);
        }
        if next != *offsets {
            write_atomic(&self.dir, &self.path(group), &next)?;
            *offsets = next;
        }
        Ok(())
    }
}

fn read_offsets(path: &Path) -> Result<Offsets, LogError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(LogError::CorruptGroupFile(path.display().to_string()));
    }
    let mut out = Offsets::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cols = line.split('\t');
        let parsed = (|| {
            let topic = cols.next()?.to_string();
            let partition = cols.next()?.parse().ok()?;
            let offset = cols.next()?.parse().ok()?;
            Some(((topic, partition), offset))
        })();
        match parsed {
            // last entry for a key wins
            Some((k, v)) => {
                out.insert(k, v);
            }
            None => return Err(LogError::CorruptGroupFile(path.display().to_string())),
        }
    }
    Ok(out)
}

fn write_atomic(dir: &Path, path: &Path, offsets: &Offsets) -> Result<(), LogError> {
    let mut body = String::from(HEADER);
    body.push('\n');
    for ((topic, partition), offset) in offsets {
        body.push_str(&format!("{topic}\t{partition}\t{offset}\n"));
    }
    let tmp = path.with_extension("offsets.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
