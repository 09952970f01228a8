//! One partition: an ordered list of segment files, the last one active.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use super::frame::{self, Decoded, LogRecord};
use super::{FlushPolicy, LogError, TopicConfig};
use crate::model::EventTime;

pub(crate) const SEGMENT_SUFFIX: &str = ".seg";

pub(crate) fn segment_file_name(base_offset: u64) -> String {
    format!("{base_offset:020}{SEGMENT_SUFFIX}")
}

#[derive(Debug)]
struct Segment {
    base_offset: u64,
    path: PathBuf,
    file: Arc<File>,
    /// File position of every readable record, indexed by `offset - base_offset`.
    positions: Vec<u64>,
    /// Readable bytes (excludes unflushed appends).
    size: u64,
    max_timestamp: Option<EventTime>,
}

impl Segment {
    fn end_offset(&self) -> u64 {
        self.base_offset + self.positions.len() as u64
    }
}

/// Metadata view of a segment, as used by retention decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentInfo {
    pub base_offset: u64,
    pub record_count: u64,
    pub size_bytes: u64,
    pub max_timestamp: Option<EventTime>,
}

#[derive(Debug, Default)]
struct ReadState {
    segments: Vec<Segment>,
    high_watermark: u64,
}

#[derive(Debug)]
struct Writer {
    file: File,
    next_offset: u64,
    /// Bytes in the active segment including the pending buffer.
    active_size: u64,
    buf: Vec<u8>,
    pending: Vec<(u64, EventTime)>,
    last_flush: Instant,
}

#[derive(Debug)]
pub(crate) struct Partition {
    pub(crate) id: u32,
    dir: PathBuf,
    cfg: Arc<TopicConfig>,
    writer: Mutex<Writer>,
    state: RwLock<ReadState>,
}

/// Outcome of scanning one segment file.
struct Scan {
    positions: Vec<u64>,
    valid_len: u64,
    file_len: u64,
    max_timestamp: Option<EventTime>,
}

fn scan_segment(path: &Path, base_offset: u64) -> Result<Scan, LogError> {
    let data = fs::read(path)?;
    let mut positions = Vec::new();
    let mut pos = 0usize;
    let mut max_timestamp = None;
    while pos < data.len() {
        match frame::decode(&data[pos..]) {
            Decoded::Record(rec, n) if rec.offset == base_offset + positions.len() as u64 => {
                positions.push(pos as u64);
                max_timestamp = max_timestamp.max(Some(rec.timestamp));
                pos += n;
            }
            _ => break,
        }
    }
    Ok(Scan { positions, valid_len: pos as u64, file_len: data.len() as u64, max_timestamp })
}

fn open_append(path: &Path) -> Result<File, LogError> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl Partition {
    /// Opens (or creates) the partition directory, recovering from any torn tail.
    pub(crate) fn open(dir: PathBuf, id: u32, cfg: Arc<TopicConfig>) -> Result<Partition, LogError> {
        let (state, writer) = Self::load(&dir)?;
        Ok(Partition { id, dir, cfg, writer: Mutex::new(writer), state: RwLock::new(state) })
    }

    fn load(dir: &Path) -> Result<(ReadState, Writer), LogError> {
        fs::create_dir_all(dir)?;
        let mut bases: Vec<u64> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(SEGMENT_SUFFIX)?.parse::<u64>().ok()
            })
            .collect();
        bases.sort_unstable();

        let mut segments: Vec<Segment> = Vec::new();
        let mut truncated = false;
        for base in bases {
            let path = dir.join(segment_file_name(base));
            if truncated {
                log::warn!("removing segment {} after a corrupt predecessor", path.display());
                fs::remove_file(&path)?;
                continue;
            }
            if let Some(prev) = segments.last() {
                if prev.end_offset() != base {
                    log::warn!("offset gap before {}; discarding it and later segments", path.display());
                    truncated = true;
                    fs::remove_file(&path)?;
                    continue;
                }
            }
            let scan = scan_segment(&path, base)?;
            if scan.valid_len < scan.file_len {
                log::warn!(
                    "truncating {} from {} to {} bytes at first invalid frame",
                    path.display(),
                    scan.file_len,
                    scan.valid_len
                );
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(scan.valid_len)?;
                f.sync_all()?;
                truncated = true;
            }
            segments.push(Segment {
                base_offset: base,
                file: Arc::new(File::open(&path)?),
                path,
                positions: scan.positions,
                size: scan.valid_len,
                max_timestamp: scan.max_timestamp,
            });
        }
        if segments.is_empty() {
            let path = dir.join(segment_file_name(0));
            File::create(&path)?.sync_all()?;
            sync_dir(dir);
            segments.push(Segment {
                base_offset: 0,
                file: Arc::new(File::open(&path)?),
                path,
                positions: Vec::new(),
                size: 0,
                max_timestamp: None,
            });
        }
        let active = segments.last().unwrap();
        let writer = Writer {
            file: open_append(&active.path)?,
            next_offset: active.end_offset(),
            active_size: active.size,
            buf: Vec::new(),
            pending: Vec::new(),
            last_flush: Instant::now(),
        };
        let high_watermark = active.end_offset();
        Ok((ReadState { segments, high_watermark }, writer))
    }

    /// Re-scans the on-disk segments, discarding unflushed appends.
    pub(crate) fn recover(&self) -> Result<u64, LogError> {
        let mut w = self.writer.lock().unwrap();
        let mut st = self.state.write().unwrap();
        let (state, writer) = Self::load(&self.dir)?;
        *st = state;
        *w = writer;
        Ok(st.high_watermark)
    }

    pub(crate) fn append(&self, key: Option<&[u8]>, value: &[u8], timestamp: EventTime) -> Result<u64, LogError> {
        let max = self.cfg.segment_max_bytes;
        if value.len() as u64 > max {
            return Err(LogError::RecordTooLarge { size: value.len(), max });
        }
        let len = frame::frame_len(key, value) as u64;
        let mut w = self.writer.lock().unwrap();
        if w.active_size > 0 && w.active_size + len > max {
            self.roll(&mut w)?;
        }
        let offset = w.next_offset;
        frame::encode_into(&mut w.buf, offset, timestamp, key, value);
        w.pending.push((offset, timestamp));
        w.next_offset += 1;
        w.active_size += len;
        let flush_now = match self.cfg.flush {
            FlushPolicy::EveryRecord => true,
            FlushPolicy::EveryRecords(n) => w.pending.len() as u64 >= n.max(1),
            FlushPolicy::IntervalMs(ms) => w.last_flush.elapsed().as_millis() as u64 >= ms,
        };
        if flush_now {
            self.flush_locked(&mut w)?;
        }
        Ok(offset)
    }

    pub(crate) fn flush(&self) -> Result<(), LogError> {
        let mut w = self.writer.lock().unwrap();
        self.flush_locked(&mut w)
    }

    /// Writes the pending buffer and publishes the new records to readers.
    fn flush_locked(&self, w: &mut Writer) -> Result<(), LogError> {
        w.last_flush = Instant::now();
        if w.pending.is_empty() {
            return Ok(());
        }
        // Only the writer grows the active segment, so its size is stable here.
        let base_size = self.state.read().unwrap().segments.last().unwrap().size;
        if let Err(e) = w.file.write_all(&w.buf) {
            // drop the partial write so the file ends on a frame boundary
            let _ = w.file.set_len(base_size);
            w.next_offset -= w.pending.len() as u64;
            w.active_size = base_size;
            w.buf.clear();
            w.pending.clear();
            return Err(e.into());
        }
        if self.cfg.fsync {
            w.file.sync_data()?;
        }
        let mut positions = Vec::with_capacity(w.pending.len());
        let mut pos = base_size;
        let mut i = 0usize;
        for _ in &w.pending {
            positions.push(pos);
            let len = u32::from_be_bytes(w.buf[i..i + 4].try_into().unwrap()) as u64 + 4;
            pos += len;
            i += len as usize;
        }
        let max_ts = w.pending.iter().map(|&(_, ts)| ts).max();
        {
            let mut st = self.state.write().unwrap();
            let seg = st.segments.last_mut().unwrap();
            seg.positions.extend_from_slice(&positions);
            seg.max_timestamp = seg.max_timestamp.max(max_ts);
            seg.size = pos;
            st.high_watermark = st.segments.last().unwrap().end_offset();
        }
        w.buf.clear();
        w.pending.clear();
        Ok(())
    }

    fn roll(&self, w: &mut Writer) -> Result<(), LogError> {
        self.flush_locked(w)?;
        if self.cfg.fsync {
            w.file.sync_all()?;
        }
        let base = w.next_offset;
        let path = self.dir.join(segment_file_name(base));
        let file = open_append(&path)?;
        sync_dir(&self.dir);
        let seg = Segment {
            base_offset: base,
            file: Arc::new(File::open(&path)?),
            path,
            positions: Vec::new(),
            size: 0,
            max_timestamp: None,
        };
        self.state.write().unwrap().segments.push(seg);
        w.file = file;
        w.active_size = 0;
        Ok(())
    }

    pub(crate) fn high_watermark(&self) -> u64 {
        self.state.read().unwrap().high_watermark
    }

    /// Lowest readable offset.
    pub(crate) fn log_start_offset(&self) -> u64 {
        self.state.read().unwrap().segments[0].base_offset
    }

    pub(crate) fn segment_infos(&self) -> Vec<SegmentInfo> {
        let st = self.state.read().unwrap();
        st.segments
            .iter()
            .map(|s| SegmentInfo {
                base_offset: s.base_offset,
                record_count: s.positions.len() as u64,
                size_bytes: s.size,
                max_timestamp: s.max_timestamp,
            })
            .collect()
    }

    pub(crate) fn fetch(&self, from_offset: u64, max_records: usize) -> Result<Vec<LogRecord>, LogError> {
        // Plan the reads under the lock, do the IO without it.
        let mut plan: Vec<(Arc<File>, u64, u64, u64)> = Vec::new();
        {
            let st = self.state.read().unwrap();
            let floor = st.segments[0].base_offset;
            if from_offset < floor {
                return Err(LogError::OffsetOutOfRange { requested: from_offset, floor });
            }
            let end = st.high_watermark.min(from_offset.saturating_add(max_records as u64));
            if from_offset >= end {
                return Ok(Vec::new());
            }
            let first = st.segments.partition_point(|s| s.base_offset <= from_offset) - 1;
            let mut next = from_offset;
            for seg in &st.segments[first..] {
                if next >= end {
                    break;
                }
                let stop = end.min(seg.end_offset());
                if stop <= next {
                    continue;
                }
                let start_pos = seg.positions[(next - seg.base_offset) as usize];
                let end_pos = if stop == seg.end_offset() {
                    seg.size
                } else {
                    seg.positions[(stop - seg.base_offset) as usize]
                };
                plan.push((seg.file.clone(), start_pos, end_pos, next));
                next = stop;
            }
        }

        let mut out = Vec::new();
        for (file, start, end, first_offset) in plan {
            let mut buf = vec![0u8; (end - start) as usize];
            file.read_exact_at(&mut buf, start)?;
            let mut pos = 0usize;
            let mut expected = first_offset;
            while pos < buf.len() {
                match frame::decode(&buf[pos..]) {
                    Decoded::Record(rec, n) if rec.offset == expected => {
                        out.push(rec);
                        pos += n;
                        expected += 1;
                    }
                    _ => return Err(LogError::CorruptRecord { partition: self.id, offset: expected }),
                }
            }
        }
        Ok(out)
    }

    /// Deletes sealed segments oldest-first while the oldest one violates the
    /// age limit or the partition exceeds its byte budget.
    pub(crate) fn enforce_retention(&self, now: EventTime) -> Result<u64, LogError> {
        let retention = self.cfg.retention;
        if retention.max_age_seconds.is_none() && retention.max_bytes_per_partition.is_none() {
            return Ok(0);
        }
        let removed: Vec<Segment> = {
            let mut st = self.state.write().unwrap();
            let mut total: u64 = st.segments.iter().map(|s| s.size).sum();
            let mut n = 0;
            while n + 1 < st.segments.len() {
                let seg = &st.segments[n];
                let too_old = match (retention.max_age_seconds, seg.max_timestamp) {
                    (Some(age), Some(ts)) => now.0.saturating_sub(ts.0) > age,
                    _ => false,
                };
                let too_big = retention.max_bytes_per_partition.is_some_and(|max| total > max);
                if !(too_old || too_big) {
                    break;
                }
                total -= seg.size;
                n += 1;
            }
            st.segments.drain(..n).collect()
        };
        let mut purged = 0;
        for seg in removed {
            purged += seg.positions.len() as u64;
            fs::remove_file(&seg.path)?;
        }
        Ok(purged)
    }
}

impl Drop for Partition {
    fn drop(&mut self) {
        if let Ok(mut w) = self.writer.lock() {
            if let Err(e) = self.flush_locked(&mut w) {
                log::error!("flush on close of partition {} failed: {e}", self.id);
            }
        }
    }
}
