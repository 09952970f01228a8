//! Schema-flexible document index with keyword/numeric/geo queries and exact
//! aggregations.
//!
//! Writes go to a pending buffer and become searchable on [`Index::refresh`]
//! (or immediately when `refresh_interval_seconds` is 0). A refresh seals the
//! pending documents into an immutable [`segment`], tombstones the versions
//! they replace and atomically publishes a new [`View`]. Readers keep using
//! the view they grabbed, so every search sees one consistent point in time.

pub mod agg;
pub mod query;
mod segment;
mod snapshot;
pub mod value;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

pub use agg::{AggResult, Aggregation, Bucket, BucketKey, Stats};
pub use query::{Bound, Query, Scalar};
pub use value::{document_from_json, document_to_json, normalize_keyword, Document, FieldType, FieldValue};

use segment::{Bits, Segment, StoredDoc};

/// Merge every segment into one once a refresh leaves more than this many.
const MAX_SEGMENTS: usize = 16;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("unknown index {0:?}")]
    UnknownIndex(String),
    #[error("index {0:?} already exists")]
    IndexExists(String),
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("field {field:?} is mapped as {existing}, got {attempted}")]
    MappingConflict { field: String, existing: FieldType, attempted: FieldType },
    #[error("invalid value for field {field:?}")]
    InvalidValue { field: String },
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("aggregation not supported on field {field:?} of type {found}")]
    TypeMismatch { field: String, found: FieldType },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("no snapshot directory configured")]
    NoSnapshotDir,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub name: String,
    /// 0 makes every write visible immediately.
    pub refresh_interval_seconds: u64,
    /// Geohash length of the geo postings.
    pub geo_precision: usize,
}

impl IndexConfig {
    pub fn new(name: &str) -> IndexConfig {
        IndexConfig { name: name.into(), refresh_interval_seconds: 1, geo_precision: 4 }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        let ok_name = !self.name.is_empty()
            && !self.name.starts_with(['_', '.'])
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
        if !ok_name {
            return Err(IndexError::InvalidConfig(format!("invalid index name {:?}", self.name)));
        }
        if !(1..=crate::geohash::MAX_PRECISION).contains(&self.geo_precision) {
            return Err(IndexError::InvalidConfig("geo_precision must be within 1..=12".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub version: u64,
    pub source: Document,
}

impl Hit {
    pub fn to_json(&self) -> Value {
        serde_json::json!({ "id": self.id, "version": self.version, "source": document_to_json(&self.source) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub total: u64,
    pub hits: Vec<Hit>,
}

/// A published, immutable point-in-time view of an index.
#[derive(Debug)]
pub struct View {
    segments: Vec<Arc<Segment>>,
    live: Vec<Arc<Bits>>,
    mapping: Arc<BTreeMap<String, FieldType>>,
    doc_count: usize,
}

type DocRef<'a> = &'a StoredDoc;

impl View {
    fn empty() -> View {
        View { segments: vec![], live: vec![], mapping: Arc::default(), doc_count: 0 }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn mapping(&self) -> &BTreeMap<String, FieldType> {
        &self.mapping
    }

    fn matching<'a>(&'a self, q: &'a Query) -> impl Iterator<Item = DocRef<'a>> + 'a {
        self.segments.iter().zip(&self.live).flat_map(move |(seg, live)| {
            let mut m = seg.eval(q);
            m.and(live);
            let docs = &seg.docs;
            m.iter().collect::<Vec<_>>().into_iter().map(move |o| &docs[o])
        })
    }

    pub fn count(&self, q: &Query) -> u64 {
        self.segments
            .iter()
            .zip(&self.live)
            .map(|(seg, live)| {
                let mut m = seg.eval(q);
                m.and(live);
                m.count() as u64
            })
            .sum()
    }

    /// Hits ordered by `sort` (missing values last, ties by id) or by id.
    pub fn search(&self, q: &Query, size: usize, sort: Option<(&str, SortOrder)>) -> SearchResult {
        let mut docs: Vec<DocRef<'_>> = self.matching(q).collect();
        let total = docs.len() as u64;
        let by_id = |a: &DocRef<'_>, b: &DocRef<'_>| a.id.cmp(&b.id);
        match sort {
            None => docs.sort_unstable_by(by_id),
            Some((field, order)) => docs.sort_unstable_by(|a, b| {
                let (va, vb) = (a.fields.get(field), b.fields.get(field));
                sort_key_cmp(va, vb, order).then_with(|| by_id(a, b))
            }),
        }
        docs.truncate(size);
        let hits = docs.into_iter().map(|d| Hit { id: d.id.clone(), version: d.version, source: d.fields.clone() }).collect();
        SearchResult { total, hits }
    }

    pub fn aggregate(&self, filter: &Query, agg: &Aggregation) -> Result<AggResult, IndexError> {
        agg.validate()?;
        agg.check_type(self.mapping.get(agg.field()).copied())?;
        let field = agg.field();
        Ok(agg.compute(self.matching(filter).filter_map(|d| d.fields.get(field))))
    }

    /// Latest visible version of a document. Segment docs are sorted by id.
    pub fn get(&self, id: &str) -> Option<Hit> {
        self.segments.iter().zip(&self.live).find_map(|(seg, live)| {
            let o = seg.docs.binary_search_by(|d| d.id.as_str().cmp(id)).ok()?;
            let d = &seg.docs[o];
            live.get(o).then(|| Hit { id: d.id.clone(), version: d.version, source: d.fields.clone() })
        })
    }

    /// For each distinct string value of `group`, the live doc with the
    /// largest `time` (ties by id), kept only when it also matches `filter`.
    /// Ordered by group value. Also returns the largest `time` in the view.
    pub fn latest_per(&self, group: &str, time: &str, filter: &Query) -> (Vec<Hit>, Option<f64>) {
        let key = |d: DocRef<'_>| d.fields.get(time).and_then(FieldValue::as_f64);
        let mut best: HashMap<&str, DocRef<'_>> = HashMap::new();
        let mut newest: Option<f64> = None;
        for d in self.matching(&Query::MatchAll) {
            let Some(FieldValue::Str(g)) = d.fields.get(group) else { continue };
            let t = key(d);
            if let Some(t) = t {
                newest = Some(newest.map_or(t, |n| n.max(t)));
            }
            let e = best.entry(g.as_str()).or_insert(d);
            let cur = key(e);
            if t.partial_cmp(&cur).is_some_and(|o| o.is_gt()) || (t == cur && d.id > e.id) {
                *e = d;
            }
        }
        let keep: HashSet<&str> = match filter {
            Query::MatchAll => best.values().map(|d| d.id.as_str()).collect(),
            f => self.matching(f).map(|d| d.id.as_str()).collect(),
        };
        let mut out: Vec<(&str, DocRef<'_>)> = best.into_iter().filter(|(_, d)| keep.contains(d.id.as_str())).collect();
        out.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let hits = out.into_iter().map(|(_, d)| Hit { id: d.id.clone(), version: d.version, source: d.fields.clone() }).collect();
        (hits, newest)
    }

    /// Every live document, in id order.
    pub(crate) fn live_docs(&self) -> Vec<StoredDoc> {
        let mut docs: Vec<StoredDoc> = self.matching(&Query::MatchAll).cloned().collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        docs
    }
}

fn sort_key_cmp(a: Option<&FieldValue>, b: Option<&FieldValue>, order: SortOrder) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    let key = |v: &FieldValue| match v {
        FieldValue::Str(s) => (0, normalize_keyword(s), 0.0),
        FieldValue::Geo(_) => (2, String::new(), 0.0),
        other => (1, String::new(), other.as_f64().unwrap()),
    };
    match (a, b) {
        (None, None) => Equal,
        (None, Some(_)) => Greater,
        (Some(_), None) => Less,
        (Some(a), Some(b)) => {
            let (ka, kb) = (key(a), key(b));
            let ord = ka.0.cmp(&kb.0).then_with(|| ka.1.cmp(&kb.1)).then_with(|| ka.2.total_cmp(&kb.2));
            match order {
                SortOrder::Asc => ord,
                SortOrder::Desc => ord.reverse(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    seg: usize,
    ord: u32,
}

#[derive(Debug)]
struct Writer {
    mapping: BTreeMap<String, FieldType>,
    versions: HashMap<String, u64>,
    pending: BTreeMap<String, StoredDoc>,
    locs: HashMap<String, Loc>,
    segments: Vec<Arc<Segment>>,
    live: Vec<Arc<Bits>>,
    last_refresh: Instant,
}

#[derive(Debug)]
pub struct Index {
    cfg: IndexConfig,
    writer: Mutex<Writer>,
    view: RwLock<Arc<View>>,
}

impl Index {
    pub fn new(cfg: IndexConfig) -> Result<Index, IndexError> {
        cfg.validate()?;
        Ok(Index {
            cfg,
            writer: Mutex::new(Writer {
                mapping: BTreeMap::new(),
                versions: HashMap::new(),
                pending: BTreeMap::new(),
                locs: HashMap::new(),
                segments: vec![],
                live: vec![],
                last_refresh: Instant::now(),
            }),
            view: RwLock::new(Arc::new(View::empty())),
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.cfg
    }

    fn check_mapping(mapping: &mut BTreeMap<String, FieldType>, doc: &Document) -> Result<(), IndexError> {
        for (field, v) in doc {
            if let FieldValue::Num(x) = v {
                if !x.is_finite() {
                    return Err(IndexError::InvalidValue { field: field.clone() });
                }
            }
            let t = v.field_type();
            match mapping.get(field) {
                Some(&existing) if existing != t => {
                    return Err(IndexError::MappingConflict { field: field.clone(), existing, attempted: t })
                }
                Some(_) => {}
                None => {
                    mapping.insert(field.clone(), t);
                }
            }
        }
        Ok(())
    }

    /// Inserts or replaces a document. Returns its new version.
    pub fn upsert(&self, id: &str, fields: Document) -> Result<u64, IndexError> {
        Ok(self.bulk(vec![(id.to_string(), fields)])?[0])
    }

    /// Applies several upserts atomically: either all pass the mapping check
    /// and are applied in order, or none is.
    pub fn bulk(&self, docs: Vec<(String, Document)>) -> Result<Vec<u64>, IndexError> {
        let mut w = self.writer.lock().unwrap();
        let mut mapping = w.mapping.clone();
        for (_, d) in &docs {
            Self::check_mapping(&mut mapping, d)?;
        }
        w.mapping = mapping;
        let mut versions = Vec::with_capacity(docs.len());
        for (id, fields) in docs {
            let v = w.versions.entry(id.clone()).or_insert(0);
            *v += 1;
            let version = *v;
            versions.push(version);
            w.pending.insert(id.clone(), StoredDoc { id, version, fields });
        }
        if self.cfg.refresh_interval_seconds == 0 {
            self.refresh_locked(&mut w);
        }
        Ok(versions)
    }

    /// Makes every earlier write visible to subsequent searches.
    pub fn refresh(&self) {
        let mut w = self.writer.lock().unwrap();
        self.refresh_locked(&mut w);
    }

    fn refresh_locked(&self, w: &mut Writer) {
        w.last_refresh = Instant::now();
        let mapping_changed = *self.view.read().unwrap().mapping != w.mapping;
        if w.pending.is_empty() && !mapping_changed {
            return;
        }
        let pending = std::mem::take(&mut w.pending);
        if !pending.is_empty() {
            let seg_no = w.segments.len();
            for (ord, id) in pending.keys().enumerate() {
                if let Some(old) = w.locs.insert(id.clone(), Loc { seg: seg_no, ord: ord as u32 }) {
                    Arc::make_mut(&mut w.live[old.seg]).clear(old.ord as usize);
                }
            }
            let docs: Vec<StoredDoc> = pending.into_values().collect();
            w.live.push(Arc::new(Bits::ones(docs.len())));
            w.segments.push(Arc::new(Segment::build(docs, self.cfg.geo_precision)));
            if w.segments.len() > MAX_SEGMENTS {
                self.merge_locked(w);
            }
        }
        let doc_count = w.locs.len();
        let view = View {
            segments: w.segments.clone(),
            live: w.live.clone(),
            mapping: Arc::new(w.mapping.clone()),
            doc_count,
        };
        *self.view.write().unwrap() = Arc::new(view);
    }

    /// Rewrites all live documents into a single segment, dropping tombstones.
    fn merge_locked(&self, w: &mut Writer) {
        let mut docs: Vec<StoredDoc> = vec![];
        for (seg, live) in w.segments.iter().zip(&w.live) {
            docs.extend(live.iter().map(|o| seg.docs[o].clone()));
        }
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        w.locs = docs.iter().enumerate().map(|(o, d)| (d.id.clone(), Loc { seg: 0, ord: o as u32 })).collect();
        w.live = vec![Arc::new(Bits::ones(docs.len()))];
        w.segments = vec![Arc::new(Segment::build(docs, self.cfg.geo_precision))];
    }

    /// The current published view. Refreshes first when the configured
    /// interval has elapsed since the last refresh.
    pub fn view(&self) -> Arc<View> {
        if self.cfg.refresh_interval_seconds > 0 {
            if let Ok(mut w) = self.writer.try_lock() {
                let due = w.last_refresh.elapsed() >= Duration::from_secs(self.cfg.refresh_interval_seconds);
                if due && !w.pending.is_empty() {
                    self.refresh_locked(&mut w);
                }
            }
        }
        self.view.read().unwrap().clone()
    }

    pub fn search(&self, q: &Query, size: usize, sort: Option<(&str, SortOrder)>) -> SearchResult {
        self.view().search(q, size, sort)
    }

    pub fn aggregate(&self, filter: &Query, agg: &Aggregation) -> Result<AggResult, IndexError> {
        self.view().aggregate(filter, agg)
    }

    pub fn doc_count(&self) -> usize {
        self.view().doc_count()
    }

    pub fn get(&self, id: &str) -> Option<Hit> {
        self.view().get(id)
    }

    /// Replaces the whole content with `docs` (used when loading snapshots).
    fn load_docs(&self, docs: Vec<StoredDoc>) -> Result<(), IndexError> {
        let mut w = self.writer.lock().unwrap();
        let mut mapping = BTreeMap::new();
        for d in &docs {
            Self::check_mapping(&mut mapping, &d.fields).map_err(|e| IndexError::CorruptSnapshot(e.to_string()))?;
        }
        w.mapping = mapping;
        w.versions = docs.iter().map(|d| (d.id.clone(), d.version)).collect();
        w.pending.clear();
        w.segments.clear();
        w.live.clear();
        w.locs.clear();
        w.pending = docs.into_iter().map(|d| (d.id.clone(), d)).collect();
        self.refresh_locked(&mut w);
        Ok(())
    }
}

/// Named indices plus an optional directory for snapshots.
#[derive(Debug, Default)]
pub struct IndexStore {
    dir: Option<PathBuf>,
    indices: RwLock<BTreeMap<String, Arc<Index>>>,
}

impl IndexStore {
    pub fn in_memory() -> IndexStore {
        IndexStore::default()
    }

    /// Snapshots live under `<data_dir>/_index/<name>.skix`.
    pub fn with_dir(data_dir: &Path) -> IndexStore {
        IndexStore { dir: Some(data_dir.join("_index")), indices: RwLock::default() }
    }

    pub fn create(&self, cfg: IndexConfig) -> Result<Arc<Index>, IndexError> {
        let mut indices = self.indices.write().unwrap();
        if indices.contains_key(&cfg.name) {
            return Err(IndexError::IndexExists(cfg.name));
        }
        let idx = Arc::new(Index::new(cfg)?);
        indices.insert(idx.cfg.name.clone(), idx.clone());
        Ok(idx)
    }

    /// Returns the named index, creating it (empty) if needed.
    pub fn ensure(&self, cfg: IndexConfig) -> Result<Arc<Index>, IndexError> {
        if let Ok(idx) = self.index(&cfg.name) {
            return Ok(idx);
        }
        match self.create(cfg.clone()) {
            Err(IndexError::IndexExists(_)) => self.index(&cfg.name),
            other => other,
        }
    }

    pub fn index(&self, name: &str) -> Result<Arc<Index>, IndexError> {
        self.indices.read().unwrap().get(name).cloned().ok_or_else(|| IndexError::UnknownIndex(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.indices.read().unwrap().keys().cloned().collect()
    }

    fn snapshot_path(&self, name: &str) -> Result<PathBuf, IndexError> {
        Ok(self.dir.as_ref().ok_or(IndexError::NoSnapshotDir)?.join(format!("{name}.skix")))
    }

    /// Refreshes the index and writes its live documents to disk.
    pub fn snapshot(&self, name: &str) -> Result<PathBuf, IndexError> {
        let idx = self.index(name)?;
        idx.refresh();
        let path = self.snapshot_path(name)?;
        snapshot::write(&path, &idx.view().live_docs())?;
        Ok(path)
    }

    /// Loads `<name>.skix` into a new or existing index, replacing its content.
    /// Returns false when no snapshot exists.
    pub fn load(&self, cfg: IndexConfig) -> Result<bool, IndexError> {
        let path = self.snapshot_path(&cfg.name)?;
        if !path.exists() {
            return Ok(false);
        }
        let docs = snapshot::read(&path)?;
        self.ensure(cfg)?.load_docs(docs)?;
        Ok(true)
    }

    /// Modification time of a snapshot, for reload polling.
    pub fn snapshot_mtime(&self, name: &str) -> Option<std::time::SystemTime> {
        let path = self.snapshot_path(name).ok()?;
        std::fs::metadata(path).and_then(|m| m.modified()).ok()
    }
}
