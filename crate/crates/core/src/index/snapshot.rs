//! On-disk index snapshots.
//!
//! ```text
//! magic     "SKIX"
//! version   u16 BE
//! count     u64 BE
//! count x { len u32 BE, JSON document {id, version, fields} }
//! crc32     u32 BE over count and documents
//! ```

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::StoredDoc;
use super::value::Document;
use super::IndexError;

const MAGIC: &[u8; 4] = b"SKIX";
const VERSION: u16 = 1;
const HEADER: usize = 6;

#[derive(Serialize, Deserialize)]
struct DocRecord {
    id: String,
    version: u64,
    fields: Document,
}

pub(crate) fn encode(docs: &[StoredDoc]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(docs.len() as u64).to_be_bytes());
    for d in docs {
        let rec = DocRecord { id: d.id.clone(), version: d.version, fields: d.fields.clone() };
        let json = serde_json::to_vec(&rec).expect("documents serialize");
        out.extend_from_slice(&(json.len() as u32).to_be_bytes());
        out.extend_from_slice(&json);
    }
    let crc = crc32fast::hash(&out[HEADER..]);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Vec<StoredDoc>, IndexError> {
    let corrupt = |m: &str| IndexError::CorruptSnapshot(m.to_string());
    if bytes.len() < HEADER + 8 + 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic or truncated header"));
    }
    let version = u16::from_be_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let (body, crc) = bytes[HEADER..].split_at(bytes.len() - HEADER - 4);
    if crc32fast::hash(body) != u32::from_be_bytes(crc.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let count = u64::from_be_bytes(body[..8].try_into().unwrap());
    let mut pos = 8;
    let mut docs = Vec::new();
    for _ in 0..count {
        let len_bytes = body.get(pos..pos + 4).ok_or_else(|| corrupt("truncated document length"))?;
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let json = body.get(pos..pos + len).ok_or_else(|| corrupt("truncated document"))?;
        pos += len;
        let rec: DocRecord = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
        docs.push(StoredDoc { id: rec.id, version: rec.version, fields: rec.fields });
    }
    if pos != body.len() {
        return Err(corrupt("trailing bytes after documents"));
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    if docs.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(corrupt("duplicate document id"));
    }
    Ok(docs)
}

pub(crate) fn write(path: &Path, docs: &[StoredDoc]) -> Result<(), IndexError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("skix.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&encode(docs))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn read(path: &Path) -> Result<Vec<StoredDoc>, IndexError> {
    decode(&fs::read(path)?)
}
