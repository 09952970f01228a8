//! Record framing.
//!
//! ```text
//! length     u32 BE   bytes after this field
//! offset     u64 BE
//! timestamp  u64 BE   epoch seconds
//! key_len    u32 BE   0xFFFFFFFF = no key
//! key        [u8]
//! value_len  u32 BE
//! value      [u8]
//! crc32      u32 BE   IEEE, over every preceding byte of the frame
//! ```

use crate::model::EventTime;

pub const NO_KEY: u32 = 0xFFFF_FFFF;
/// Frame bytes excluding key and value.
pub const FRAME_OVERHEAD: usize = 4 + 8 + 8 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub offset: u64,
    pub timestamp: EventTime,
    pub key: Option<Vec<u8>>,
    pub value: Vec<u8>,
    pub crc: u32,
}

pub fn frame_len(key: Option<&[u8]>, value: &[u8]) -> usize {
    FRAME_OVERHEAD + key.map_or(0, <[u8]>::len) + value.len()
}

/// Appends one encoded frame to `out` and returns its CRC.
pub fn encode_into(out: &mut Vec<u8>, offset: u64, timestamp: EventTime, key: Option<&[u8]>, value: &[u8]) -> u32 {
    let start = out.len();
    let len = (frame_len(key, value) - 4) as u32;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&offset.to_be_bytes());
    out.extend_from_slice(&timestamp.0.to_be_bytes());
    match key {
        Some(k) => {
            out.extend_from_slice(&(k.len() as u32).to_be_bytes());
            out.extend_from_slice(k);
        }
        None => out.extend_from_slice(&NO_KEY.to_be_bytes()),
    }
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(value);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
    crc
}

pub fn encode(offset: u64, timestamp: EventTime, key: Option<&[u8]>, value: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(frame_len(key, value));
    encode_into(&mut v, offset, timestamp, key, value);
    v
}

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded {
    /// A verified record and the number of bytes it occupied.
    Record(LogRecord, usize),
    /// The buffer ends before the frame does (torn write).
    Incomplete,
    /// The frame is structurally invalid or its checksum does not match.
    Corrupt,
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().unwrap())
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().unwrap())
}

/// Decodes the frame at the start of `buf`.
pub fn decode(buf: &[u8]) -> Decoded {
    if buf.len() < 4 {
        return Decoded::Incomplete;
    }
    let len = be_u32(buf) as usize;
    if len < FRAME_OVERHEAD - 4 {
        return Decoded::Corrupt;
    }
    let total = 4 + len;
    if buf.len() < total {
        return Decoded::Incomplete;
    }
    let frame = &buf[..total];
    let stored_crc = be_u32(&frame[total - 4..]);
    if crc32fast::hash(&frame[..total - 4]) != stored_crc {
        return Decoded::Corrupt;
    }
    let offset = be_u64(&frame[4..]);
    let timestamp = EventTime(be_u64(&frame[12..]));
    let key_len = be_u32(&frame[20..]);
    let mut pos = 24;
    let key = if key_len == NO_KEY {
        None
    } else {
        let end = pos + key_len as usize;
        if end + 4 > total - 4 {
            return Decoded::Corrupt;
        }
        let k = frame[pos..end].to_vec();
        pos = end;
        Some(k)
    };
    if pos + 4 > total - 4 {
        return Decoded::Corrupt;
    }
    let value_len = be_u32(&frame[pos..]) as usize;
    pos += 4;
    if pos + value_len != total - 4 {
        return Decoded::Corrupt;
    }
    let value = frame[pos..pos + value_len].to_vec();
    Decoded::Record(LogRecord { offset, timestamp, key, value, crc: stored_crc }, total)
}
