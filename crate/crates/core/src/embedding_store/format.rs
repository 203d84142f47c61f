//! Byte-level codecs for the `.cemb` (embeddings) and `.clbl` (labels) files.
//!
//! ```text
//! CEMB: "CEMB" | version u32 | rows u64 | dim u32 | flags u32 | rows*dim f32
//! CLBL: "CLBL" | version u32 | rows u64 | flags u32 | rows u32 [| rows u32]
//! ```
//!
//! All integers and floats are little-endian. In both headers `flags` bit 0
//! carries the optional feature: the normalized flag for embeddings, the
//! presence of the domain-id block for labels.

use super::StoreError;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"CEMB";
pub const LABEL_MAGIC: [u8; 4] = *b"CLBL";
pub const FORMAT_VERSION: u32 = 1;

pub const EMBEDDING_HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;
pub const LABEL_HEADER_LEN: usize = 4 + 4 + 8 + 4;

const FLAG_BIT0: u32 = 1;

/// Decoded contents of a `.cemb` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub rows: usize,
    pub dim: usize,
    pub normalized: bool,
    pub data: Vec<f32>,
}

/// Decoded contents of a `.clbl` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLabels {
    pub labels: Vec<u32>,
    pub domain_ids: Option<Vec<u32>>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or(StoreError::TruncatedFile {
            expected: end as u64,
            actual: self.buf.len() as u64,
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

fn check_magic(found: [u8; 4], expected: [u8; 4]) -> Result<(), StoreError> {
    if found != expected {
        return Err(StoreError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_version(found: u32) -> Result<(), StoreError> {
    if found != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

/// Compares the declared payload size against the bytes actually present.
fn check_payload(header_len: usize, declared: u64, actual: usize) -> Result<(), StoreError> {
    let actual = actual as u64;
    if actual < declared {
        return Err(StoreError::TruncatedFile {
            expected: header_len as u64 + declared,
            actual: header_len as u64 + actual,
        });
    }
    if actual > declared {
        return Err(StoreError::DimMismatch {
            declared_bytes: declared,
            payload_bytes: actual,
        });
    }
    Ok(())
}

pub fn encode_embeddings(rows: usize, dim: usize, normalized: bool, data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(rows * dim, data.len());
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    let flags = if normalized { FLAG_BIT0 } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<RawEmbeddings, StoreError> {
    let mut cur = Cursor::new(bytes);
    check_magic(cur.take::<4>()?, EMBEDDING_MAGIC)?;
    check_version(cur.u32()?)?;
    let rows = cur.u64()?;
    let dim = cur.u32()?;
    let flags = cur.u32()?;
    if dim == 0 {
        return Err(StoreError::ZeroDim);
    }
    let declared = rows
        .checked_mul(dim as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or(StoreError::HeaderOverflow)?;
    let payload = cur.rest();
    check_payload(EMBEDDING_HEADER_LEN, declared, payload.len())?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(RawEmbeddings {
        rows: rows as usize,
        dim: dim as usize,
        normalized: flags & FLAG_BIT0 != 0,
        data,
    })
}

pub fn encode_labels(labels: &[u32], domain_ids: Option<&[u32]>) -> Vec<u8> {
    let blocks = if domain_ids.is_some() { 2 } else { 1 };
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + labels.len() * 4 * blocks);
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    let flags = if domain_ids.is_some() { FLAG_BIT0 } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    if let Some(domains) = domain_ids {
        debug_assert_eq!(domains.len(), labels.len());
        for d in domains {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<RawLabels, StoreError> {
    let mut cur = Cursor::new(bytes);
    check_magic(cur.take::<4>()?, LABEL_MAGIC)?;
    check_version(cur.u32()?)?;
    let rows = cur.u64()?;
    let flags = cur.u32()?;
    let has_domains = flags & FLAG_BIT0 != 0;
    let blocks: u64 = if has_domains { 2 } else { 1 };
    let declared = rows
        .checked_mul(4 * blocks)
        .ok_or(StoreError::HeaderOverflow)?;
    let payload = cur.rest();
    check_payload(LABEL_HEADER_LEN, declared, payload.len())?;
    let mut words = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")));
    let labels: Vec<u32> = words.by_ref().take(rows as usize).collect();
    let domain_ids = has_domains.then(|| words.collect());
    Ok(RawLabels { labels, domain_ids })
}
