//! Binary record formats.
//!
//! `.gsplat`: `b"GSPL"`, u32 version, u32 count, then `count` records of
//! 21 little-endian f32 in [`GaussianPrimitive::to_fields`] order.
//!
//! `.vec`: `b"GVEC"`, u32 version, u32 dimension, then `dimension`
//! little-endian f64.

use crate::semantic::EmbeddingVector;
use crate::splat::GaussianPrimitive;

use super::BundleError;

pub const GSPLAT_MAGIC: [u8; 4] = *b"GSPL";
pub const VEC_MAGIC: [u8; 4] = *b"GVEC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;
pub const RECORD_LEN: usize = GaussianPrimitive::FIELD_COUNT * 4;

pub fn encode_primitives(primitives: &[GaussianPrimitive]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + primitives.len() * RECORD_LEN);
    out.extend_from_slice(&GSPLAT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(primitives.len() as u32).to_le_bytes());
    for p in primitives {
        for f in p.to_fields() {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn header(bytes: &[u8], file: &str, magic: [u8; 4]) -> Result<u32, BundleError> {
    let fail = |offset: usize, message: String| BundleError::Format {
        file: file.to_owned(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(fail(0, "bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    Ok(u32_at(bytes, 8))
}

/// Decode and validate every record. The error offset points at the first
/// offending byte.
pub fn decode_primitives(bytes: &[u8], file: &str) -> Result<Vec<GaussianPrimitive>, BundleError> {
    let fail = |offset: usize, message: String| BundleError::Format {
        file: file.to_owned(),
        offset: offset as u64,
        message,
    };
    let count = header(bytes, file, GSPLAT_MAGIC)? as usize;
    if count == 0 {
        return Err(fail(8, "primitive count is zero".into()));
    }
    let expected = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {count} records, found {}", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let start = HEADER_LEN + i * RECORD_LEN;
        let mut fields = [0f32; GaussianPrimitive::FIELD_COUNT];
        for (j, f) in fields.iter_mut().enumerate() {
            *f = f32::from_le_bytes(rec[j * 4..j * 4 + 4].try_into().expect("4 bytes"));
            if !f.is_finite() {
                return Err(fail(start + j * 4, format!("record {i} field {j} is not finite")));
            }
        }
        let p = GaussianPrimitive::from_fields(&fields);
        p.validate()
            .map_err(|e| fail(start, format!("record {i}: {e}")))?;
        out.push(p);
    }
    Ok(out)
}

pub fn encode_embedding(v: &EmbeddingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + v.dim() * 8);
    out.extend_from_slice(&VEC_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in &v.0 {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8], file: &str) -> Result<EmbeddingVector, BundleError> {
    let fail = |offset: usize, message: String| BundleError::Format {
        file: file.to_owned(),
        offset: offset as u64,
        message,
    };
    let dim = header(bytes, file, VEC_MAGIC)? as usize;
    let expected = HEADER_LEN + dim * 8;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes for dimension {dim}, found {}", bytes.len()),
        ));
    }
    let mut v = Vec::with_capacity(dim);
    for (i, c) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(fail(HEADER_LEN + i * 8, format!("value {i} is not finite")));
        }
        v.push(x);
    }
    Ok(EmbeddingVector(v))
}
