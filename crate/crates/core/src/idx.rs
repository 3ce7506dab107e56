//! Reader for the big-endian IDX format used by the MNIST distribution files.
//!
//! Header: two zero bytes, a type code (`0x08` = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension. Only unsigned-byte
//! payloads are accepted; values are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, DatasetDescriptor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let samples = parse_idx(&bytes)?;
    Dataset::new(samples, DatasetDescriptor::Idx { path: path.to_path_buf() })
}

/// Parses an IDX buffer into a `(items, features)` tensor.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0)?;
    let rank = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => return Err(Error::Format(format!("unsupported IDX magic {other:#010x}"))),
    };
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * i)? as usize);
    }
    let header = 4 + 4 * rank;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() < count {
        return Err(Error::Format(format!("IDX payload truncated: need {count} bytes, found {}", payload.len())));
    }
    if payload.len() > count {
        return Err(Error::Format(format!("IDX payload has {} trailing bytes", payload.len() - count)));
    }
    let data = payload.iter().map(|&v| f64::from(v) / 255.0).collect();
    let rows = dims[0];
    let cols = dims[1..].iter().product();
    Tensor::matrix(rows, cols, data)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Format(format!("IDX header truncated at byte {at}")))
}
