//! IDX container: big-endian dimension sizes after a 4-byte magic whose
//! third byte is the element type (0x08, unsigned byte) and fourth the rank.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;

/// Ranks accepted on load: labels (1), grayscale images (3), N×C×H×W (4).
const ACCEPTED_RANKS: [u8; 3] = [1, 3, 4];

/// An n-dimensional unsigned byte array as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let numel = checked_numel(&dims)?;
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "IDX dims {dims:?} need {numel} bytes, got {}",
                data.len()
            )));
        }
        Ok(IdxArray { dims, data })
    }

    pub fn magic(&self) -> u32 {
        u32::from_be_bytes([0, 0, UBYTE, self.dims.len() as u8])
    }
}

fn checked_numel(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow)
}

pub fn decode_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let rank = bytes[3];
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || !ACCEPTED_RANKS.contains(&rank) {
        return Err(Error::BadMagic(magic));
    }
    let header = 4 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = checked_numel(&dims)?;
    let expected = header.checked_add(numel).ok_or(Error::DimensionOverflow)?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>> {
    if !ACCEPTED_RANKS.contains(&(array.dims.len() as u8)) {
        return Err(Error::Validation(format!(
            "IDX rank {} is not supported",
            array.dims.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_idx(&bytes)
}

pub fn save_idx(array: &IdxArray, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx(array)?).map_err(|e| Error::io(path, e))
}
