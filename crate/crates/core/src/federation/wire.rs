//! Byte-level encoding of exchanged parameter vectors and the meter that
//! counts them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per transmitted value.
pub const BYTES_PER_VALUE: usize = 4;

/// Little-endian IEEE-754 `f32`, no header, no compression.
pub fn encode(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * BYTES_PER_VALUE);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(BYTES_PER_VALUE) {
        return Err(Error::protocol(format!(
            "payload of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(BYTES_PER_VALUE)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Running totals of bytes moved in each direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommMeter {
    pub uploaded: u64,
    pub downloaded: u64,
}

impl CommMeter {
    pub fn upload(&mut self, payload: &[u8]) {
        self.uploaded += payload.len() as u64;
    }

    pub fn download(&mut self, payload: &[u8]) {
        self.downloaded += payload.len() as u64;
    }

    pub fn since(&self, earlier: &CommMeter) -> CommMeter {
        CommMeter {
            uploaded: self.uploaded - earlier.uploaded,
            downloaded: self.downloaded - earlier.downloaded,
        }
    }
}
