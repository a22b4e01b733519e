//! Checkpoint files: one JSON header line, then every parameter as a
//! little-endian f64 in canonical block order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{block_lengths, NetParams, ARCHITECTURE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: String,
    epoch: usize,
    val_score: f64,
    param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub epoch: usize,
    /// Validation Dice at the time of saving.
    pub val_score: f64,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        architecture: ARCHITECTURE.to_string(),
        epoch: ckpt.epoch,
        val_score: ckpt.val_score,
        param_count: ckpt.params.param_count(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for v in ckpt.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::MalformedCheckpoint(m.to_string());
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    if header.architecture != ARCHITECTURE {
        return Err(Error::MalformedCheckpoint(format!(
            "architecture {} is not {ARCHITECTURE}",
            header.architecture
        )));
    }
    let lens = block_lengths();
    let total: usize = lens.iter().sum();
    let payload = &bytes[nl + 1..];
    if header.param_count != total || payload.len() != total * 8 {
        return Err(bad("parameter payload length"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let blocks = lens
        .iter()
        .map(|&n| values.by_ref().take(n).collect())
        .collect();
    Ok(Checkpoint {
        params: NetParams::from_blocks(blocks)?,
        epoch: header.epoch,
        val_score: header.val_score,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::volume::Rng;

    #[test]
    fn bit_exact_round_trip() {
        let ckpt = Checkpoint {
            params: init_params(&mut Rng::new(3, 3)),
            epoch: 17,
            val_score: 0.8125,
        };
        let bytes = encode_checkpoint(&ckpt);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ckpt);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
    }

    #[test]
    fn truncated_payload_rejected() {
        let ckpt = Checkpoint {
            params: NetParams::zeros(),
            epoch: 0,
            val_score: 0.0,
        };
        let bytes = encode_checkpoint(&ckpt);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"{}\n").is_err());
    }
}
