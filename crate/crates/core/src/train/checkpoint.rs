//! Binary checkpoint: `FGN1`, u64 LE config length, config JSON, f32 LE
//! parameters in declaration order, u64 LE value count.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"FGN1";

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(model.config()).map_err(CheckpointError::Json)?;
    let values = model.params().flatten();
    let mut out = Vec::with_capacity(4 + 8 + json.len() + 4 * values.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    Ok(out)
}

fn read_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() }.into());
    }
    let rest = &bytes[4..];
    if rest.len() < 8 {
        return Err(CheckpointError::TruncatedHeader { needed: 12, found: bytes.len() as u64 }.into());
    }
    let json_len = read_u64(rest);
    let rest = &rest[8..];
    if (rest.len() as u64) < json_len + 8 {
        return Err(CheckpointError::TruncatedHeader { needed: 12 + json_len + 8, found: bytes.len() as u64 }.into());
    }
    let json_len = json_len as usize;
    let config: ModelConfig = serde_json::from_slice(&rest[..json_len]).map_err(CheckpointError::Json)?;
    let mut model = Model::<f32>::build(&config, 0)?;
    let expected = model.params().numel() as u64;

    let payload = &rest[json_len..];
    let (blob, trailer) = payload.split_at(payload.len() - 8);
    let declared = read_u64(trailer);
    let whole = blob.len() % 4 == 0;
    let found = (blob.len() / 4) as u64;
    if !whole || found != declared {
        return Err(CheckpointError::Truncated { expected, found }.into());
    }
    if declared != expected {
        return Err(CheckpointError::LengthMismatch { expected, found: declared }.into());
    }
    let values: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    model.params_mut().load_flat(&values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn toy() -> Model<f32> {
        Model::build(&ModelConfig::toy(), 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = toy();
        let back = decode_checkpoint(&encode_checkpoint(&m).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        let a: Vec<u32> = m.params().flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.params().flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&toy()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checkpoint(CheckpointError::BadMagic { .. }))));
    }

    #[test]
    fn short_header() {
        let bytes = encode_checkpoint(&toy()).unwrap();
        let err = decode_checkpoint(&bytes[..10]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::TruncatedHeader { .. })), "{err}");
    }
}
