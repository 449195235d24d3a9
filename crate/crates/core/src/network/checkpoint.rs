//! Binary checkpoint format. Layout (all integers little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `LTLSTMCK` |
//! | 8 | 4 | format version (u32) |
//! | 12 | 1 | variant (0 stacked, 1 residual, 2 layer-trajectory) |
//! | 13 | 1 | factorized-gate bits (time i/f/o = bits 0..3, layer i/f/o = bits 3..6) |
//! | 14 | 2 | reserved, zero |
//! | 16 | 28 | u32 num_layers, input_dim, cell_dim, proj_dim, output_dim, target_delay, frame_stride |
//! | 44 | 8 | parameter element count (u64) |
//! | 52 | 8·n | parameters as f64, in `NetworkParams` tensor order |
//! | 52+8n | 32 | SHA-256 of all preceding bytes |

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{FactorizedGates, NetworkConfig, Variant};
use super::params::NetworkParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LTLSTMCK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 52;
const DIGEST_LEN: usize = 32;

pub fn encode(params: &NetworkParams, config: &NetworkConfig) -> Result<Vec<u8>> {
    params.check(config)?;
    let flat = params.to_flat();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * flat.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(config.variant.code());
    buf.push(config.factorized_gates.bits());
    buf.extend_from_slice(&[0, 0]);
    for v in [
        config.num_layers,
        config.input_dim,
        config.cell_dim,
        config.proj_dim,
        config.output_dim,
        config.target_delay,
        config.frame_stride,
    ] {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("dimension {v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in &flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkParams, NetworkConfig)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            Error::Truncated {
                expected: HEADER_LEN + DIGEST_LEN,
                found: bytes.len(),
            }
        } else {
            Error::BadMagic
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN + DIGEST_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = u64::from_le_bytes(bytes[44..52].try_into().unwrap());
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN + DIGEST_LEN))
        .ok_or_else(|| Error::MalformedCheckpoint(format!("implausible element count {count}")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedCheckpoint(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let (body, digest) = bytes.split_at(expected - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }

    let variant = Variant::from_code(bytes[12])
        .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown variant code {}", bytes[12])))?;
    let factorized_gates = FactorizedGates::from_bits(bytes[13])
        .ok_or_else(|| Error::MalformedCheckpoint(format!("bad factorized-gate bits {:#x}", bytes[13])))?;
    let dim = |i: usize| u32_at(bytes, 16 + 4 * i) as usize;
    let config = NetworkConfig {
        variant,
        num_layers: dim(0),
        input_dim: dim(1),
        cell_dim: dim(2),
        proj_dim: dim(3),
        output_dim: dim(4),
        factorized_gates,
        target_delay: dim(5),
        frame_stride: dim(6),
    };
    config
        .validate()
        .map_err(|e| Error::MalformedCheckpoint(format!("stored config invalid: {e}")))?;
    let mut params = NetworkParams::zeros(&config)?;
    if params.num_elements() as u64 != count {
        return Err(Error::MalformedCheckpoint(format!(
            "config implies {} parameters, file holds {count}",
            params.num_elements()
        )));
    }
    let flat: Vec<f64> = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.set_flat(&flat)?;
    Ok((params, config))
}

/// Writes the checkpoint atomically (temp file then rename).
pub fn save_model(params: &NetworkParams, config: &NetworkConfig, destination: &Path) -> Result<()> {
    let bytes = encode(params, config)?;
    let tmp = destination.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, destination).map_err(|e| Error::io(destination, e))
}

pub fn load_model(source: &Path) -> Result<(NetworkParams, NetworkConfig)> {
    let bytes = std::fs::read(source).map_err(|e| Error::io(source, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::GateKind;
    use crate::network::Lane;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> (NetworkParams, NetworkConfig) {
        let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 2);
        cfg.cell_dim = 16;
        cfg.factorized_gates = FactorizedGates::NONE.with(Lane::Layer, GateKind::Forget);
        cfg.target_delay = 3;
        let p = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (p, cfg)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (p, cfg) = model();
        let (q, qcfg) = decode(&encode(&p, &cfg).unwrap()).unwrap();
        assert_eq!(qcfg, cfg);
        let a: Vec<u64> = p.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_errors() {
        let (p, cfg) = model();
        let bytes = encode(&p, &cfg).unwrap();

        let mut corrupt = bytes.clone();
        corrupt[HEADER_LEN + 17] ^= 0x40;
        assert!(matches!(decode(&corrupt), Err(Error::ChecksumMismatch)));

        let mut version = bytes.clone();
        version[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&version), Err(Error::VersionMismatch { found: 2, expected: 1 })));

        assert!(matches!(decode(&bytes[..bytes.len() - 9]), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..20]), Err(Error::Truncated { .. })));
        assert!(matches!(decode(b"not a model at all, definitely"), Err(Error::BadMagic)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (p, cfg) = model();
        save_model(&p, &cfg, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), (p, cfg));
    }
}
