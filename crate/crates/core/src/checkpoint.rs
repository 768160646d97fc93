//! Versioned binary model checkpoint.
//!
//! Layout: 8-byte magic `MINNCKPT`, `u32` format version, `u64` header
//! length, a JSON header (network config, training seed, optional
//! normalizer, block names and lengths), then every parameter as a
//! little-endian `f64` in block order, each block row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::network::{ModelParams, NetworkConfig};

const MAGIC: &[u8; 8] = b"MINNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub train_seed: u64,
    pub normalizer: Option<Normalizer>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    train_seed: u64,
    normalizer: Option<Normalizer>,
    blocks: Vec<BlockHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockHeader {
    name: String,
    len: usize,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.params.check_shapes(&self.config)?;
        let header = Header {
            config: self.config.clone(),
            train_seed: self.train_seed,
            normalizer: self.normalizer.clone(),
            blocks: self
                .params
                .blocks()
                .iter()
                .map(|b| BlockHeader {
                    name: b.name.clone(),
                    len: b.values.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let io = |e| Error::io("<checkpoint>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for v in self.params.to_flat() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
        let truncated = || Error::Checkpoint("file is truncated".into());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).ok_or_else(truncated)?;
        let header_bytes = bytes.get(20..header_end).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        header.config.validate()?;

        let mut params = ModelParams::zeros(&header.config);
        let expected = params.blocks();
        if expected.len() != header.blocks.len()
            || expected
                .iter()
                .zip(&header.blocks)
                .any(|(e, h)| e.name != h.name || e.values.len() != h.len)
        {
            return Err(Error::Shape(
                "checkpoint block layout does not match its network config".into(),
            ));
        }
        let n = params.n_params();
        let payload = &bytes[header_end..];
        if payload.len() != n * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                n * 8,
                payload.len()
            )));
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        params.set_flat(&flat)?;
        if let Some(norm) = &header.normalizer {
            if norm.width() != header.config.input_dim || norm.stds.len() != norm.width() {
                return Err(Error::Shape("normalizer width disagrees with input_dim".into()));
            }
        }
        Ok(Self {
            config: header.config,
            train_seed: header.train_seed,
            normalizer: header.normalizer,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}
