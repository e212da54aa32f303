//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, 32-byte config
//! hash, little-endian `u64` length of the config TOML, the TOML text, and
//! the bincode-encoded [`TrainState`].

use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use crate::trainer::TrainState;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DYNSTCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub config: ExperimentConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(config: ExperimentConfig, state: TrainState) -> Result<Self> {
        Ok(Self {
            version: FORMAT_VERSION,
            config_hash: config.resume_hash()?,
            config,
            state,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let toml = self.config.to_toml_string()?;
        let state = bincode::serialize(&self.state).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut out = Vec::with_capacity(52 + toml.len() + state.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(toml.len() as u64).to_le_bytes());
        out.extend_from_slice(toml.as_bytes());
        out.extend_from_slice(&state);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |what: &'static str, message: &str| Error::Parse {
            path: path.to_path_buf(),
            what,
            message: message.to_string(),
        };
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err(bad("checkpoint magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "{} has format version {version}, this build reads version {FORMAT_VERSION}",
                path.display()
            )));
        }
        let config_hash: [u8; 32] = bytes[12..44].try_into().expect("32 bytes");
        let toml_len = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes")) as usize;
        let toml_end = 52usize
            .checked_add(toml_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("checkpoint config", "truncated"))?;
        let toml = std::str::from_utf8(&bytes[52..toml_end]).map_err(|e| bad("checkpoint config", &e.to_string()))?;
        let config = ExperimentConfig::from_toml_str(toml)?;
        if config.resume_hash()? != config_hash {
            return Err(bad("checkpoint config", "hash does not match the stored config"));
        }
        let state: TrainState =
            bincode::deserialize(&bytes[toml_end..]).map_err(|e| bad("checkpoint state", &e.to_string()))?;
        state.validate()?;
        Ok(Self {
            version,
            config_hash,
            config,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
