//! Versioned binary checkpoints: a config JSON blob plus ordered
//! (name, shape, values) parameter entries. Auxiliary-branch entries carry a
//! name prefix so inference loaders can skip them.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::composer::{ComposerSpec, StateDict};
use crate::error::{val_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGL1";

/// Entries under this prefix belong to the auxiliary branch (stream composer,
/// GCN stack, or the linear baseline head) and are not needed for inference.
pub const STREAM_PREFIX: &str = "gcn_stream/";

/// Config blob stored with every checkpoint; `extra` carries the trainer's
/// own configuration echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub composer: ComposerSpec,
    pub stream_composer: Option<ComposerSpec>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(config: CheckpointConfig) -> Checkpoint {
        Checkpoint {
            config,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(val_err(format!(
                "checkpoint entry {name:?}: shape does not match value count"
            )));
        }
        if self.entries.insert(name.to_string(), (shape, values)).is_some() {
            return Err(val_err(format!("duplicate checkpoint entry {name:?}")));
        }
        Ok(())
    }

    pub fn insert_dict(&mut self, prefix: &str, dict: &StateDict) -> Result<()> {
        for (name, (shape, values)) in dict {
            self.insert(&format!("{prefix}{name}"), shape.clone(), values.clone())?;
        }
        Ok(())
    }

    /// Entries under `prefix`, with the prefix stripped.
    pub fn sub_dict(&self, prefix: &str) -> StateDict {
        self.entries
            .iter()
            .filter_map(|(name, entry)| {
                name.strip_prefix(prefix)
                    .map(|rest| (rest.to_string(), entry.clone()))
            })
            .collect()
    }

    /// Main-composer entries only — everything outside the stream prefix.
    pub fn main_dict(&self) -> StateDict {
        self.entries
            .iter()
            .filter(|(name, _)| !name.starts_with(STREAM_PREFIX))
            .map(|(name, entry)| (name.clone(), entry.clone()))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(1)?;
        let config = serde_json::to_vec(&self.config)?;
        w.write_u64::<LittleEndian>(config.len() as u64)?;
        w.write_all(&config)?;
        w.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for (name, (shape, values)) in &self.entries {
            w.write_u64::<LittleEndian>(name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(shape.len() as u32)?;
            for &d in shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in values {
                w.write_u64::<LittleEndian>(v.to_bits())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config_len = r.read_u64::<LittleEndian>()? as usize;
        let mut config_bytes = vec![0u8; config_len];
        r.read_exact(&mut config_bytes)?;
        let config: CheckpointConfig = serde_json::from_slice(&config_bytes)?;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u64::<LittleEndian>()? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("non-utf8 checkpoint entry name".into()))?;
            let ndims = r.read_u32::<LittleEndian>()? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
            }
            entries.insert(name, (shape, values));
        }
        Ok(Checkpoint { config, entries })
    }
}
