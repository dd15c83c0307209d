//! Model checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SADD" | version: u32 | config_len: u32 | config: JSON (config_len bytes)
//! | n_tensors: u32 | per tensor: name_len: u32 | name (UTF-8)
//!                               | rank: u32 | extents: u64... | data: f32...
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchConfig, ModelParams, NamedTensor};
use crate::data::format::{io_err, read_exact, read_shape_and_payload, read_u32, with_path, write_shape_and_payload};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SADD";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_HEADER_LEN: u32 = 1 << 20;

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_checkpoint(&mut w, params).map_err(|e| with_path(e, path))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&mut BufReader::new(file)).map_err(|e| with_path(e, path))
}

pub fn encode_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    let config = serde_json::to_vec(params.config()).map_err(|e| Error::Malformed(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&config).map_err(io_err)?;
    w.write_all(&(params.tensors().len() as u32).to_le_bytes()).map_err(io_err)?;
    for t in params.tensors() {
        w.write_all(&(t.name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(t.name.as_bytes()).map_err(io_err)?;
        write_shape_and_payload(w, &t.tensor)?;
    }
    Ok(())
}

pub fn decode_checkpoint(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let config_len = read_u32(r, "config length")?;
    if config_len > MAX_HEADER_LEN {
        return Err(Error::Malformed(format!("config block of {config_len} bytes")));
    }
    let mut config = vec![0u8; config_len as usize];
    read_exact(r, &mut config, "config")?;
    let config: ArchConfig =
        serde_json::from_slice(&config).map_err(|e| Error::Malformed(format!("config: {e}")))?;

    let count = read_u32(r, "tensor count")?;
    if count > 4096 {
        return Err(Error::Malformed(format!("{count} parameter tensors")));
    }
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(r, "name length")?;
        if name_len > 1024 {
            return Err(Error::Malformed(format!("parameter name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len as usize];
        read_exact(r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?;
        let tensor = read_shape_and_payload(r)?;
        tensors.push(NamedTensor { name, tensor });
    }
    ModelParams::from_tensors(config, tensors)
}
