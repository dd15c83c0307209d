//! `run.meta`: the resolved config of a run plus checksums of what it read
//! and wrote. Passing it back as `--config` repeats the run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use sadd::data::{DatasetManifest, MANIFEST_FILE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Table;

use crate::Failure;

pub const META_FILE: &str = "run.meta";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub threads: usize,
    /// Paths as given on the command line.
    pub arguments: BTreeMap<String, String>,
    /// sha256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each output file, keyed by path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub config: Table,
}

impl RunMeta {
    pub fn new(command: &str, threads: usize, config: Table) -> Self {
        RunMeta {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            threads,
            arguments: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config,
        }
    }

    pub fn argument(&mut self, name: &str, value: &Path) {
        self.arguments.insert(name.into(), value.display().to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<String, Failure> {
        let sum = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), sum.clone());
        Ok(sum)
    }

    pub fn output(&mut self, dir: &Path, name: &str) -> Result<String, Failure> {
        let sum = sha256_file(&dir.join(name))?;
        self.outputs.insert(name.into(), sum.clone());
        Ok(sum)
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = toml::to_string(self).map_err(|e| Failure::data(format!("encoding run.meta: {e}")))?;
        let path = dir.join(META_FILE);
        std::fs::write(&path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }

    pub fn read(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let file = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Creates `dir`, refusing to reuse one that already holds a run or any of
/// `outputs` unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool, outputs: &[&str]) -> Result<PathBuf, Failure> {
    if !force {
        if let Some(hit) = std::iter::once(META_FILE).chain(outputs.iter().copied()).find(|f| dir.join(f).exists()) {
            return Err(Failure::usage(format!(
                "{} already exists; pass --force to overwrite",
                dir.join(hit).display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// One sha256 over a split's manifest and every tensor file it lists, in
/// manifest order.
pub fn split_digest(root: &Path, split: &str, manifest: &DatasetManifest) -> Result<String, Failure> {
    let dir = root.join(split);
    let mut hasher = Sha256::new();
    let mut files = vec![dir.join(MANIFEST_FILE)];
    for e in &manifest.entries {
        files.push(dir.join(&e.audio_path));
        files.push(dir.join(&e.frames_path));
    }
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Failure::data(format!("{}: {e}", f.display())))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
