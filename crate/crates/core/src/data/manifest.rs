//! Per-split dataset directories.
//!
//! ```text
//! <root>/<split>/manifest.tsv
//! <root>/<split>/<video_id>.audio.sdt     [T_a, 1]
//! <root>/<split>/<video_id>.frames.sdt    [F, C, H, W]
//! ```
//!
//! The manifest starts with `#sadd-manifest<TAB>version=N<TAB>split=NAME`,
//! followed by a tab-separated table with a header row.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_tensor, write_tensor};
use super::synth::{EnvelopeSource, RawVideo, VideoParams};
use crate::error::{Error, Result};
use crate::losses::{Class, Label, Provenance};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_TAG: &str = "#sadd-manifest";
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: Label,
    pub params: VideoParams,
    /// Relative to the split directory.
    pub audio_path: PathBuf,
    pub frames_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    video_id: String,
    label: Class,
    provenance: Provenance,
    video_seed: u64,
    audio_shift: usize,
    visual_envelope: EnvelopeSource,
    audio_path: String,
    frames_path: String,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        self.check_unique()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{MANIFEST_TAG}\tversion={}\tsplit={}", self.version, self.split).map_err(|e| Error::io(path, e))?;
        let mut table = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        for e in &self.entries {
            table
                .serialize(Row {
                    video_id: e.video_id.clone(),
                    label: e.label.class(),
                    provenance: e.label.provenance(),
                    video_seed: e.params.video_seed,
                    audio_shift: e.params.audio_shift,
                    visual_envelope: e.params.visual_envelope,
                    audio_path: path_str(&e.audio_path)?,
                    frames_path: path_str(&e.frames_path)?,
                })
                .map_err(|err| csv_err(err, path))?;
        }
        table
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .flush()
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let (version, split) = parse_tag_line(first.trim_end_matches(['\n', '\r']))
            .ok_or_else(|| Error::Malformed(format!("{}: missing `{MANIFEST_TAG}` header line", path.display())))?;
        if version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut table = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
        let mut entries = Vec::new();
        for row in table.deserialize::<Row>() {
            let row = row.map_err(|err| csv_err(err, path))?;
            let label = Label::new(row.label, row.provenance)
                .map_err(|e| Error::Malformed(format!("{}: video `{}`: {e}", path.display(), row.video_id)))?;
            entries.push(ManifestEntry {
                video_id: row.video_id,
                label,
                params: VideoParams {
                    video_seed: row.video_seed,
                    audio_shift: row.audio_shift,
                    visual_envelope: row.visual_envelope,
                },
                audio_path: row.audio_path.into(),
                frames_path: row.frames_path.into(),
            });
        }
        let manifest = DatasetManifest { version, split, entries };
        manifest.check_unique()?;
        Ok(manifest)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Malformed(format!("duplicate video id `{}` in split {}", e.video_id, self.split)));
            }
        }
        Ok(())
    }
}

fn parse_tag_line(line: &str) -> Option<(u32, String)> {
    let mut parts = line.split('\t');
    if parts.next()? != MANIFEST_TAG {
        return None;
    }
    let version = parts.next()?.strip_prefix("version=")?.parse().ok()?;
    let split = parts.next()?.strip_prefix("split=")?.to_owned();
    Some((version, split))
}

fn path_str(p: &Path) -> Result<String> {
    p.to_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Malformed(format!("non UTF-8 path {}", p.display())))
}

fn csv_err(err: csv::Error, path: &Path) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `videos` under `root/split` and returns the manifest.
pub fn write_split(root: &Path, split: &str, videos: &[RawVideo]) -> Result<DatasetManifest> {
    let dir = root.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        if v.video_id.is_empty() || v.video_id.contains(['/', '\\', '\t', '\n']) {
            return Err(Error::Config(format!("video id `{}` is not usable as a file name", v.video_id)));
        }
        let audio_path = PathBuf::from(format!("{}.audio.sdt", v.video_id));
        let frames_path = PathBuf::from(format!("{}.frames.sdt", v.video_id));
        write_tensor(&dir.join(&audio_path), &v.audio)?;
        write_tensor(&dir.join(&frames_path), &v.frames)?;
        entries.push(ManifestEntry {
            video_id: v.video_id.clone(),
            label: v.label,
            params: v.params,
            audio_path,
            frames_path,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        split: split.to_owned(),
        entries,
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads a split written by [`write_split`], in manifest order.
pub fn read_split(root: &Path, split: &str) -> Result<(DatasetManifest, Vec<RawVideo>)> {
    let dir = root.join(split);
    let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
    if manifest.split != split {
        return Err(Error::Malformed(format!(
            "{} declares split `{}`, expected `{split}`",
            dir.join(MANIFEST_FILE).display(),
            manifest.split
        )));
    }
    let videos = manifest
        .entries
        .iter()
        .map(|e| {
            Ok(RawVideo {
                video_id: e.video_id.clone(),
                label: e.label,
                params: e.params,
                audio: read_tensor(&dir.join(&e.audio_path))?,
                frames: read_tensor(&dir.join(&e.frames_path))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, videos))
}
