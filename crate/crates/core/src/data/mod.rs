//! Samples, subsequence windows, synthetic generation and the on-disk layout.

pub mod format;
mod manifest;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Label;
use crate::model::ArchConfig;
use crate::tensor::Tensor;

pub use format::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC};
pub use manifest::{read_split, write_split, DatasetManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub(crate) use synth::derive_seed;
pub use synth::{
    audio_visual_correlation, generate_synthetic_dataset, generate_video, EnvelopeSource, GenConfig, RawVideo,
    VideoParams, DECORRELATION_LIMIT,
};

/// One aligned audio/frame window.
#[derive(Clone, Debug, PartialEq)]
pub struct AVSample {
    pub video_id: String,
    pub subseq_index: usize,
    /// `[audio_len, 1]`
    pub audio: Tensor<f32>,
    /// `[frames, C, H, W]`
    pub frames: Tensor<f32>,
    pub label: Label,
}

/// A video as the ordered list of its subsequences.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub label: Label,
    pub subsequences: Vec<AVSample>,
}

impl VideoRecord {
    pub fn n_subsequences(&self) -> usize {
        self.subsequences.len()
    }
}

/// Length of one subsequence in each stream. Audio samples per frame is
/// `audio_len / frames`, which must be an integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub audio_len: usize,
    pub frames: usize,
}

impl Window {
    pub fn from_arch(arch: &ArchConfig) -> Self {
        Window {
            audio_len: arch.audio_sample_len,
            frames: arch.video_frames,
        }
    }

    pub fn samples_per_frame(&self) -> Result<usize> {
        if self.audio_len == 0 || self.frames == 0 || self.audio_len % self.frames != 0 {
            return Err(Error::Config(format!(
                "audio window {} is not a positive multiple of the frame window {}",
                self.audio_len, self.frames
            )));
        }
        Ok(self.audio_len / self.frames)
    }
}

/// Cuts aligned raw streams into non-overlapping windows; a trailing partial
/// window is dropped. `audio` is `[T_a, 1]` and `frames` is `[F, C, H, W]`
/// with `T_a == F * samples_per_frame`.
pub fn extract_subsequences(
    video_id: &str,
    label: Label,
    audio: &Tensor<f32>,
    frames: &Tensor<f32>,
    window: Window,
) -> Result<Vec<AVSample>> {
    let spf = window.samples_per_frame()?;
    let [t_a, one] = audio.shape() else {
        return Err(Error::shape("extract_subsequences", audio.shape(), &[window.audio_len, 1]));
    };
    if *one != 1 {
        return Err(Error::shape("extract_subsequences", audio.shape(), &[window.audio_len, 1]));
    }
    let [n_frames, c, h, w] = frames.shape() else {
        return Err(Error::invalid("extract_subsequences", "frames must be [F, C, H, W]"));
    };
    if *t_a != n_frames * spf {
        return Err(Error::invalid(
            "extract_subsequences",
            format!("{t_a} audio samples do not cover {n_frames} frames at {spf} samples per frame"),
        ));
    }
    let n = n_frames / window.frames;
    if n == 0 {
        return Err(Error::StreamTooShort {
            unit: "frames",
            available: *n_frames,
            window: window.frames,
        });
    }
    let frame_size = c * h * w;
    (0..n)
        .map(|i| {
            let a0 = i * window.audio_len;
            let f0 = i * window.frames * frame_size;
            Ok(AVSample {
                video_id: video_id.to_owned(),
                subseq_index: i,
                audio: Tensor::new(vec![window.audio_len, 1], audio.data()[a0..a0 + window.audio_len].to_vec())?,
                frames: Tensor::new(
                    vec![window.frames, *c, *h, *w],
                    frames.data()[f0..f0 + window.frames * frame_size].to_vec(),
                )?,
                label,
            })
        })
        .collect()
}

impl RawVideo {
    pub fn to_record(&self, window: Window) -> Result<VideoRecord> {
        Ok(VideoRecord {
            video_id: self.video_id.clone(),
            label: self.label,
            subsequences: extract_subsequences(&self.video_id, self.label, &self.audio, &self.frames, window)?,
        })
    }
}

pub fn to_records(videos: &[RawVideo], window: Window) -> Result<Vec<VideoRecord>> {
    videos.iter().map(|v| v.to_record(window)).collect()
}

/// Flattens videos into their subsequences, in video order.
pub fn flatten_samples(videos: &[VideoRecord]) -> Vec<&AVSample> {
    videos.iter().flat_map(|v| &v.subsequences).collect()
}

#[cfg(test)]
mod tests;
