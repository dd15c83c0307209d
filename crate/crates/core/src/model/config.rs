use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::valid_extent;

/// Audio blocks in the shallow configuration.
pub const SHALLOW_AUDIO_BLOCKS: usize = 2;
/// Visual blocks in the shallow configuration.
pub const SHALLOW_VISUAL_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool1d {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool3d {
    pub window: [usize; 3],
    pub stride: [usize; 3],
}

/// conv1d -> relu -> optional maxpool over time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: Option<Pool1d>,
}

/// conv3d -> relu -> optional maxpool over (T, H, W).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualBlock {
    pub channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pool: Option<Pool3d>,
}

/// Shapes of both extractors and heads. Every layer size is configuration;
/// only the block counts of the shallow model are fixed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub audio_sample_len: usize,
    pub video_frames: usize,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub feature_dim: usize,
    pub audio_blocks: Vec<AudioBlock>,
    pub visual_blocks: Vec<VisualBlock>,
    /// Hidden widths of each classifier head; empty means a single D -> 2 layer.
    #[serde(default)]
    pub head_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// Shipped desk-scale shallow model: 1600-sample waveform, 8x3x32x32 frames.
    /// Visual kernels are spatial only and the last pool in each branch spans
    /// one frame, so both feature maps keep one slot per video frame.
    pub fn desk() -> Self {
        ArchConfig {
            audio_sample_len: 1600,
            video_frames: 8,
            frame_channels: 3,
            frame_height: 32,
            frame_width: 32,
            feature_dim: 128,
            audio_blocks: vec![
                AudioBlock { channels: 16, kernel: 9, stride: 2, pool: None },
                AudioBlock {
                    channels: 32,
                    kernel: 5,
                    stride: 2,
                    pool: Some(Pool1d { window: 49, stride: 49 }),
                },
            ],
            visual_blocks: vec![
                VisualBlock { channels: 8, kernel: [1, 3, 3], stride: [1, 2, 2], pool: None },
                VisualBlock { channels: 16, kernel: [1, 3, 3], stride: [1, 2, 2], pool: None },
                VisualBlock {
                    channels: 32,
                    kernel: [1, 3, 3],
                    stride: [1, 1, 1],
                    pool: Some(Pool3d { window: [1, 5, 5], stride: [1, 5, 5] }),
                },
            ],
            head_hidden: Vec::new(),
        }
    }

    /// The desk layer stack on full-size inputs (48000 x 1 audio,
    /// 30 x 3 x 224 x 224 frames). Used for shape arithmetic, never trained.
    pub fn paper_scale() -> Self {
        ArchConfig {
            audio_sample_len: 48_000,
            video_frames: 30,
            frame_height: 224,
            frame_width: 224,
            ..Self::desk()
        }
    }

    /// Deeper comparison model (4 audio / 5 visual blocks, hidden head layer)
    /// used only to compare parameter counts against the shallow default.
    pub fn deep_reference() -> Self {
        let pool2 = Some(Pool3d { window: [1, 2, 2], stride: [1, 2, 2] });
        ArchConfig {
            audio_blocks: vec![
                AudioBlock { channels: 16, kernel: 9, stride: 2, pool: None },
                AudioBlock { channels: 32, kernel: 5, stride: 2, pool: None },
                AudioBlock { channels: 64, kernel: 3, stride: 1, pool: Some(Pool1d { window: 2, stride: 2 }) },
                AudioBlock { channels: 64, kernel: 3, stride: 1, pool: Some(Pool1d { window: 2, stride: 2 }) },
            ],
            visual_blocks: vec![
                VisualBlock { channels: 8, kernel: [3, 3, 3], stride: [1, 1, 1], pool: pool2 },
                VisualBlock { channels: 16, kernel: [3, 3, 3], stride: [1, 1, 1], pool: pool2 },
                VisualBlock { channels: 32, kernel: [3, 3, 3], stride: [1, 1, 1], pool: None },
                VisualBlock { channels: 64, kernel: [1, 3, 3], stride: [1, 1, 1], pool: None },
                VisualBlock { channels: 64, kernel: [1, 1, 1], stride: [1, 1, 1], pool: None },
            ],
            head_hidden: vec![128],
            ..Self::desk()
        }
    }

    /// Small shallow model for gradient checks and quick tests. Still
    /// exercises strides and both pooling kinds.
    pub fn reduced() -> Self {
        ArchConfig {
            audio_sample_len: 48,
            video_frames: 4,
            frame_channels: 3,
            frame_height: 8,
            frame_width: 8,
            feature_dim: 6,
            audio_blocks: vec![
                AudioBlock { channels: 3, kernel: 5, stride: 2, pool: None },
                AudioBlock { channels: 4, kernel: 3, stride: 1, pool: Some(Pool1d { window: 2, stride: 2 }) },
            ],
            visual_blocks: vec![
                VisualBlock { channels: 2, kernel: [2, 3, 3], stride: [1, 1, 1], pool: None },
                VisualBlock { channels: 3, kernel: [2, 2, 2], stride: [1, 2, 2], pool: None },
                VisualBlock {
                    channels: 3,
                    kernel: [1, 2, 2],
                    stride: [1, 1, 1],
                    pool: Some(Pool3d { window: [1, 2, 2], stride: [1, 1, 1] }),
                },
            ],
            head_hidden: Vec::new(),
        }
    }

    /// Checks that every layer is well formed and every window fits.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("audio_sample_len", self.audio_sample_len),
            ("video_frames", self.video_frames),
            ("frame_channels", self.frame_channels),
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.audio_blocks.is_empty() || self.visual_blocks.is_empty() {
            return Err(Error::Config("each branch needs at least one conv block".into()));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("head hidden widths must be positive".into()));
        }
        self.audio_output_shape()?;
        self.visual_output_shape()?;
        Ok(())
    }

    /// `validate` plus the shallow block counts (2 audio, 3 visual).
    pub fn validate_shallow(&self) -> Result<()> {
        self.validate()?;
        if self.audio_blocks.len() != SHALLOW_AUDIO_BLOCKS || self.visual_blocks.len() != SHALLOW_VISUAL_BLOCKS {
            return Err(Error::Config(format!(
                "shallow model needs {SHALLOW_AUDIO_BLOCKS} audio and {SHALLOW_VISUAL_BLOCKS} visual blocks, got {} and {}",
                self.audio_blocks.len(),
                self.visual_blocks.len()
            )));
        }
        Ok(())
    }

    pub fn audio_input_shape(&self) -> Vec<usize> {
        vec![self.audio_sample_len, 1]
    }

    pub fn visual_input_shape(&self) -> Vec<usize> {
        vec![self.video_frames, self.frame_channels, self.frame_height, self.frame_width]
    }

    /// `[T', C]` after the last audio block.
    pub fn audio_output_shape(&self) -> Result<[usize; 2]> {
        let mut t = self.audio_sample_len;
        let mut c = 1;
        for (i, b) in self.audio_blocks.iter().enumerate() {
            let len = t;
            let bad = || Error::Config(format!("audio block {i} does not fit its input of length {len}"));
            if b.channels == 0 {
                return Err(Error::Config(format!("audio block {i} has zero channels")));
            }
            t = valid_extent(t, b.kernel, b.stride).ok_or_else(bad)?;
            if let Some(p) = b.pool {
                t = valid_extent(t, p.window, p.stride).ok_or_else(bad)?;
            }
            c = b.channels;
        }
        Ok([t, c])
    }

    /// `[T', C, H', W']` after the last visual block.
    pub fn visual_output_shape(&self) -> Result<[usize; 4]> {
        let mut dims = [self.video_frames, self.frame_height, self.frame_width];
        let mut c = self.frame_channels;
        for (i, b) in self.visual_blocks.iter().enumerate() {
            if b.channels == 0 {
                return Err(Error::Config(format!("visual block {i} has zero channels")));
            }
            for d in 0..3 {
                let before = dims;
                let bad = || Error::Config(format!("visual block {i} does not fit its input extents {before:?}"));
                dims[d] = valid_extent(dims[d], b.kernel[d], b.stride[d]).ok_or_else(bad)?;
                if let Some(p) = b.pool {
                    dims[d] = valid_extent(dims[d], p.window[d], p.stride[d]).ok_or_else(bad)?;
                }
            }
            c = b.channels;
        }
        Ok([dims[0], c, dims[1], dims[2]])
    }

    /// Names and shapes of every parameter tensor, in canonical order.
    pub fn param_specs(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut specs = Vec::new();
        let mut c_in = 1;
        for (i, b) in self.audio_blocks.iter().enumerate() {
            specs.push((format!("audio.block{i}.kernel"), vec![b.channels, c_in, b.kernel]));
            specs.push((format!("audio.block{i}.bias"), vec![b.channels]));
            c_in = b.channels;
        }
        let [t, c] = self.audio_output_shape()?;
        specs.push(("audio.proj.weight".into(), vec![self.feature_dim, t * c]));
        specs.push(("audio.proj.bias".into(), vec![self.feature_dim]));

        let mut c_in = self.frame_channels;
        for (i, b) in self.visual_blocks.iter().enumerate() {
            let [kt, kh, kw] = b.kernel;
            specs.push((format!("visual.block{i}.kernel"), vec![b.channels, c_in, kt, kh, kw]));
            specs.push((format!("visual.block{i}.bias"), vec![b.channels]));
            c_in = b.channels;
        }
        let flat: usize = self.visual_output_shape()?.iter().product();
        specs.push(("visual.proj.weight".into(), vec![self.feature_dim, flat]));
        specs.push(("visual.proj.bias".into(), vec![self.feature_dim]));

        for head in ["audio_head", "visual_head"] {
            let mut width = self.feature_dim;
            for (i, &h) in self.head_hidden.iter().chain(std::iter::once(&2)).enumerate() {
                specs.push((format!("{head}.layer{i}.weight"), vec![h, width]));
                specs.push((format!("{head}.layer{i}.bias"), vec![h]));
                width = h;
            }
        }
        Ok(specs)
    }
}

/// Exact number of scalars in the model's parameters.
pub fn param_count(config: &ArchConfig) -> Result<usize> {
    Ok(config
        .param_specs()?
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum())
}
