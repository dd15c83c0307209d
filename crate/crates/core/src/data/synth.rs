//! Synthetic audio-visual videos with a shared latent loudness envelope.
//!
//! A real video draws one per-frame envelope `E`. The audio is a sum of
//! sinusoidal carriers scaled so each frame's RMS loudness equals `E`, and the
//! frames show a moving blob whose brightness follows `E`. Fakes break that
//! link: audio-only fakes shift the audio envelope in time (by at least a
//! quarter window), and visual-only fakes drive the blob with an independent
//! envelope. `Both` does both. Carriers are drawn per video, so a fake's
//! carriers are fresh too.
//!
//! Everything random comes from one xoshiro256++ stream per video, seeded from
//! `(seed, split, index)`. Sinusoids are read from a table built with
//! polynomial arithmetic and integer phase accumulators, so no platform `sin`
//! enters the output.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Window;
use crate::error::{Error, Result};
use crate::losses::{Label, Provenance};
use crate::model::ArchConfig;
use crate::tensor::Tensor;

/// Fakes redraw their perturbation until the audio and visual envelopes
/// correlate below this (in absolute value).
pub const DECORRELATION_LIMIT: f64 = 0.3;
const MAX_DRAWS: usize = 64;

const TABLE_BITS: u32 = 12;
pub(super) const TABLE_LEN: usize = 1 << TABLE_BITS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub train_videos: usize,
    pub test_videos: usize,
    pub windows_per_video: usize,
    /// Frames appended after the last full window; extraction drops them.
    pub tail_frames: usize,
    pub fake_ratio: f64,
    /// Shares of AUDIO_ONLY, VISUAL_ONLY and BOTH among the fakes.
    pub provenance_mix: [f64; 3],
    pub audio_window: usize,
    pub frames_window: usize,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Sinusoids summed into each audio track.
    pub carriers: usize,
    /// Amplitude of the uniform noise added to audio samples and pixels.
    pub noise: f32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train_videos: 200,
            test_videos: 50,
            windows_per_video: 3,
            tail_frames: 4,
            fake_ratio: 0.5,
            provenance_mix: [0.4, 0.4, 0.2],
            audio_window: 1600,
            frames_window: 8,
            frame_channels: 3,
            frame_height: 32,
            frame_width: 32,
            carriers: 3,
            noise: 0.02,
        }
    }
}

impl GenConfig {
    /// Default counts with window shapes taken from `arch`.
    pub fn for_arch(arch: &ArchConfig) -> Self {
        GenConfig::default().with_shapes_of(arch)
    }

    pub fn with_shapes_of(self, arch: &ArchConfig) -> Self {
        GenConfig {
            audio_window: arch.audio_sample_len,
            frames_window: arch.video_frames,
            frame_channels: arch.frame_channels,
            frame_height: arch.frame_height,
            frame_width: arch.frame_width,
            ..self
        }
    }

    pub fn window(&self) -> Window {
        Window {
            audio_len: self.audio_window,
            frames: self.frames_window,
        }
    }

    /// Checks that the window shapes agree with a model config.
    pub fn check_matches(&self, arch: &ArchConfig) -> Result<()> {
        let ours = [self.audio_window, self.frames_window, self.frame_channels, self.frame_height, self.frame_width];
        let theirs = [
            arch.audio_sample_len,
            arch.video_frames,
            arch.frame_channels,
            arch.frame_height,
            arch.frame_width,
        ];
        if ours != theirs {
            return Err(Error::Config(format!(
                "data window (audio, frames, C, H, W) = {ours:?} does not match the model input {theirs:?}"
            )));
        }
        Ok(())
    }

    pub fn frames_per_video(&self) -> usize {
        self.windows_per_video * self.frames_window + self.tail_frames
    }

    fn min_shift(&self) -> usize {
        self.frames_window.div_ceil(4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_videos", self.train_videos),
            ("test_videos", self.test_videos),
            ("windows_per_video", self.windows_per_video),
            ("frames_window", self.frames_window),
            ("frame_channels", self.frame_channels),
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("carriers", self.carriers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be positive")));
            }
        }
        self.window().samples_per_frame()?;
        if !(0.0..=1.0).contains(&self.fake_ratio) {
            return Err(Error::Config(format!("data.fake_ratio {} is outside [0, 1]", self.fake_ratio)));
        }
        let mix_sum: f64 = self.provenance_mix.iter().sum();
        if self.provenance_mix.iter().any(|&p| !(p >= 0.0)) || (mix_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data.provenance_mix {:?} must be non-negative and sum to 1",
                self.provenance_mix
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("data.noise must be a finite non-negative number".into()));
        }
        if self.frames_per_video() < 2 * self.min_shift() + 1 {
            return Err(Error::Config("videos are too short for a quarter-window audio shift".into()));
        }
        Ok(())
    }
}

/// Whether a video's frames follow the audio's envelope or their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeSource {
    Shared,
    Independent,
}

impl std::fmt::Display for EnvelopeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvelopeSource::Shared => "shared",
            EnvelopeSource::Independent => "independent",
        })
    }
}

impl std::str::FromStr for EnvelopeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(EnvelopeSource::Shared),
            "independent" => Ok(EnvelopeSource::Independent),
            _ => Err(Error::Malformed(format!("unknown envelope source `{s}`"))),
        }
    }
}

/// Generation parameters recorded per video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoParams {
    pub video_seed: u64,
    /// Circular shift of the audio envelope in frames (0 when aligned).
    pub audio_shift: usize,
    pub visual_envelope: EnvelopeSource,
}

/// Full-length audio and frame streams of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub video_id: String,
    pub label: Label,
    pub params: VideoParams,
    /// `[frames * samples_per_frame, 1]`
    pub audio: Tensor<f32>,
    /// `[frames, C, H, W]`
    pub frames: Tensor<f32>,
}

/// `(train, test)` splits, each in index order.
pub fn generate_synthetic_dataset(config: &GenConfig, seed: u64) -> Result<(Vec<RawVideo>, Vec<RawVideo>)> {
    config.validate()?;
    let train = generate_split(config, seed, "train", 0, config.train_videos)?;
    let test = generate_split(config, seed, "test", 1, config.test_videos)?;
    Ok((train, test))
}

fn generate_split(config: &GenConfig, seed: u64, name: &str, tag: u64, n: usize) -> Result<Vec<RawVideo>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, tag, u64::MAX));
    let labels = allocate_labels(n, config, &mut rng);
    labels
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| generate_video(config, &format!("{name}-{i:04}"), label, derive_seed(seed, tag, i as u64)))
        .collect()
}

/// Exact label counts: `round(fake_ratio * n)` fakes split by largest
/// remainder over the provenance mix, then shuffled.
pub(super) fn allocate_labels(n: usize, config: &GenConfig, rng: &mut Xoshiro256PlusPlus) -> Vec<Label> {
    let n_fake = (config.fake_ratio * n as f64).round() as usize;
    let raw: Vec<f64> = config.provenance_mix.iter().map(|p| p * n_fake as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &j in order.iter().take(n_fake - assigned) {
        counts[j] += 1;
    }
    let provenances = [Provenance::AudioOnly, Provenance::VisualOnly, Provenance::Both];
    let mut labels = Vec::with_capacity(n);
    for (p, &c) in provenances.iter().zip(&counts) {
        labels.extend(std::iter::repeat_n(Label::fake(*p).expect("fake provenance"), c));
    }
    labels.extend(std::iter::repeat_n(Label::real(), n - n_fake));
    labels.shuffle(rng);
    labels
}

/// SplitMix64 finalizer over a lane-separated combination of the inputs.
pub(crate) fn derive_seed(seed: u64, split: u64, index: u64) -> u64 {
    let mut z = seed ^ split.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One video, fully determined by its arguments.
pub fn generate_video(config: &GenConfig, video_id: &str, label: Label, video_seed: u64) -> Result<RawVideo> {
    config.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(video_seed);
    let n_frames = config.frames_per_video();
    let envelope = draw_envelope(&mut rng, n_frames);

    let shift_audio = matches!(label.provenance(), Provenance::AudioOnly | Provenance::Both);
    let own_visual = matches!(label.provenance(), Provenance::VisualOnly | Provenance::Both);
    let min_shift = config.min_shift();
    let (mut audio_env, mut visual_env, mut shift) = (envelope.clone(), envelope.clone(), 0);
    if shift_audio || own_visual {
        for _ in 0..MAX_DRAWS {
            if shift_audio {
                shift = rng.gen_range(min_shift..=n_frames - min_shift);
                audio_env = rotate(&envelope, shift);
            }
            if own_visual {
                visual_env = draw_envelope(&mut rng, n_frames);
            }
            if pearson(&audio_env, &visual_env).abs() < DECORRELATION_LIMIT {
                break;
            }
        }
    }

    let spf = config.window().samples_per_frame()?;
    let audio = synth_audio(config, &mut rng, &audio_env, spf);
    let frames = synth_frames(config, &mut rng, &visual_env);
    Ok(RawVideo {
        video_id: video_id.to_owned(),
        label,
        params: VideoParams {
            video_seed,
            audio_shift: shift,
            visual_envelope: if own_visual {
                EnvelopeSource::Independent
            } else {
                EnvelopeSource::Shared
            },
        },
        audio: Tensor::new(vec![n_frames * spf, 1], audio)?,
        frames: Tensor::new(
            vec![n_frames, config.frame_channels, config.frame_height, config.frame_width],
            frames,
        )?,
    })
}

fn draw_envelope(rng: &mut Xoshiro256PlusPlus, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(0.2f32..1.0)).collect()
}

/// `out[k] = env[(k + shift) mod n]`
pub(super) fn rotate(env: &[f32], shift: usize) -> Vec<f32> {
    let n = env.len();
    (0..n).map(|k| env[(k + shift) % n]).collect()
}

fn synth_audio(config: &GenConfig, rng: &mut Xoshiro256PlusPlus, envelope: &[f32], spf: usize) -> Vec<f32> {
    // phase increments between 0.01 and 0.12 cycles per sample
    let lo = (0.01 * 4_294_967_296.0) as u32;
    let hi = (0.12 * 4_294_967_296.0) as u32;
    let mut carriers: Vec<(u32, u32, f32)> = (0..config.carriers)
        .map(|_| (rng.gen::<u32>(), rng.gen_range(lo..hi), rng.gen_range(0.5f32..1.0)))
        .collect();
    let table = sine_table();
    let mut out = Vec::with_capacity(envelope.len() * spf);
    let mut chunk = vec![0.0f32; spf];
    for &level in envelope {
        for s in chunk.iter_mut() {
            *s = 0.0;
            for (phase, inc, amp) in &mut carriers {
                *s += *amp * table[(*phase >> (32 - TABLE_BITS)) as usize];
                *phase = phase.wrapping_add(*inc);
            }
        }
        // unit RMS per frame, so beating between carriers does not leak into
        // the loudness the envelope sets
        let rms = (chunk.iter().map(|&x| x * x).sum::<f32>() / spf as f32).sqrt();
        let gain = if rms > 0.0 { level / rms } else { 0.0 };
        for &s in &chunk {
            out.push(gain * s + config.noise * rng.gen_range(-1.0f32..1.0));
        }
    }
    out
}

fn synth_frames(config: &GenConfig, rng: &mut Xoshiro256PlusPlus, envelope: &[f32]) -> Vec<f32> {
    let (c, h, w) = (config.frame_channels, config.frame_height, config.frame_width);
    let side = h.min(w) as f32;
    let radius = rng.gen_range(side / 5.0..=side / 4.0);
    let lo = radius + 1.0;
    let hi_y = (h as f32 - 2.0 - radius).max(lo);
    let hi_x = (w as f32 - 2.0 - radius).max(lo);
    let mut cy = rng.gen_range(lo..=hi_y);
    let mut cx = rng.gen_range(lo..=hi_x);
    let mut vy = rng.gen_range(-0.5f32..=0.5);
    let mut vx = rng.gen_range(-0.5f32..=0.5);
    let background: Vec<f32> = (0..c).map(|_| rng.gen_range(0.0f32..0.2)).collect();
    let color: Vec<f32> = (0..c).map(|_| rng.gen_range(0.5f32..1.0)).collect();
    let r2 = radius * radius;

    let mut out = Vec::with_capacity(envelope.len() * c * h * w);
    for &level in envelope {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f32 - cy;
                    let dx = x as f32 - cx;
                    let bump = (1.0 - (dy * dy + dx * dx) / r2).max(0.0);
                    out.push(background[ch] + level * color[ch] * bump + config.noise * rng.gen_range(-1.0f32..1.0));
                }
            }
        }
        (cy, vy) = bounce(cy + vy, vy, lo, hi_y);
        (cx, vx) = bounce(cx + vx, vx, lo, hi_x);
    }
    out
}

fn bounce(pos: f32, vel: f32, lo: f32, hi: f32) -> (f32, f32) {
    if pos < lo {
        ((2.0 * lo - pos).min(hi), -vel)
    } else if pos > hi {
        ((2.0 * hi - pos).max(lo), -vel)
    } else {
        (pos, vel)
    }
}

/// One period of sine, built from its Taylor series on the first quadrant and
/// mirrored.
pub(super) fn sine_table() -> &'static [f32] {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let quarter = TABLE_LEN / 4;
        let first: Vec<f64> = (0..=quarter)
            .map(|i| {
                let x = std::f64::consts::FRAC_PI_2 * i as f64 / quarter as f64;
                let mut term = x;
                let mut sum = x;
                for n in 1..=12 {
                    term *= -x * x / ((2 * n) as f64 * (2 * n + 1) as f64);
                    sum += term;
                }
                sum
            })
            .collect();
        (0..TABLE_LEN)
            .map(|i| {
                let half = TABLE_LEN / 2;
                let (j, sign) = if i < half { (i, 1.0) } else { (i - half, -1.0) };
                let v = if j <= quarter { first[j] } else { first[half - j] };
                (sign * v) as f32
            })
            .collect()
    })
}

pub(super) fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Pearson correlation between per-frame audio RMS and per-frame mean pixel
/// brightness, over the whole video.
pub fn audio_visual_correlation(video: &RawVideo) -> Result<f64> {
    let n_frames = video.frames.shape()[0];
    if n_frames == 0 || video.audio.numel() % n_frames != 0 {
        return Err(Error::invalid("audio_visual_correlation", "audio does not divide into frames"));
    }
    let spf = video.audio.numel() / n_frames;
    let frame_size = video.frames.numel() / n_frames;
    let rms: Vec<f32> = video
        .audio
        .data()
        .chunks_exact(spf)
        .map(|c| ((c.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / spf as f64).sqrt()) as f32)
        .collect();
    let brightness: Vec<f32> = video
        .frames
        .data()
        .chunks_exact(frame_size)
        .map(|f| (f.iter().map(|&x| x as f64).sum::<f64>() / frame_size as f64) as f32)
        .collect();
    Ok(pearson(&rms, &brightness))
}
