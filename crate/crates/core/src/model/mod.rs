//! Two-branch audio-visual network.
//!
//! The audio extractor runs 1D convolutions over the raw waveform, the visual
//! extractor runs 3D convolutions over the frame sequence, and both project to
//! feature vectors of the same length `D`. A small classifier head on each
//! branch maps its features to two logits (real, fake).

mod checkpoint;
mod config;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{param_count, ArchConfig, AudioBlock, Pool1d, Pool3d, VisualBlock};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// All learnable weights, stored in the canonical order of
/// [`ArchConfig::param_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ArchConfig,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// Fan-in scaled uniform init in `±sqrt(6 / fan_in)` for kernels and
    /// dense weights; zero biases.
    pub fn init(config: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let tensors = config
            .param_specs()?
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let bound = init_bound(&shape);
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                NamedTensor {
                    name,
                    tensor: Tensor::new(shape, data).expect("spec shape matches data"),
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn zeros(config: &ArchConfig) -> Result<Self> {
        let tensors = config
            .param_specs()?
            .into_iter()
            .map(|(name, shape)| NamedTensor {
                name,
                tensor: Tensor::zeros(shape),
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    /// Assembles parameters, checking names and shapes against the config.
    pub fn from_tensors(config: ArchConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        let specs = config.param_specs()?;
        if specs.len() != tensors.len() {
            return Err(Error::Malformed(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if *name != t.name || shape.as_slice() != t.tensor.shape() {
                return Err(Error::Malformed(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    t.name,
                    t.tensor.shape()
                )));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.numel()).sum()
    }

    /// Records every parameter on `graph`, trainable or constant.
    pub fn bind<S: Scalar>(&self, graph: &mut Graph<S>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let v = t.tensor.cast::<S>();
                if trainable {
                    graph.param(v)
                } else {
                    graph.constant(v)
                }
            })
            .collect();
        ParamVars {
            config: self.config.clone(),
            vars,
        }
    }

    /// Features `(f_a, f_v)` for one aligned audio/frame pair, without
    /// recording gradients.
    pub fn features(&self, audio: &Tensor<f32>, frames: &Tensor<f32>) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut g = Graph::<f32>::new();
        let p = self.bind(&mut g, false);
        let a = g.constant(audio.clone());
        let v = g.constant(frames.clone());
        let fa = audio_forward(&mut g, &p, a)?;
        let fv = visual_forward(&mut g, &p, v)?;
        Ok((g.value(fa).data().to_vec(), g.value(fv).data().to_vec()))
    }
}

fn init_bound(shape: &[usize]) -> f32 {
    let fan_in: usize = shape[1..].iter().product();
    (6.0 / fan_in as f64).sqrt() as f32
}

/// Parameters recorded on a graph, addressed by role.
#[derive(Clone, Debug)]
pub struct ParamVars {
    config: ArchConfig,
    vars: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Audio,
    Visual,
}

impl ParamVars {
    /// Wraps vars given in canonical parameter order.
    pub fn from_vars(config: &ArchConfig, vars: Vec<Var>) -> Result<Self> {
        let expected = config.param_specs()?.len();
        if vars.len() != expected {
            return Err(Error::invalid(
                "ParamVars::from_vars",
                format!("expected {expected} vars, got {}", vars.len()),
            ));
        }
        Ok(ParamVars {
            config: config.clone(),
            vars,
        })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    fn audio_block(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    fn audio_proj(&self) -> (Var, Var) {
        let k = 2 * self.config.audio_blocks.len();
        (self.vars[k], self.vars[k + 1])
    }

    fn visual_offset(&self) -> usize {
        2 * self.config.audio_blocks.len() + 2
    }

    fn visual_block(&self, i: usize) -> (Var, Var) {
        let k = self.visual_offset() + 2 * i;
        (self.vars[k], self.vars[k + 1])
    }

    fn visual_proj(&self) -> (Var, Var) {
        let k = self.visual_offset() + 2 * self.config.visual_blocks.len();
        (self.vars[k], self.vars[k + 1])
    }

    fn head_layers(&self, head: Head) -> &[Var] {
        let start = self.visual_offset() + 2 * self.config.visual_blocks.len() + 2;
        let per_head = 2 * (self.config.head_hidden.len() + 1);
        let start = match head {
            Head::Audio => start,
            Head::Visual => start + per_head,
        };
        &self.vars[start..start + per_head]
    }
}

/// Audio features `f_a [D]` from a waveform `[T_a, 1]`.
pub fn audio_forward<S: Scalar>(g: &mut Graph<S>, p: &ParamVars, waveform: Var) -> Result<Var> {
    let cfg = &p.config;
    let expected = cfg.audio_input_shape();
    if g.value(waveform).shape() != expected.as_slice() {
        return Err(Error::shape("audio_forward", g.shape(waveform), &expected));
    }
    let mut x = waveform;
    for (i, block) in cfg.audio_blocks.iter().enumerate() {
        let (kernel, bias) = p.audio_block(i);
        x = g.conv1d(x, kernel, block.stride)?;
        x = g.add_bias(x, bias, 1)?;
        x = g.relu(x)?;
        if let Some(pool) = block.pool {
            x = g.maxpool(x, &[pool.window, 1], &[pool.stride, 1])?;
        }
    }
    let (w, b) = p.audio_proj();
    let x = g.flatten(x)?;
    let x = g.dense(x, w, b)?;
    g.relu(x)
}

/// Visual features `f_v [D]` from frames `[T_v, C_v, H, W]`.
pub fn visual_forward<S: Scalar>(g: &mut Graph<S>, p: &ParamVars, frames: Var) -> Result<Var> {
    let cfg = &p.config;
    let expected = cfg.visual_input_shape();
    if g.value(frames).shape() != expected.as_slice() {
        return Err(Error::shape("visual_forward", g.shape(frames), &expected));
    }
    let mut x = frames;
    for (i, block) in cfg.visual_blocks.iter().enumerate() {
        let (kernel, bias) = p.visual_block(i);
        x = g.conv3d(x, kernel, block.stride)?;
        x = g.add_bias(x, bias, 1)?;
        x = g.relu(x)?;
        if let Some(pool) = block.pool {
            let [wt, wh, ww] = pool.window;
            let [st, sh, sw] = pool.stride;
            x = g.maxpool(x, &[wt, 1, wh, ww], &[st, 1, sh, sw])?;
        }
    }
    let (w, b) = p.visual_proj();
    let x = g.flatten(x)?;
    let x = g.dense(x, w, b)?;
    g.relu(x)
}

/// Raw (real, fake) logits from one branch's features.
pub fn classify<S: Scalar>(g: &mut Graph<S>, p: &ParamVars, head: Head, features: Var) -> Result<Var> {
    let d = p.config.feature_dim;
    if g.value(features).shape() != [d] {
        return Err(Error::shape("classify", g.shape(features), &[d]));
    }
    let layers = p.head_layers(head).to_vec();
    let mut x = features;
    let n = layers.len() / 2;
    for (i, pair) in layers.chunks_exact(2).enumerate() {
        x = g.dense(x, pair[0], pair[1])?;
        if i + 1 < n {
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

/// Outputs of one forward pass over an aligned audio/frame pair.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub audio_features: Var,
    pub visual_features: Var,
    pub audio_logits: Var,
    pub visual_logits: Var,
}

pub fn forward<S: Scalar>(g: &mut Graph<S>, p: &ParamVars, waveform: Var, frames: Var) -> Result<Forward> {
    let audio_features = audio_forward(g, p, waveform)?;
    let visual_features = visual_forward(g, p, frames)?;
    let audio_logits = classify(g, p, Head::Audio, audio_features)?;
    let visual_logits = classify(g, p, Head::Visual, visual_features)?;
    Ok(Forward {
        audio_features,
        visual_features,
        audio_logits,
        visual_logits,
    })
}
