//! Mini-batch Adam training with epoch-mean checkpoint selection.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, flatten_samples, AVSample, VideoRecord};
use crate::error::{Error, Result};
use crate::losses::{batch_mean, total_loss, LossBreakdown, LossVariant};
use crate::model::{forward, ArchConfig, ModelParams};
use crate::report::format_sig;
use crate::tensor::Graph;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Seed lane for epoch shuffles, kept apart from the data generator's lanes.
const SHUFFLE_LANE: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub alpha: f64,
    pub variant: LossVariant,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 8,
            weight_decay: 1e-5,
            alpha: 1.0,
            variant: LossVariant::Stats,
            seed: 42,
            arch: ArchConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("train.alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        self.arch.validate_shallow()
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    // beta^t, tracked by repeated multiplication
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.tensor.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }
}

/// One bias-corrected Adam update. Weight decay is added to the gradient
/// (`g + weight_decay * p`) before the moment updates.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Option<&[f32]>],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.tensors().len();
    if grads.len() != n || state.m.len() != n {
        return Err(Error::invalid(
            "adam_step",
            format!("{n} parameters, {} gradients, {} moment buffers", grads.len(), state.m.len()),
        ));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        match g {
            None => return Err(Error::MissingGrad(p.name.clone())),
            Some(g) if g.len() != p.tensor.numel() => {
                return Err(Error::shape("adam_step", &[g.len()], p.tensor.shape()));
            }
            Some(_) => {}
        }
    }
    state.t += 1;
    state.beta1_pow *= ADAM_BETA1;
    state.beta2_pow *= ADAM_BETA2;
    let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
    let c1 = (1.0 - state.beta1_pow) as f32;
    let c2 = (1.0 - state.beta2_pow) as f32;
    let (lr, wd, eps) = (learning_rate as f32, weight_decay as f32, ADAM_EPSILON as f32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = g[j] + wd * *w;
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub steps: usize,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,L_a,L_v,L_c,L_s,total,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            format_sig(l.audio_ce),
            format_sig(l.visual_ce),
            format_sig(l.contrastive),
            format_sig(l.statistics),
            format_sig(l.total),
            format_sig(self.seconds)
        )
    }
}

pub fn write_epoch_csv(w: &mut impl Write, logs: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "{EPOCH_CSV_HEADER}")?;
    for l in logs {
        writeln!(w, "{}", l.csv_row())?;
    }
    Ok(())
}

/// Parameters, optimizer state and the loss settings of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    adam: AdamState,
}

impl Trainer {
    /// Fresh parameters initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.arch, config.seed)?;
        Ok(Self::with_params(config, params))
    }

    pub fn with_params(config: TrainConfig, params: ModelParams) -> Self {
        let adam = AdamState::new(&params);
        Trainer { config, params, adam }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One optimizer step on `batch`. Returns the batch loss before the
    /// update; a non-finite term aborts without touching the parameters.
    pub fn step(&mut self, batch: &[&AVSample], epoch: usize, batch_index: usize) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, true);
        let alpha = self.config.alpha as f32;
        let mut terms = Vec::with_capacity(batch.len());
        for s in batch {
            let a = g.constant(s.audio.clone());
            let v = g.constant(s.frames.clone());
            let out = forward(&mut g, &p, a, v)?;
            terms.push(total_loss(&mut g, &out, s.label, alpha, self.config.variant)?);
        }
        let mean = batch_mean(&mut g, &terms, alpha)?;
        let breakdown = LossBreakdown::read(&g, &mean);
        if let Some(term) = breakdown.non_finite_term() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batch_index,
                term,
            });
        }
        g.backward(mean.total)?;
        let grads: Vec<Option<&[f32]>> = p.vars().iter().map(|&v| g.grad(v)).collect();
        adam_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            self.config.learning_rate,
            self.config.weight_decay,
        )?;
        Ok(breakdown)
    }

    /// One pass over `samples` in the seeded order of `epoch` (1-based).
    pub fn run_epoch(&mut self, samples: &[&AVSample], epoch: usize) -> Result<EpochLog> {
        let start = Instant::now();
        let order = epoch_order(samples.len(), self.config.seed, epoch);
        let mut parts = Vec::new();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            parts.push((self.step(&batch, epoch, b)?, chunk.len()));
        }
        Ok(EpochLog {
            epoch,
            loss: LossBreakdown::weighted_mean(&parts),
            steps: parts.len(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Sample order of one epoch, from a stream derived from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, SHUFFLE_LANE, epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the end of `best_epoch`.
    pub best_params: ModelParams,
    /// 1-based epoch with the lowest mean total loss (earliest on ties).
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

pub fn train(dataset: &[VideoRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_| Ok(()))
}

/// [`train`], calling `on_epoch` after each epoch (for streaming logs).
pub fn train_with(
    dataset: &[VideoRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let samples = flatten_samples(dataset);
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    check_shapes(&samples, &config.arch)?;
    let mut trainer = Trainer::new(config.clone())?;
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let log = trainer.run_epoch(&samples, epoch)?;
        on_epoch(&log)?;
        if best.as_ref().is_none_or(|(_, loss, _)| log.loss.total < *loss) {
            best = Some((epoch, log.loss.total, trainer.params().clone()));
        }
        logs.push(log);
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        logs,
    })
}

fn check_shapes(samples: &[&AVSample], arch: &ArchConfig) -> Result<()> {
    let audio = arch.audio_input_shape();
    let frames = arch.visual_input_shape();
    for s in samples {
        if s.audio.shape() != audio.as_slice() {
            return Err(Error::shape("train", s.audio.shape(), &audio));
        }
        if s.frames.shape() != frames.as_slice() {
            return Err(Error::shape("train", s.frames.shape(), &frames));
        }
    }
    Ok(())
}

/// Mean loss of `samples` under `params`, without updating anything.
pub fn evaluate_loss(params: &ModelParams, samples: &[&AVSample], alpha: f64, variant: LossVariant) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluate_loss"));
    }
    let mut g = Graph::<f32>::new();
    let p = params.bind(&mut g, false);
    let mut terms = Vec::with_capacity(samples.len());
    for s in samples {
        let a = g.constant(s.audio.clone());
        let v = g.constant(s.frames.clone());
        let out = forward(&mut g, &p, a, v)?;
        terms.push(total_loss(&mut g, &out, s.label, alpha as f32, variant)?);
    }
    let mean = batch_mean(&mut g, &terms, alpha as f32)?;
    Ok(LossBreakdown::read(&g, &mean))
}
