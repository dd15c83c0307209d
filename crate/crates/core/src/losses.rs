//! Training objectives.
//!
//! Per sample, the total loss is `L_v + L_a + L_c + alpha * L_s`:
//!
//! * `L_a`, `L_v`: cross-entropy of each branch's logits against the
//!   video-level label (fake if any modality was manipulated).
//! * `L_c`: contrastive loss on `d = ||f_v - f_a||^2`; `d^2` for real samples,
//!   `max(m - d, 0)^2` for fake ones, with `m = 0.99`.
//! * `L_s`: statistics-aware loss on the per-vector means and standard
//!   deviations; `(mu_a - mu_v)^2` for real, `max(sigma_a + sigma_v - (mu_a - mu_v)^2, 0)`
//!   for fake. The fake branch subtracts the *squared* mean gap and the hinge
//!   is not squared, unlike `L_c`.
//! * KL variant of `L_s`: `KL(softmax(f_a) || softmax(f_v))`.
//!
//! Batch losses are arithmetic means of per-sample losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Forward;
use crate::tensor::{Graph, Scalar, Var};

/// Margin of the contrastive feature loss.
pub const CONTRASTIVE_MARGIN: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Class {
    Real,
    Fake,
}

impl Class {
    /// Logit index: 0 for real, 1 for fake.
    pub fn index(self) -> usize {
        match self {
            Class::Real => 0,
            Class::Fake => 1,
        }
    }
}

/// Which modality of a fake sample was manipulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    AudioOnly,
    VisualOnly,
    Both,
    None,
}

/// Ground truth. A label is real exactly when its provenance is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(Class, Provenance)", into = "(Class, Provenance)")]
pub struct Label {
    class: Class,
    provenance: Provenance,
}

impl Label {
    pub fn new(class: Class, provenance: Provenance) -> Result<Self> {
        match (class, provenance) {
            (Class::Real, Provenance::None) => Ok(Label { class, provenance }),
            (Class::Fake, p) if p != Provenance::None => Ok(Label { class, provenance }),
            _ => Err(Error::Config(format!("inconsistent label {class} with provenance {provenance}"))),
        }
    }

    pub fn real() -> Self {
        Label {
            class: Class::Real,
            provenance: Provenance::None,
        }
    }

    pub fn fake(provenance: Provenance) -> Result<Self> {
        Self::new(Class::Fake, provenance)
    }

    pub fn class(&self) -> Class {
        self.class
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_fake(&self) -> bool {
        self.class == Class::Fake
    }
}

impl TryFrom<(Class, Provenance)> for Label {
    type Error = Error;

    fn try_from((c, p): (Class, Provenance)) -> Result<Self> {
        Label::new(c, p)
    }
}

impl From<Label> for (Class, Provenance) {
    fn from(l: Label) -> Self {
        (l.class, l.provenance)
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Real => "REAL",
            Class::Fake => "FAKE",
        })
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "REAL" => Ok(Class::Real),
            "FAKE" => Ok(Class::Fake),
            _ => Err(Error::Malformed(format!("unknown label `{s}`"))),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::AudioOnly => "AUDIO_ONLY",
            Provenance::VisualOnly => "VISUAL_ONLY",
            Provenance::Both => "BOTH",
            Provenance::None => "NONE",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AUDIO_ONLY" => Ok(Provenance::AudioOnly),
            "VISUAL_ONLY" => Ok(Provenance::VisualOnly),
            "BOTH" => Ok(Provenance::Both),
            "NONE" => Ok(Provenance::None),
            _ => Err(Error::Malformed(format!("unknown provenance `{s}`"))),
        }
    }
}

/// Which statistics term joins the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Mean/std statistics-aware loss.
    #[default]
    Stats,
    /// KL divergence between softmaxed feature vectors.
    Kl,
    /// No statistics term (baseline objective).
    None,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Stats => "stats",
            LossVariant::Kl => "kl",
            LossVariant::None => "none",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stats" => Ok(LossVariant::Stats),
            "kl" => Ok(LossVariant::Kl),
            "none" => Ok(LossVariant::None),
            _ => Err(Error::Config(format!("unknown loss variant `{s}` (expected stats, kl or none)"))),
        }
    }
}

/// `-log_softmax(logits)[label]`.
pub fn cross_entropy<S: Scalar>(g: &mut Graph<S>, logits: Var, label: Label) -> Result<Var> {
    if g.value(logits).shape() != [2] {
        return Err(Error::shape("cross_entropy", g.shape(logits), &[2]));
    }
    let log_probs = g.log_softmax(logits)?;
    let picked = g.pick(log_probs, label.class().index())?;
    g.scale(picked, -S::one())
}

/// `d^2` (real) or `max(margin - d, 0)^2` (fake), `d = ||f_v - f_a||^2`.
pub fn contrastive_feature_loss<S: Scalar>(
    g: &mut Graph<S>,
    audio: Var,
    visual: Var,
    label: Label,
    margin: S,
) -> Result<Var> {
    if margin <= S::zero() {
        return Err(Error::invalid("contrastive_feature_loss", "margin must be positive"));
    }
    let d = g.l2_sq_distance(visual, audio)?;
    match label.class() {
        Class::Real => g.square(d),
        Class::Fake => {
            let neg = g.scale(d, -S::one())?;
            let gap = g.offset(neg, margin)?;
            let hinge = g.relu(gap)?;
            g.square(hinge)
        }
    }
}

/// Statistics-aware loss with the adaptive margin `sigma_a + sigma_v`.
pub fn statistics_aware_loss<S: Scalar>(g: &mut Graph<S>, audio: Var, visual: Var, label: Label) -> Result<Var> {
    if g.shape(audio) != g.shape(visual) {
        return Err(Error::shape("statistics_aware_loss", g.shape(audio), g.shape(visual)));
    }
    let (mu_a, sigma_a) = g.mean_std(audio)?;
    let (mu_v, sigma_v) = g.mean_std(visual)?;
    let gap = g.sub(mu_a, mu_v)?;
    let gap_sq = g.square(gap)?;
    match label.class() {
        Class::Real => Ok(gap_sq),
        Class::Fake => {
            let margin = g.add(sigma_v, sigma_a)?;
            let slack = g.sub(margin, gap_sq)?;
            g.relu(slack)
        }
    }
}

/// `KL(P_a || P_v)` where `P = softmax(f)`, computed from log-probabilities.
pub fn kl_variant_loss<S: Scalar>(g: &mut Graph<S>, audio: Var, visual: Var) -> Result<Var> {
    if g.shape(audio) != g.shape(visual) {
        return Err(Error::shape("kl_variant_loss", g.shape(audio), g.shape(visual)));
    }
    let log_pa = g.log_softmax(audio)?;
    let log_pv = g.log_softmax(visual)?;
    let pa = g.exp(log_pa)?;
    let log_ratio = g.sub(log_pa, log_pv)?;
    let terms = g.mul(pa, log_ratio)?;
    g.sum(terms)
}

/// Scalar loss nodes of one sample or one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub audio_ce: Var,
    pub visual_ce: Var,
    pub contrastive: Var,
    /// Absent for [`LossVariant::None`].
    pub statistics: Option<Var>,
    pub total: Var,
}

pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    out: &Forward,
    label: Label,
    alpha: S,
    variant: LossVariant,
) -> Result<LossTerms> {
    if alpha < S::zero() {
        return Err(Error::invalid("total_loss", "alpha must be non-negative"));
    }
    let audio_ce = cross_entropy(g, out.audio_logits, label)?;
    let visual_ce = cross_entropy(g, out.visual_logits, label)?;
    let margin = S::from_f64_lossy(CONTRASTIVE_MARGIN);
    let contrastive = contrastive_feature_loss(g, out.audio_features, out.visual_features, label, margin)?;
    let statistics = match variant {
        LossVariant::Stats => Some(statistics_aware_loss(g, out.audio_features, out.visual_features, label)?),
        LossVariant::Kl => Some(kl_variant_loss(g, out.audio_features, out.visual_features)?),
        LossVariant::None => None,
    };
    combine(g, audio_ce, visual_ce, contrastive, statistics, alpha)
}

/// Averages per-sample terms over a batch.
pub fn batch_mean<S: Scalar>(g: &mut Graph<S>, samples: &[LossTerms], alpha: S) -> Result<LossTerms> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("batch_mean"));
    }
    let mean = |g: &mut Graph<S>, pick: fn(&LossTerms) -> Var| {
        let vars: Vec<Var> = samples.iter().map(pick).collect();
        g.mean_of(&vars)
    };
    let audio_ce = mean(g, |t| t.audio_ce)?;
    let visual_ce = mean(g, |t| t.visual_ce)?;
    let contrastive = mean(g, |t| t.contrastive)?;
    let statistics = match samples[0].statistics {
        Some(_) => {
            let vars: Vec<Var> = samples
                .iter()
                .map(|t| t.statistics.ok_or_else(|| Error::invalid("batch_mean", "mixed loss variants")))
                .collect::<Result<_>>()?;
            Some(g.mean_of(&vars)?)
        }
        None => None,
    };
    combine(g, audio_ce, visual_ce, contrastive, statistics, alpha)
}

fn combine<S: Scalar>(
    g: &mut Graph<S>,
    audio_ce: Var,
    visual_ce: Var,
    contrastive: Var,
    statistics: Option<Var>,
    alpha: S,
) -> Result<LossTerms> {
    let mut parts = vec![visual_ce, audio_ce, contrastive];
    if let Some(s) = statistics {
        parts.push(g.scale(s, alpha)?);
    }
    let total = g.add_n(&parts)?;
    Ok(LossTerms {
        audio_ce,
        visual_ce,
        contrastive,
        statistics,
        total,
    })
}

/// Numeric values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub audio_ce: f64,
    pub visual_ce: f64,
    pub contrastive: f64,
    pub statistics: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn read<S: Scalar>(g: &Graph<S>, terms: &LossTerms) -> Self {
        LossBreakdown {
            audio_ce: g.item(terms.audio_ce).as_f64(),
            visual_ce: g.item(terms.visual_ce).as_f64(),
            contrastive: g.item(terms.contrastive).as_f64(),
            statistics: terms.statistics.map_or(0.0, |s| g.item(s).as_f64()),
            total: g.item(terms.total).as_f64(),
        }
    }

    /// The first non-finite term, by name.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("L_a", self.audio_ce),
            ("L_v", self.visual_ce),
            ("L_c", self.contrastive),
            ("L_s", self.statistics),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }

    /// Weighted mean of breakdowns (weights are sample counts).
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> Self {
        let n: usize = parts.iter().map(|(_, w)| w).sum();
        let mut out = LossBreakdown::default();
        if n == 0 {
            return out;
        }
        for (b, w) in parts {
            let w = *w as f64;
            out.audio_ce += b.audio_ce * w;
            out.visual_ce += b.visual_ce * w;
            out.contrastive += b.contrastive * w;
            out.statistics += b.statistics * w;
            out.total += b.total * w;
        }
        let n = n as f64;
        out.audio_ce /= n;
        out.visual_ce /= n;
        out.contrastive /= n;
        out.statistics /= n;
        out.total /= n;
        out
    }
}

#[cfg(test)]
mod tests;
