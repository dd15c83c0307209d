//! Video scoring, score post-processing, AUC and feature diagnostics.
//!
//! Scores are fakeness scores throughout: a larger audio-visual distance
//! means a more likely fake, and FAKE is the positive class for AUC.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AVSample, VideoRecord};
use crate::error::{Error, Result};
use crate::losses::Class;
use crate::model::ModelParams;
use crate::report::format_sig;

/// Squared distance between the visual and audio features of one subsequence.
pub fn subsequence_distance(params: &ModelParams, sample: &AVSample) -> Result<f64> {
    let (fa, fv) = params.features(&sample.audio, &sample.frames)?;
    Ok(fa.iter().zip(&fv).map(|(&a, &v)| (v as f64 - a as f64).powi(2)).sum())
}

/// Mean subsequence distance of a video.
pub fn video_score(params: &ModelParams, video: &VideoRecord) -> Result<f64> {
    if video.subsequences.is_empty() {
        return Err(Error::EmptyVideo(video.video_id.clone()));
    }
    let mut total = 0.0;
    for s in &video.subsequences {
        total += subsequence_distance(params, s)?;
    }
    Ok(total / video.subsequences.len() as f64)
}

/// Scores every video in parallel; results keep the input order.
pub fn score_videos(params: &ModelParams, videos: &[VideoRecord]) -> Result<Vec<f64>> {
    videos.par_iter().map(|v| video_score(params, v)).collect()
}

/// Range of training-set scores used for min-max normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNormalizer")]
pub struct ScoreNormalizer {
    min: f64,
    max: f64,
}

#[derive(Deserialize)]
struct RawNormalizer {
    min: f64,
    max: f64,
}

impl TryFrom<RawNormalizer> for ScoreNormalizer {
    type Error = Error;
    fn try_from(r: RawNormalizer) -> Result<Self> {
        ScoreNormalizer::new(r.min, r.max)
    }
}

impl ScoreNormalizer {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::invalid("ScoreNormalizer", format!("need finite min <= max, got ({min}, {max})")));
        }
        Ok(ScoreNormalizer { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// True when every training score was identical.
    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

pub fn fit_normalizer(train_scores: &[f64]) -> Result<ScoreNormalizer> {
    if train_scores.is_empty() {
        return Err(Error::EmptyInput("fit_normalizer"));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &x in train_scores {
        if !x.is_finite() {
            return Err(Error::invalid("fit_normalizer", format!("non-finite score {x}")));
        }
        min = min.min(x);
        max = max.max(x);
    }
    ScoreNormalizer::new(min, max)
}

/// Min-max scaling into `[0, 1]`, clipped. A degenerate range carries no
/// information and maps everything to 0.5.
pub fn normalize_score(mu_d: f64, normalizer: &ScoreNormalizer) -> f64 {
    if normalizer.is_degenerate() {
        return 0.5;
    }
    let s = (mu_d - normalizer.min) / (normalizer.max - normalizer.min);
    // NaN falls through clamp untouched; treat it as maximally fake
    if s.is_nan() {
        1.0
    } else {
        s.clamp(0.0, 1.0)
    }
}

/// Thresholded decision: 1 (real) below `tau`, 0 (fake) at or above it.
pub fn threshold_score(mu_d: f64, tau: f64) -> u8 {
    u8::from(mu_d < tau)
}

/// Threshold picked from the training scores and its training accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub tau: f64,
    pub accuracy: f64,
}

/// Tries every training score as the threshold, plus one above the maximum
/// (everything real). Ties in accuracy go to the smaller threshold.
pub fn best_threshold(train: &[(f64, Class)]) -> Result<ThresholdFit> {
    if train.is_empty() {
        return Err(Error::EmptyInput("best_threshold"));
    }
    if let Some((x, _)) = train.iter().find(|(x, _)| !x.is_finite()) {
        return Err(Error::invalid("best_threshold", format!("non-finite score {x}")));
    }
    let mut sorted: Vec<(f64, Class)> = train.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    // tau = sorted[0]: everything is called fake
    let mut correct = sorted.iter().filter(|(_, c)| *c == Class::Fake).count();
    let mut best = ThresholdFit {
        tau: sorted[0].0,
        accuracy: correct as f64 / n as f64,
    };
    let mut i = 0;
    while i < n {
        // move the whole run of equal scores below the threshold
        let x = sorted[i].0;
        while i < n && sorted[i].0 == x {
            match sorted[i].1 {
                Class::Real => correct += 1,
                Class::Fake => correct -= 1,
            }
            i += 1;
        }
        let tau = if i < n { sorted[i].0 } else { next_up(x) };
        let accuracy = correct as f64 / n as f64;
        if accuracy > best.accuracy {
            best = ThresholdFit { tau, accuracy };
        }
    }
    Ok(best)
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub video_id: String,
    pub label: Class,
    /// Raw mean distance.
    pub mu_d: f64,
    /// Normalized fakeness in `[0, 1]`.
    pub s: f64,
}

/// Scores and normalizes every video, in input order.
pub fn score_records(
    params: &ModelParams,
    videos: &[VideoRecord],
    normalizer: &ScoreNormalizer,
) -> Result<Vec<ScoreRecord>> {
    let scores = score_videos(params, videos)?;
    Ok(videos
        .iter()
        .zip(scores)
        .map(|(v, mu_d)| ScoreRecord {
            video_id: v.video_id.clone(),
            label: v.label.class(),
            mu_d,
            s: normalize_score(mu_d, normalizer),
        })
        .collect())
}

/// AUC of the normalized score `s`.
pub fn compute_auc(records: &[ScoreRecord]) -> Result<f64> {
    let ranked: Vec<(f64, Class)> = records.iter().map(|r| (r.s, r.label)).collect();
    auc(&ranked)
}

/// AUC of the raw mean distance.
pub fn compute_raw_auc(records: &[ScoreRecord]) -> Result<f64> {
    let ranked: Vec<(f64, Class)> = records.iter().map(|r| (r.mu_d, r.label)).collect();
    auc(&ranked)
}

/// Mann-Whitney AUC with FAKE as the positive class and half credit for
/// ties, from midranks after one sort.
pub fn auc(scores: &[(f64, Class)]) -> Result<f64> {
    let n_fake = scores.iter().filter(|(_, c)| *c == Class::Fake).count();
    let n_real = scores.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::SingleClass { n_fake, n_real });
    }
    if let Some((x, _)) = scores.iter().find(|(x, _)| x.is_nan()) {
        return Err(Error::invalid("auc", format!("unrankable score {x}")));
    }
    let mut sorted: Vec<&(f64, Class)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    // ranks are 1-based; a tie block spanning ranks i+1..=j gets (i+1+j)/2
    let mut fake_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let fakes = sorted[i..j].iter().filter(|(_, c)| *c == Class::Fake).count();
        fake_rank_sum += midrank * fakes as f64;
        i = j;
    }
    let (nf, nr) = (n_fake as f64, n_real as f64);
    Ok((fake_rank_sum - nf * (nf + 1.0) / 2.0) / (nf * nr))
}

pub const SCORES_CSV_HEADER: [&str; 4] = ["video_id", "label", "mu_d", "s"];

pub fn write_scores_csv(w: impl Write, records: &[ScoreRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| Error::Malformed(format!("writing scores: {e}"));
    out.write_record(SCORES_CSV_HEADER).map_err(wrap)?;
    for r in records {
        out.write_record([r.video_id.clone(), r.label.to_string(), format_sig(r.mu_d), format_sig(r.s)])
            .map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::Malformed(format!("writing scores: {e}")))
}

pub fn read_scores_csv(r: impl Read) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| Error::Malformed(format!("scores header: {e}")))?;
    if header.iter().ne(SCORES_CSV_HEADER) {
        return Err(Error::Malformed(format!("scores header is {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Malformed(format!("scores row {}: {e}", line + 1)))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |what: &str| Error::Malformed(format!("scores row {}: bad {what}", line + 1));
        let s: f64 = field(3).parse().map_err(|_| bad("s"))?;
        if !(0.0..=1.0).contains(&s) {
            return Err(bad("s"));
        }
        out.push(ScoreRecord {
            video_id: field(0).to_owned(),
            label: field(1).parse().map_err(|_| bad("label"))?,
            mu_d: field(2).parse().map_err(|_| bad("mu_d"))?,
            s,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            _ => Err(Error::Config(format!("unknown modality `{s}`"))),
        }
    }
}

/// Uniform binning over `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { bins: 40, lo: -1.0, hi: 3.0 }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid(
                "histogram",
                format!("need bins >= 1 and finite lo < hi, got {} bins over ({}, {})", self.bins, self.lo, self.hi),
            ));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let width = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins)
            .map(|i| if i == self.bins { self.hi } else { self.lo + width * i as f64 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub sample_id: String,
    pub label: Class,
    pub modality: Modality,
    pub spec: HistogramSpec,
    pub counts: Vec<usize>,
}

/// Counts the features into uniform bins; values outside the range land in
/// the edge bins.
pub fn export_feature_histogram(
    sample_id: &str,
    label: Class,
    modality: Modality,
    features: &[f32],
    spec: HistogramSpec,
) -> Result<FeatureHistogram> {
    spec.validate()?;
    let mut counts = vec![0; spec.bins];
    let scale = spec.bins as f64 / (spec.hi - spec.lo);
    for &x in features {
        if x.is_nan() {
            return Err(Error::invalid("histogram", format!("NaN feature in sample `{sample_id}`")));
        }
        let pos = ((x as f64 - spec.lo) * scale).floor();
        let bin = if pos < 0.0 { 0 } else { (pos as usize).min(spec.bins - 1) };
        counts[bin] += 1;
    }
    Ok(FeatureHistogram {
        sample_id: sample_id.to_owned(),
        label,
        modality,
        spec,
        counts,
    })
}

/// `<video_id>#<subsequence index>`
pub fn sample_id(sample: &AVSample) -> String {
    format!("{}#{}", sample.video_id, sample.subseq_index)
}

/// Audio then visual histogram of one subsequence.
pub fn sample_histograms(params: &ModelParams, sample: &AVSample, spec: HistogramSpec) -> Result<[FeatureHistogram; 2]> {
    let (fa, fv) = params.features(&sample.audio, &sample.frames)?;
    let id = sample_id(sample);
    let class = sample.label.class();
    Ok([
        export_feature_histogram(&id, class, Modality::Audio, &fa, spec)?,
        export_feature_histogram(&id, class, Modality::Visual, &fv, spec)?,
    ])
}

pub const HISTOGRAM_CSV_HEADER: [&str; 6] = ["sample_id", "label", "modality", "bin_lo", "bin_hi", "count"];

pub fn write_histogram_csv(w: impl Write, histograms: &[FeatureHistogram]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| Error::Malformed(format!("writing histograms: {e}"));
    out.write_record(HISTOGRAM_CSV_HEADER).map_err(wrap)?;
    for h in histograms {
        let edges = h.spec.edges();
        for (i, c) in h.counts.iter().enumerate() {
            out.write_record([
                h.sample_id.clone(),
                h.label.to_string(),
                h.modality.to_string(),
                format_sig(edges[i]),
                format_sig(edges[i + 1]),
                c.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    out.flush().map_err(|e| Error::Malformed(format!("writing histograms: {e}")))
}

/// First-order feature statistics of one subsequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// `|mean(audio) - mean(visual)|`
    pub mean_gap: f64,
    /// `std(audio) + std(visual)`, population std.
    pub std_sum: f64,
}

pub fn feature_stats(params: &ModelParams, sample: &AVSample) -> Result<FeatureStats> {
    let (fa, fv) = params.features(&sample.audio, &sample.frames)?;
    let (ma, sa) = mean_std(&fa);
    let (mv, sv) = mean_std(&fv);
    Ok(FeatureStats {
        mean_gap: (ma - mv).abs(),
        std_sum: sa + sv,
    })
}

fn mean_std(x: &[f32]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    /// Linear interpolation between order statistics; `None` when empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quartiles {
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparation {
    pub samples: usize,
    pub mean_gap: Quartiles,
    pub std_sum: Quartiles,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub real: Option<ClassSeparation>,
    pub fake: Option<ClassSeparation>,
}

/// Per-class quartiles of the feature statistics over all subsequences.
pub fn separation_report(params: &ModelParams, videos: &[VideoRecord]) -> Result<SeparationReport> {
    let samples: Vec<&AVSample> = videos.iter().flat_map(|v| &v.subsequences).collect();
    let stats: Vec<FeatureStats> = samples
        .par_iter()
        .map(|s| feature_stats(params, s))
        .collect::<Result<_>>()?;
    let class = |c: Class| {
        let picked: Vec<&FeatureStats> =
            samples.iter().zip(&stats).filter(|(s, _)| s.label.class() == c).map(|(_, st)| st).collect();
        let gaps: Vec<f64> = picked.iter().map(|s| s.mean_gap).collect();
        let sums: Vec<f64> = picked.iter().map(|s| s.std_sum).collect();
        Some(ClassSeparation {
            samples: picked.len(),
            mean_gap: Quartiles::of(&gaps)?,
            std_sum: Quartiles::of(&sums)?,
        })
    };
    Ok(SeparationReport {
        real: class(Class::Real),
        fake: class(Class::Fake),
    })
}

#[cfg(test)]
mod tests;
