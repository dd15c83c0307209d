use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sadd::data::{generate_synthetic_dataset, read_split, to_records, write_split, RawVideo, VideoRecord, Window};
use sadd::inference::{
    best_threshold, compute_auc, compute_raw_auc, fit_normalizer, sample_histograms, sample_id, score_records,
    score_videos, separation_report, threshold_score, write_histogram_csv, write_scores_csv, FeatureHistogram,
    ScoreNormalizer, SeparationReport, ThresholdFit,
};
use sadd::losses::{Class, Provenance};
use sadd::model::{read_checkpoint, write_checkpoint, ModelParams};
use sadd::report::format_sig;
use sadd::trainer::{train_with, TrainOutcome, EPOCH_CSV_HEADER};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::meta::{prepare_out_dir, split_digest, RunMeta};
use crate::{Command, Common, Failure};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { common } => generate(&common),
        Command::Train {
            common,
            data,
            variant,
            alpha,
        } => train(&common, &data, variant, alpha),
        Command::Eval {
            common,
            run,
            data,
            split,
        } => eval(&common, &run, &data, &split),
        Command::Hist {
            common,
            run,
            data,
            split,
            samples,
        } => hist(&common, &run, &data, &split, &samples),
        Command::SweepAlpha {
            common,
            data,
            alphas,
            variant,
        } => sweep_alpha(&common, &data, alphas, variant),
    }
}

fn set_threads(n: usize) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn split_summary(name: &str, videos: &[RawVideo]) -> String {
    let count = |p: Provenance| videos.iter().filter(|v| v.label.provenance() == p).count();
    let real = count(Provenance::None);
    format!(
        "{name}: {} videos, {real} REAL, {} FAKE ({} AUDIO_ONLY, {} VISUAL_ONLY, {} BOTH)",
        videos.len(),
        videos.len() - real,
        count(Provenance::AudioOnly),
        count(Provenance::VisualOnly),
        count(Provenance::Both)
    )
}

fn generate(common: &Common) -> Result<(), Failure> {
    let cfg = common.resolve(&[])?;
    set_threads(common.threads)?;
    let out = prepare_out_dir(&common.out, common.force, &["train", "test"])?;
    if cfg.data.fake_ratio == 0.0 {
        eprintln!("warning: data.fake_ratio = 0, every video is REAL and AUC is undefined on this corpus");
    }
    let (train, test) = generate_synthetic_dataset(&cfg.data, cfg.seed)?;
    let mut meta = RunMeta::new("generate", common.threads, cfg.to_table());
    for (name, videos) in [("train", &train), ("test", &test)] {
        let manifest = write_split(&out, name, videos)?;
        let manifest_sum = meta.output(&out, &format!("{name}/{}", sadd::data::MANIFEST_FILE))?;
        meta.outputs.insert(name.into(), split_digest(&out, name, &manifest)?);
        println!("{}", split_summary(name, videos));
        println!("{name} manifest sha256 {manifest_sum}");
    }
    meta.write(&out)
}

fn load_records(root: &Path, split: &str, window: Window, meta: &mut RunMeta) -> Result<Vec<VideoRecord>, Failure> {
    let (manifest, videos) = read_split(root, split)?;
    let digest = split_digest(root, split, &manifest)?;
    meta.inputs.insert(root.join(split).display().to_string(), digest);
    Ok(to_records(&videos, window)?)
}

/// What `train` stores next to the checkpoint for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerFile {
    /// Min-max range of the training-set mean distances.
    pub normalizer: ScoreNormalizer,
    pub degenerate: bool,
    /// Baseline decision rule: real when the mean distance is below `tau`.
    pub threshold: ThresholdFit,
    pub best_epoch: usize,
    pub polarity: String,
}

const POLARITY: &str = "s is a fakeness score: 0 = most real, 1 = most fake";

fn train(common: &Common, data: &Path, variant: Option<String>, alpha: Option<f64>) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(v) = variant {
        extra.push(format!("train.variant={v}"));
    }
    if let Some(a) = alpha {
        extra.push(format!("train.alpha={a:?}"));
    }
    let cfg = common.resolve(&extra)?;
    set_threads(common.threads)?;
    let out = prepare_out_dir(&common.out, common.force, &[CHECKPOINT_FILE, EPOCHS_FILE, NORMALIZER_FILE])?;
    let mut meta = RunMeta::new("train", common.threads, cfg.to_table());
    meta.argument("data", data);
    let records = load_records(data, "train", Window::from_arch(&cfg.train.arch), &mut meta)?;

    let outcome = train_logged(&records, &cfg, &out.join(EPOCHS_FILE))?;
    write_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.best_params)?;

    let scores = score_videos(&outcome.best_params, &records)?;
    let normalizer = fit_normalizer(&scores)?;
    if normalizer.is_degenerate() {
        eprintln!("warning: every training video has the same score; normalized scores will all be 0.5");
    }
    let labelled: Vec<(f64, Class)> = scores.iter().zip(&records).map(|(&s, v)| (s, v.label.class())).collect();
    let file = NormalizerFile {
        normalizer,
        degenerate: normalizer.is_degenerate(),
        threshold: best_threshold(&labelled)?,
        best_epoch: outcome.best_epoch,
        polarity: POLARITY.into(),
    };
    write_json(&out.join(NORMALIZER_FILE), &file)?;

    let best = &outcome.logs[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {}: total {} (L_a {}, L_v {}, L_c {}, L_s {})",
        outcome.best_epoch,
        outcome.logs.len(),
        format_sig(best.loss.total),
        format_sig(best.loss.audio_ce),
        format_sig(best.loss.visual_ce),
        format_sig(best.loss.contrastive),
        format_sig(best.loss.statistics)
    );
    println!(
        "train mu_d range [{}, {}], threshold {} (train accuracy {})",
        format_sig(normalizer.min()),
        format_sig(normalizer.max()),
        format_sig(file.threshold.tau),
        format_sig(file.threshold.accuracy)
    );
    for f in [CHECKPOINT_FILE, EPOCHS_FILE, NORMALIZER_FILE] {
        meta.output(&out, f)?;
    }
    meta.write(&out)
}

/// Trains while streaming the epoch log to `csv_path`.
fn train_logged(records: &[VideoRecord], cfg: &RunConfig, csv_path: &Path) -> Result<TrainOutcome, Failure> {
    let mut csv = create(csv_path)?;
    writeln!(csv, "{EPOCH_CSV_HEADER}").map_err(|e| io_failure(csv_path, e))?;
    let epochs = cfg.train.epochs;
    let outcome = train_with(records, &cfg.train, |log| {
        let row = log.csv_row();
        writeln!(csv, "{row}").and_then(|_| csv.flush()).map_err(|e| sadd::Error::io(csv_path, e))?;
        eprintln!("epoch {}/{epochs}  total {}", log.epoch, format_sig(log.loss.total));
        Ok(())
    });
    csv.flush().map_err(|e| io_failure(csv_path, e))?;
    Ok(outcome?)
}

fn load_run(run: &Path, meta: &mut RunMeta) -> Result<(ModelParams, NormalizerFile), Failure> {
    let ckpt = run.join(CHECKPOINT_FILE);
    let norm = run.join(NORMALIZER_FILE);
    for f in [&ckpt, &norm] {
        if !f.exists() {
            return Err(Failure::data(format!("{} is missing; is {} a train output?", f.display(), run.display())));
        }
    }
    meta.argument("run", run);
    meta.input(&ckpt)?;
    meta.input(&norm)?;
    let params = read_checkpoint(&ckpt)?;
    let text = std::fs::read_to_string(&norm).map_err(|e| io_failure(&norm, e))?;
    let file: NormalizerFile =
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", norm.display())))?;
    Ok((params, file))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub split: String,
    pub videos: usize,
    /// AUC of the normalized fakeness score.
    pub auc_s: f64,
    /// AUC of the raw mean distance.
    pub auc_mu_d: f64,
    /// Accuracy of the training-set threshold on this split.
    pub threshold_accuracy: f64,
    pub separation: SeparationReport,
    pub polarity: String,
}

fn eval(common: &Common, run: &Path, data: &Path, split: &str) -> Result<(), Failure> {
    let cfg = common.resolve(&[])?;
    set_threads(common.threads)?;
    let out = prepare_out_dir(&common.out, common.force, &[SCORES_FILE, METRICS_FILE])?;
    let mut meta = RunMeta::new("eval", common.threads, cfg.to_table());
    let (params, norm) = load_run(run, &mut meta)?;
    meta.argument("data", data);
    let records = load_records(data, split, Window::from_arch(params.config()), &mut meta)?;
    let scores = score_records(&params, &records, &norm.normalizer)?;
    let auc_s = compute_auc(&scores)?;
    let auc_mu_d = compute_raw_auc(&scores)?;
    let correct = scores
        .iter()
        .filter(|r| (threshold_score(r.mu_d, norm.threshold.tau) == 1) == (r.label == Class::Real))
        .count();
    let metrics = EvalMetrics {
        split: split.into(),
        videos: scores.len(),
        auc_s,
        auc_mu_d,
        threshold_accuracy: correct as f64 / scores.len() as f64,
        separation: separation_report(&params, &records)?,
        polarity: POLARITY.into(),
    };
    write_scores_csv(create(&out.join(SCORES_FILE))?, &scores)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    println!("{split}: {} videos", scores.len());
    println!("AUC (s, fakeness)  {}", format_sig(auc_s));
    println!("AUC (mu_d, raw)    {}", format_sig(auc_mu_d));
    println!("threshold accuracy {}", format_sig(metrics.threshold_accuracy));
    for f in [SCORES_FILE, METRICS_FILE] {
        meta.output(&out, f)?;
    }
    meta.write(&out)
}

/// First window of the first three real and three fake videos.
fn default_selection(records: &[VideoRecord]) -> Vec<String> {
    let mut picked = Vec::new();
    for class in [Class::Real, Class::Fake] {
        picked.extend(
            records
                .iter()
                .filter(|v| v.label.class() == class)
                .filter_map(|v| v.subsequences.first())
                .take(3)
                .map(sample_id),
        );
    }
    picked
}

fn hist(common: &Common, run: &Path, data: &Path, split: &str, requested: &[String]) -> Result<(), Failure> {
    let cfg = common.resolve(&[])?;
    set_threads(common.threads)?;
    let out = prepare_out_dir(&common.out, common.force, &[HISTOGRAMS_FILE])?;
    let mut meta = RunMeta::new("hist", common.threads, cfg.to_table());
    let (params, _) = load_run(run, &mut meta)?;
    meta.argument("data", data);
    let records = load_records(data, split, Window::from_arch(params.config()), &mut meta)?;
    let by_id: BTreeMap<String, _> = records
        .iter()
        .flat_map(|v| &v.subsequences)
        .map(|s| (sample_id(s), s))
        .collect();
    let ids = if requested.is_empty() {
        default_selection(&records)
    } else {
        requested.to_vec()
    };
    let mut series: Vec<FeatureHistogram> = Vec::with_capacity(2 * ids.len());
    for id in &ids {
        let sample = by_id.get(id).ok_or_else(|| sadd::Error::UnknownSample(id.clone()))?;
        series.extend(sample_histograms(&params, sample, cfg.hist)?);
    }
    write_histogram_csv(create(&out.join(HISTOGRAMS_FILE))?, &series)?;
    println!("{} series from {} samples of {split}", series.len(), ids.len());
    meta.output(&out, HISTOGRAMS_FILE)?;
    meta.write(&out)
}

pub const SWEEP_CSV_HEADER: &str = "alpha,variant,best_epoch,best_total,auc_s,auc_mu_d,\
real_median_mean_gap,fake_median_mean_gap,real_median_std_sum,fake_median_std_sum";

fn sweep_alpha(common: &Common, data: &Path, alphas: Option<Vec<f64>>, variant: Option<String>) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(v) = variant {
        extra.push(format!("train.variant={v}"));
    }
    if let Some(a) = &alphas {
        let list: Vec<String> = a.iter().map(|x| format!("{x:?}")).collect();
        extra.push(format!("sweep.alphas=[{}]", list.join(",")));
    }
    let cfg = common.resolve(&extra)?;
    set_threads(common.threads)?;
    let out = prepare_out_dir(&common.out, common.force, &[SWEEP_FILE])?;
    let mut meta = RunMeta::new("sweep-alpha", common.threads, cfg.to_table());
    meta.argument("data", data);
    let window = Window::from_arch(&cfg.train.arch);
    let train = load_records(data, "train", window, &mut meta)?;
    let test = load_records(data, "test", window, &mut meta)?;

    let path = out.join(SWEEP_FILE);
    let mut csv = create(&path)?;
    writeln!(csv, "{SWEEP_CSV_HEADER}").map_err(|e| io_failure(&path, e))?;
    for &alpha in &cfg.sweep.alphas {
        let mut tc = cfg.train.clone();
        tc.alpha = alpha;
        eprintln!("alpha {alpha}: training");
        let outcome = train_with(&train, &tc, |_| Ok(()))?;
        let params = &outcome.best_params;
        let normalizer = fit_normalizer(&score_videos(params, &train)?)?;
        let scores = score_records(params, &test, &normalizer)?;
        let sep = separation_report(params, &test)?;
        let median = |c: Option<sadd::inference::ClassSeparation>, gap: bool| {
            c.map_or(f64::NAN, |c| if gap { c.mean_gap.median } else { c.std_sum.median })
        };
        let row = [
            format_sig(alpha),
            tc.variant.to_string(),
            outcome.best_epoch.to_string(),
            format_sig(outcome.logs[outcome.best_epoch - 1].loss.total),
            format_sig(compute_auc(&scores)?),
            format_sig(compute_raw_auc(&scores)?),
            format_sig(median(sep.real, true)),
            format_sig(median(sep.fake, true)),
            format_sig(median(sep.real, false)),
            format_sig(median(sep.fake, false)),
        ]
        .join(",");
        println!("{row}");
        writeln!(csv, "{row}").and_then(|_| csv.flush()).map_err(|e| io_failure(&path, e))?;
    }
    drop(csv);
    meta.output(&out, SWEEP_FILE)?;
    meta.write(&out)
}
