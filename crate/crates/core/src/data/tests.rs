use std::collections::HashSet;

use super::synth::{allocate_labels, derive_seed, pearson, rotate, sine_table, TABLE_LEN};
use super::*;
use crate::losses::Provenance;

fn small_config() -> GenConfig {
    GenConfig {
        train_videos: 40,
        test_videos: 10,
        ..GenConfig::default()
    }
}

fn counting_streams(n_frames: usize, spf: usize) -> (Tensor<f32>, Tensor<f32>) {
    let audio = Tensor::new(vec![n_frames * spf, 1], (0..n_frames * spf).map(|i| i as f32).collect()).unwrap();
    let frames = Tensor::new(vec![n_frames, 1, 2, 2], (0..n_frames * 4).map(|i| i as f32).collect()).unwrap();
    (audio, frames)
}

#[test]
fn partial_window_is_dropped() {
    let window = Window { audio_len: 20, frames: 4 };
    // 3.5 windows
    let (audio, frames) = counting_streams(14, 5);
    let subs = extract_subsequences("v", Label::real(), &audio, &frames, window).unwrap();
    assert_eq!(subs.len(), 3);
    let (audio, frames) = counting_streams(4, 5);
    assert_eq!(extract_subsequences("v", Label::real(), &audio, &frames, window).unwrap().len(), 1);
}

#[test]
fn short_stream_is_rejected() {
    let window = Window { audio_len: 20, frames: 4 };
    let (audio, frames) = counting_streams(3, 5);
    let err = extract_subsequences("v", Label::real(), &audio, &frames, window).unwrap_err();
    assert!(matches!(err, Error::StreamTooShort { available: 3, window: 4, .. }), "{err}");
}

#[test]
fn misaligned_streams_are_rejected() {
    let window = Window { audio_len: 20, frames: 4 };
    let (audio, _) = counting_streams(8, 5);
    let (_, frames) = counting_streams(9, 5);
    assert!(extract_subsequences("v", Label::real(), &audio, &frames, window).is_err());
    assert!(Window { audio_len: 21, frames: 4 }.samples_per_frame().is_err());
}

#[test]
fn subsequences_start_at_the_same_instant() {
    let window = Window { audio_len: 20, frames: 4 };
    let spf = 5;
    let (audio, frames) = counting_streams(14, spf);
    for (i, s) in extract_subsequences("v", Label::real(), &audio, &frames, window)
        .unwrap()
        .iter()
        .enumerate()
    {
        assert_eq!(s.subseq_index, i);
        // first audio sample index / audio rate == first frame index / frame rate
        let audio_start = s.audio.data()[0] as usize;
        let frame_start = s.frames.data()[0] as usize / 4;
        assert_eq!(audio_start, frame_start * spf);
        assert_eq!(frame_start, i * window.frames);
        assert_eq!(s.audio.shape(), [20, 1]);
        assert_eq!(s.frames.shape(), [4, 1, 2, 2]);
    }
}

#[test]
fn sine_table_matches_reference() {
    let table = sine_table();
    for (i, &v) in table.iter().enumerate() {
        let reference = (2.0 * std::f64::consts::PI * i as f64 / TABLE_LEN as f64).sin();
        assert!((v as f64 - reference).abs() < 1e-7, "index {i}");
    }
}

#[test]
fn helpers() {
    assert_eq!(rotate(&[1.0, 2.0, 3.0, 4.0], 1), vec![2.0, 3.0, 4.0, 1.0]);
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]) - 0.999).abs() < 1e-2);
    assert_eq!(pearson(&[1.0, 1.0], &[0.0, 3.0]), 0.0);
    let seeds: HashSet<u64> = (0..2).flat_map(|s| (0..100).map(move |i| derive_seed(42, s, i))).collect();
    assert_eq!(seeds.len(), 200);
}

#[test]
fn label_counts_are_exact() {
    let cfg = GenConfig::default();
    let mut rng = rand::SeedableRng::seed_from_u64(1);
    let labels = allocate_labels(200, &cfg, &mut rng);
    let count = |p: Provenance| labels.iter().filter(|l| l.provenance() == p).count();
    assert_eq!(count(Provenance::None), 100);
    assert_eq!(count(Provenance::AudioOnly), 40);
    assert_eq!(count(Provenance::VisualOnly), 40);
    assert_eq!(count(Provenance::Both), 20);
    // 25 fakes: 10 / 10 / 5
    let labels = allocate_labels(50, &cfg, &mut rng);
    assert_eq!(labels.iter().filter(|l| l.is_fake()).count(), 25);
    assert_eq!(labels.iter().filter(|l| l.provenance() == Provenance::Both).count(), 5);
}

#[test]
fn generation_is_deterministic_and_well_formed() {
    let cfg = small_config();
    let (train, test) = generate_synthetic_dataset(&cfg, 42).unwrap();
    let (train2, test2) = generate_synthetic_dataset(&cfg, 42).unwrap();
    assert_eq!(train, train2);
    assert_eq!(test, test2);
    assert_eq!(train.len(), 40);
    assert_eq!(test.len(), 10);
    let ids: HashSet<&str> = train.iter().map(|v| v.video_id.as_str()).collect();
    assert!(test.iter().all(|v| !ids.contains(v.video_id.as_str())));
    for v in train.iter().chain(&test) {
        assert_eq!(v.label.is_fake(), v.label.provenance() != Provenance::None);
        assert!(v.audio.all_finite() && v.frames.all_finite());
        assert_eq!(v.frames.shape(), [28, 3, 32, 32]);
        assert_eq!(v.audio.shape(), [28 * 200, 1]);
        let rec = v.to_record(cfg.window()).unwrap();
        assert_eq!(rec.n_subsequences(), 3);
        assert!(rec.subsequences.iter().all(|s| s.label == v.label));
    }
    let (other, _) = generate_synthetic_dataset(&cfg, 43).unwrap();
    assert_ne!(other[0].audio, train[0].audio);
}

#[test]
fn real_videos_align_and_audio_fakes_do_not() {
    let cfg = GenConfig {
        train_videos: 60,
        test_videos: 1,
        ..GenConfig::default()
    };
    let (train, _) = generate_synthetic_dataset(&cfg, 7).unwrap();
    let mut seen = [0usize; 4];
    for v in &train {
        let r = audio_visual_correlation(v).unwrap();
        match v.label.provenance() {
            Provenance::None => {
                seen[0] += 1;
                assert!(r > 0.9, "{} real correlation {r}", v.video_id);
            }
            Provenance::AudioOnly => {
                seen[1] += 1;
                assert!(r < 0.5, "{} audio-only correlation {r}", v.video_id);
                assert!(v.params.audio_shift >= 2);
            }
            Provenance::VisualOnly => {
                seen[2] += 1;
                assert!(r < 0.5, "{} visual-only correlation {r}", v.video_id);
            }
            Provenance::Both => {
                seen[3] += 1;
                assert!(r < 0.5, "{} both correlation {r}", v.video_id);
            }
        }
    }
    assert!(seen.iter().all(|&n| n > 0));
}

#[test]
fn all_real_when_fake_ratio_is_zero() {
    let cfg = GenConfig {
        train_videos: 5,
        test_videos: 5,
        fake_ratio: 0.0,
        ..GenConfig::default()
    };
    let (train, test) = generate_synthetic_dataset(&cfg, 1).unwrap();
    assert!(train.iter().chain(&test).all(|v| !v.label.is_fake()));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        GenConfig { fake_ratio: 1.5, ..GenConfig::default() },
        GenConfig { provenance_mix: [0.5, 0.5, 0.5], ..GenConfig::default() },
        GenConfig { provenance_mix: [1.2, -0.2, 0.0], ..GenConfig::default() },
        GenConfig { train_videos: 0, ..GenConfig::default() },
        GenConfig { audio_window: 1601, ..GenConfig::default() },
        GenConfig { noise: f32::NAN, ..GenConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(generate_synthetic_dataset(&cfg, 0), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn arch_shapes_must_match() {
    let arch = crate::model::ArchConfig::reduced();
    assert!(GenConfig::default().check_matches(&arch).is_err());
    let cfg = GenConfig::for_arch(&arch);
    cfg.check_matches(&arch).unwrap();
    assert_eq!(cfg.window(), Window::from_arch(&arch));
}

#[test]
fn split_round_trips_through_disk() {
    let cfg = GenConfig {
        train_videos: 4,
        test_videos: 2,
        ..GenConfig::for_arch(&crate::model::ArchConfig::reduced())
    };
    let (train, test) = generate_synthetic_dataset(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_split(dir.path(), "train", &train).unwrap();
    write_split(dir.path(), "test", &test).unwrap();
    assert_eq!(m.entries.len(), 4);
    let (manifest, back) = read_split(dir.path(), "train").unwrap();
    assert_eq!(manifest, m);
    assert_eq!(back, train);
    let (_, back) = read_split(dir.path(), "test").unwrap();
    assert_eq!(back, test);

    let text = std::fs::read_to_string(dir.path().join("train/manifest.tsv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "#sadd-manifest\tversion=1\tsplit=train");
    assert_eq!(
        lines.next().unwrap(),
        "video_id\tlabel\tprovenance\tvideo_seed\taudio_shift\tvisual_envelope\taudio_path\tframes_path"
    );
    assert!(lines.next().unwrap().starts_with("train-0000\t"));

    let dir2 = tempfile::tempdir().unwrap();
    write_split(dir2.path(), "train", &train).unwrap();
    for name in ["manifest.tsv", "train-0001.audio.sdt", "train-0001.frames.sdt"] {
        let a = std::fs::read(dir.path().join("train").join(name)).unwrap();
        let b = std::fs::read(dir2.path().join("train").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn broken_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("train");
    std::fs::create_dir_all(&split).unwrap();
    let header = "video_id\tlabel\tprovenance\tvideo_seed\taudio_shift\tvisual_envelope\taudio_path\tframes_path\n";
    let row = |id: &str, label: &str, prov: &str| format!("{id}\t{label}\t{prov}\t1\t0\tshared\ta.sdt\tf.sdt\n");
    let cases = [
        format!("{header}{}", row("a", "REAL", "NONE")),
        format!("#sadd-manifest\tversion=1\tsplit=train\n{header}{}", row("a", "REAL", "AUDIO_ONLY")),
        format!("#sadd-manifest\tversion=1\tsplit=train\n{header}{}{}", row("a", "REAL", "NONE"), row("a", "REAL", "NONE")),
        format!("#sadd-manifest\tversion=1\tsplit=test\n{header}{}", row("a", "REAL", "NONE")),
        format!("#sadd-manifest\tversion=1\tsplit=train\n{header}{}", row("a", "MAYBE", "NONE")),
    ];
    for text in cases {
        std::fs::write(split.join("manifest.tsv"), &text).unwrap();
        assert!(matches!(read_split(dir.path(), "train"), Err(Error::Malformed(_))), "{text}");
    }
    std::fs::write(split.join("manifest.tsv"), format!("#sadd-manifest\tversion=9\tsplit=train\n{header}")).unwrap();
    assert!(matches!(read_split(dir.path(), "train"), Err(Error::UnsupportedVersion(9))));
    std::fs::write(split.join("manifest.tsv"), format!("#sadd-manifest\tversion=1\tsplit=train\n{header}{}", row("a", "REAL", "NONE"))).unwrap();
    assert!(matches!(read_split(dir.path(), "train"), Err(Error::Io { .. })));
}
