use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::data::{generate_synthetic_dataset, to_records, GenConfig};
use crate::model::{forward, ArchConfig};
use crate::tensor::Graph;

fn pairs(fake: &[f64], real: &[f64]) -> Vec<(f64, Class)> {
    fake.iter()
        .map(|&x| (x, Class::Fake))
        .chain(real.iter().map(|&x| (x, Class::Real)))
        .collect()
}

/// Quadratic pair counting with half credit for ties.
fn brute_auc(scores: &[(f64, Class)]) -> f64 {
    let fakes: Vec<f64> = scores.iter().filter(|s| s.1 == Class::Fake).map(|s| s.0).collect();
    let reals: Vec<f64> = scores.iter().filter(|s| s.1 == Class::Real).map(|s| s.0).collect();
    let mut credit = 0.0;
    for &f in &fakes {
        for &r in &reals {
            credit += if f > r {
                1.0
            } else if f == r {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / (fakes.len() * reals.len()) as f64
}

fn reduced_videos(n: usize, seed: u64) -> Vec<VideoRecord> {
    let gen = GenConfig {
        train_videos: n,
        test_videos: 1,
        ..GenConfig::for_arch(&ArchConfig::reduced())
    };
    let (train, _) = generate_synthetic_dataset(&gen, seed).unwrap();
    to_records(&train, gen.window()).unwrap()
}

#[test]
fn auc_hand_examples() {
    assert_eq!(auc(&pairs(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
    assert_eq!(auc(&pairs(&[0.6, 0.2], &[0.4, 0.3])).unwrap(), 0.5);
    assert_eq!(auc(&pairs(&[0.3, 0.3], &[0.3, 0.3, 0.3])).unwrap(), 0.5);
    assert_eq!(auc(&pairs(&[0.1], &[0.9])).unwrap(), 0.0);
}

#[test]
fn auc_rejects_single_class_and_nan() {
    assert!(matches!(
        auc(&pairs(&[0.1, 0.2], &[])),
        Err(Error::SingleClass { n_fake: 2, n_real: 0 })
    ));
    assert!(matches!(auc(&pairs(&[], &[0.5])), Err(Error::SingleClass { n_fake: 0, n_real: 1 })));
    assert!(auc(&pairs(&[f64::NAN], &[0.5])).is_err());
}

#[test]
fn auc_matches_pair_counting_on_random_instances() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(2..=50);
        let coarse = rng.gen_bool(0.5);
        let mut scores: Vec<(f64, Class)> = (0..n)
            .map(|_| {
                // coarse scores make ties common
                let x = if coarse { rng.gen_range(0..5) as f64 } else { rng.gen::<f64>() };
                (x, if rng.gen_bool(0.5) { Class::Fake } else { Class::Real })
            })
            .collect();
        scores[0].1 = Class::Fake;
        scores[1].1 = Class::Real;
        assert!((auc(&scores).unwrap() - brute_auc(&scores)).abs() <= 1e-12);
    }
}

#[test]
fn record_aucs_use_their_own_columns() {
    let rec = |id: &str, label, mu_d, s| ScoreRecord {
        video_id: id.into(),
        label,
        mu_d,
        s,
    };
    let records = vec![
        rec("a", Class::Fake, 5.0, 1.0),
        rec("b", Class::Fake, 3.0, 1.0),
        rec("c", Class::Real, 1.0, 0.0),
        rec("d", Class::Real, 4.0, 1.0),
    ];
    assert_eq!(compute_raw_auc(&records).unwrap(), 0.75);
    // clipping ties b and d with a: credit 0.5 for (a,d) and (b,d)
    assert_eq!(compute_auc(&records).unwrap(), 0.75);
}

#[test]
fn normalizer_fit_examples() {
    let n = fit_normalizer(&[0.2, 0.8, 0.5]).unwrap();
    assert_eq!((n.min(), n.max()), (0.2, 0.8));
    assert!(!n.is_degenerate());
    let single = fit_normalizer(&[0.7]).unwrap();
    assert_eq!((single.min(), single.max()), (0.7, 0.7));
    assert!(single.is_degenerate());
    assert_eq!(normalize_score(123.0, &single), 0.5);
    assert!(matches!(fit_normalizer(&[]), Err(Error::EmptyInput(_))));
    assert!(fit_normalizer(&[0.1, f64::INFINITY]).is_err());
    assert!(ScoreNormalizer::new(1.0, 0.0).is_err());
}

#[test]
fn normalize_examples() {
    let n = ScoreNormalizer::new(0.0, 10.0).unwrap();
    assert_eq!(normalize_score(5.0, &n), 0.5);
    assert_eq!(normalize_score(12.0, &n), 1.0);
    assert_eq!(normalize_score(-1.0, &n), 0.0);
}

#[test]
fn normalizer_rejects_bad_json() {
    let ok: ScoreNormalizer = serde_json::from_str(r#"{"min":0.5,"max":2.0}"#).unwrap();
    assert_eq!(ok.max(), 2.0);
    assert!(serde_json::from_str::<ScoreNormalizer>(r#"{"min":3.0,"max":2.0}"#).is_err());
}

#[test]
fn threshold_examples() {
    assert_eq!(threshold_score(0.3, 0.5), 1);
    assert_eq!(threshold_score(0.5, 0.5), 0);
    assert_eq!(threshold_score(0.7, 0.5), 0);
}

#[test]
fn threshold_sweep_matches_brute_force() {
    let accuracy = |data: &[(f64, Class)], tau: f64| {
        let ok = data
            .iter()
            .filter(|(x, c)| (threshold_score(*x, tau) == 1) == (*c == Class::Real))
            .count();
        ok as f64 / data.len() as f64
    };
    let toy = pairs(&[0.9, 0.4, 0.7], &[0.1, 0.5, 0.3]);
    let fit = best_threshold(&toy).unwrap();
    // reals below 0.4 are 0.1 and 0.3; splitting at 0.4 gets 5 of 6
    assert_eq!(fit.tau, 0.4);
    assert_eq!(fit.accuracy, 5.0 / 6.0);

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    for _ in 0..200 {
        let data: Vec<(f64, Class)> = (0..6)
            .map(|_| {
                let c = if rng.gen_bool(0.5) { Class::Fake } else { Class::Real };
                (rng.gen_range(0..6) as f64 / 4.0, c)
            })
            .collect();
        let fit = best_threshold(&data).unwrap();
        // every cut point lies on or just above a score
        let mut candidates: Vec<f64> = data.iter().map(|d| d.0).collect();
        candidates.extend(data.iter().map(|d| d.0 + 0.01));
        candidates.push(-1.0);
        let best = candidates.iter().map(|&t| accuracy(&data, t)).fold(0.0, f64::max);
        assert_eq!(fit.accuracy, best);
        assert_eq!(accuracy(&data, fit.tau), best);
    }
}

#[test]
fn zero_model_scores_zero() {
    let videos = reduced_videos(3, 1);
    let zero = ModelParams::zeros(&ArchConfig::reduced()).unwrap();
    for v in &videos {
        assert_eq!(video_score(&zero, v).unwrap(), 0.0);
    }
    let report = separation_report(&zero, &videos).unwrap();
    for class in [report.real, report.fake].into_iter().flatten() {
        assert_eq!(class.mean_gap.q3, 0.0);
        assert_eq!(class.std_sum.q3, 0.0);
    }
}

#[test]
fn video_score_is_the_mean_of_replayed_distances() {
    let videos = reduced_videos(2, 2);
    let params = ModelParams::init(&ArchConfig::reduced(), 7).unwrap();
    for v in &videos {
        let mut total = 0.0;
        for s in &v.subsequences {
            let mut g = Graph::<f64>::new();
            let p = params.bind(&mut g, false);
            let a = g.constant(s.audio.cast());
            let f = g.constant(s.frames.cast());
            let out = forward(&mut g, &p, a, f).unwrap();
            let d = g.l2_sq_distance(out.visual_features, out.audio_features).unwrap();
            total += g.item(d);
        }
        let replay = total / v.n_subsequences() as f64;
        let got = video_score(&params, v).unwrap();
        // f32 forward against the f64 replay
        assert!((got - replay).abs() <= 1e-4 * replay.max(1.0), "{got} vs {replay}");
    }
    let single = VideoRecord {
        subsequences: videos[0].subsequences[..1].to_vec(),
        ..videos[0].clone()
    };
    assert_eq!(
        video_score(&params, &single).unwrap(),
        subsequence_distance(&params, &single.subsequences[0]).unwrap()
    );
    let empty = VideoRecord {
        subsequences: vec![],
        ..videos[0].clone()
    };
    assert!(matches!(video_score(&params, &empty), Err(Error::EmptyVideo(id)) if id == videos[0].video_id));
}

#[test]
fn parallel_scoring_keeps_order() {
    let videos = reduced_videos(6, 3);
    let params = ModelParams::init(&ArchConfig::reduced(), 1).unwrap();
    let serial: Vec<f64> = videos.iter().map(|v| video_score(&params, v).unwrap()).collect();
    assert_eq!(score_videos(&params, &videos).unwrap(), serial);
    let norm = fit_normalizer(&serial).unwrap();
    let recs = score_records(&params, &videos, &norm).unwrap();
    assert!(recs.iter().any(|r| r.s == 0.0) && recs.iter().any(|r| r.s == 1.0));
    assert_eq!(recs[4].video_id, videos[4].video_id);
}

#[test]
fn histogram_examples() {
    let spec = HistogramSpec { bins: 2, lo: 0.0, hi: 1.0 };
    let h = export_feature_histogram("x", Class::Real, Modality::Audio, &[0.1, 0.1, 0.9, 0.9], spec).unwrap();
    assert_eq!(h.counts, vec![2, 2]);
    let low = export_feature_histogram("x", Class::Real, Modality::Audio, &[-5.0, -1.0, -0.1], spec).unwrap();
    assert_eq!(low.counts, vec![3, 0]);
    let high = export_feature_histogram("x", Class::Real, Modality::Audio, &[1.0, 7.0], spec).unwrap();
    assert_eq!(high.counts, vec![0, 2]);
    for bad in [
        HistogramSpec { bins: 0, ..spec },
        HistogramSpec { lo: 1.0, hi: 1.0, bins: 2 },
        HistogramSpec { lo: 0.0, hi: f64::NAN, bins: 2 },
    ] {
        assert!(export_feature_histogram("x", Class::Real, Modality::Audio, &[0.5], bad).is_err());
    }
    assert_eq!(HistogramSpec::default(), HistogramSpec { bins: 40, lo: -1.0, hi: 3.0 });
}

#[test]
fn histogram_counts_are_conserved() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let spec = HistogramSpec::default();
    for _ in 0..100 {
        let d = rng.gen_range(1..64);
        let f: Vec<f32> = (0..d).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let h = export_feature_histogram("x", Class::Fake, Modality::Visual, &f, spec).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), d);
    }
}

#[test]
fn scores_csv_round_trips() {
    let records = vec![
        ScoreRecord {
            video_id: "test-0000".into(),
            label: Class::Fake,
            mu_d: 1.0 / 3.0,
            s: 1.0,
        },
        ScoreRecord {
            video_id: "test-0001".into(),
            label: Class::Real,
            mu_d: 2.5e-7,
            s: 0.0,
        },
    ];
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text, "video_id,label,mu_d,s\ntest-0000,FAKE,0.333333333,1\ntest-0001,REAL,2.5e-07,0\n");
    let back = read_scores_csv(buf.as_slice()).unwrap();
    assert_eq!(back[1], records[1]);
    assert_eq!(back[0].mu_d, 0.333333333);
    assert!(read_scores_csv("video_id,label,mu,s\n".as_bytes()).is_err());
    assert!(read_scores_csv("video_id,label,mu_d,s\na,FAKE,1,1.5\n".as_bytes()).is_err());
}

#[test]
fn histogram_csv_layout() {
    let spec = HistogramSpec { bins: 2, lo: -1.0, hi: 3.0 };
    let h = export_feature_histogram("v#0", Class::Fake, Modality::Visual, &[0.0, 2.0, 2.5], spec).unwrap();
    let mut buf = Vec::new();
    write_histogram_csv(&mut buf, &[h]).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "sample_id,label,modality,bin_lo,bin_hi,count\nv#0,FAKE,visual,-1,1,1\nv#0,FAKE,visual,1,3,2\n"
    );
}

#[test]
fn quartiles_interpolate() {
    let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
    assert_eq!(Quartiles::of(&[7.0]).unwrap().median, 7.0);
    assert!(Quartiles::of(&[]).is_none());
}

#[test]
fn separation_report_is_deterministic() {
    let videos = reduced_videos(4, 5);
    let params = ModelParams::init(&ArchConfig::reduced(), 3).unwrap();
    let a = separation_report(&params, &videos).unwrap();
    assert_eq!(a, separation_report(&params, &videos).unwrap());
    let total = a.real.map_or(0, |c| c.samples) + a.fake.map_or(0, |c| c.samples);
    assert_eq!(total, videos.iter().map(|v| v.n_subsequences()).sum::<usize>());
}

proptest! {
    #[test]
    fn normalized_scores_are_monotone_and_bounded(
        lo in -100.0f64..100.0,
        width in 0.0f64..50.0,
        a in -200.0f64..200.0,
        b in -200.0f64..200.0,
    ) {
        let n = ScoreNormalizer::new(lo, lo + width).unwrap();
        let (sa, sb) = (normalize_score(a, &n), normalize_score(b, &n));
        prop_assert!((0.0..=1.0).contains(&sa));
        if a <= b {
            prop_assert!(sa <= sb);
        }
    }

    #[test]
    fn auc_is_invariant_to_unclipped_normalization(
        raw in prop::collection::vec((0.0f64..10.0, any::<bool>()), 2..40),
    ) {
        let mut scores: Vec<(f64, Class)> =
            raw.iter().map(|&(x, f)| (x, if f { Class::Fake } else { Class::Real })).collect();
        scores[0].1 = Class::Fake;
        scores[1].1 = Class::Real;
        let n = ScoreNormalizer::new(-1.0, 11.0).unwrap();
        let normalized: Vec<(f64, Class)> = scores.iter().map(|&(x, c)| (normalize_score(x, &n), c)).collect();
        prop_assert!((auc(&scores).unwrap() - auc(&normalized).unwrap()).abs() <= 1e-12);
    }
}
