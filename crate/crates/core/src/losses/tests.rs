use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::model::{forward, ArchConfig, ModelParams, ParamVars};
use crate::tensor::{grad_check, grad_check_multi, Tensor};

const LN2: f64 = std::f64::consts::LN_2;

fn fake() -> Label {
    Label::fake(Provenance::Both).unwrap()
}

fn eval2(f: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>, a: &[f64], b: &[f64]) -> f64 {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(a.to_vec()));
    let b = g.constant(Tensor::vector(b.to_vec()));
    let out = f(&mut g, a, b).unwrap();
    g.item(out)
}

fn ce(logits: &[f64], label: Label) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(Tensor::vector(logits.to_vec()));
    let out = cross_entropy(&mut g, l, label).unwrap();
    g.item(out)
}

fn contrastive(a: &[f64], v: &[f64], label: Label) -> f64 {
    eval2(|g, a, v| contrastive_feature_loss(g, a, v, label, CONTRASTIVE_MARGIN), a, v)
}

fn stats(a: &[f64], v: &[f64], label: Label) -> f64 {
    eval2(|g, a, v| statistics_aware_loss(g, a, v, label), a, v)
}

fn kl(a: &[f64], v: &[f64]) -> f64 {
    eval2(kl_variant_loss, a, v)
}

#[test]
fn label_invariant() {
    assert!(Label::new(Class::Real, Provenance::None).is_ok());
    assert!(Label::new(Class::Real, Provenance::AudioOnly).is_err());
    assert!(Label::new(Class::Fake, Provenance::None).is_err());
    for p in [Provenance::AudioOnly, Provenance::VisualOnly, Provenance::Both] {
        assert!(Label::fake(p).unwrap().is_fake());
    }
    let json = serde_json::to_string(&fake()).unwrap();
    assert_eq!(serde_json::from_str::<Label>(&json).unwrap(), fake());
    assert!(serde_json::from_str::<Label>(r#"["REAL","BOTH"]"#).is_err());
}

#[test]
fn names_round_trip() {
    for p in [Provenance::AudioOnly, Provenance::VisualOnly, Provenance::Both, Provenance::None] {
        assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
    }
    for c in [Class::Real, Class::Fake] {
        assert_eq!(c.to_string().parse::<Class>().unwrap(), c);
    }
    for v in [LossVariant::Stats, LossVariant::Kl, LossVariant::None] {
        assert_eq!(v.to_string().parse::<LossVariant>().unwrap(), v);
    }
    assert_eq!("STATS".parse::<LossVariant>().unwrap(), LossVariant::Stats);
    assert!("mse".parse::<LossVariant>().is_err());
}

#[test]
fn cross_entropy_examples() {
    assert!((ce(&[0.0, 0.0], Label::real()) - LN2).abs() < 1e-12);
    assert!((ce(&[0.0, 0.0], fake()) - LN2).abs() < 1e-12);
    // log(1 + e^-20)
    let expected = (-20f64).exp().ln_1p();
    let got = ce(&[10.0, -10.0], Label::real());
    assert!((got - 2.061_153_6e-9).abs() < 1e-15, "{got}");
    assert!((got - expected).abs() < 1e-15);
    assert!((ce(&[10.0, -10.0], fake()) - 20.0).abs() < 1e-8);
}

#[test]
fn cross_entropy_rejects_wrong_width() {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    assert!(matches!(cross_entropy(&mut g, l, fake()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn cross_entropy_gradient() {
    for label in [Label::real(), fake()] {
        let r = grad_check(|g, x| cross_entropy(g, x, label), &Tensor::vector(vec![0.3, -1.2]), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn contrastive_examples() {
    let f = [0.3, -0.2, 0.5];
    assert_eq!(contrastive(&f, &f, Label::real()), 0.0);
    assert!((contrastive(&f, &f, fake()) - 0.9801).abs() < 1e-12);
    // d = 2 > m
    assert_eq!(contrastive(&[1.0, 0.0], &[0.0, 1.0], fake()), 0.0);
    assert!((contrastive(&[1.0, 0.0], &[0.0, 1.0], Label::real()) - 4.0).abs() < 1e-12);
    // d = 0.25: (0.99 - 0.25)^2
    assert!((contrastive(&[0.5], &[0.0], fake()) - 0.74f64.powi(2)).abs() < 1e-12);
}

#[test]
fn contrastive_rejects_bad_margin_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::vector(vec![0.0, 1.0]));
    let b = g.constant(Tensor::vector(vec![0.0]));
    assert!(contrastive_feature_loss(&mut g, a, a, fake(), 0.0).is_err());
    assert!(contrastive_feature_loss(&mut g, a, b, fake(), 0.99).is_err());
    assert!(statistics_aware_loss(&mut g, a, b, fake()).is_err());
    assert!(kl_variant_loss(&mut g, a, b).is_err());
}

#[test]
fn statistics_examples() {
    assert_eq!(stats(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Label::real()), 0.0);
    assert_eq!(stats(&[1.0, 1.0], &[3.0, 3.0], fake()), 0.0);
    assert!((stats(&[0.0, 2.0], &[0.5, 2.5], fake()) - 1.75).abs() < 1e-12);
    assert!((stats(&[0.0, 2.0], &[1.0, 3.0], Label::real()) - 1.0).abs() < 1e-12);
}

#[test]
fn kl_examples() {
    let f = [0.4, -1.0, 2.0];
    assert!(kl(&f, &f).abs() < 1e-15);
    let shifted: Vec<f64> = f.iter().map(|x| x + 5.0).collect();
    assert!(kl(&shifted, &f).abs() < 1e-12);
    let expected = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
    let got = kl(&[0.0, 3f64.ln()], &[0.0, 0.0]);
    assert!((got - expected).abs() < 1e-12);
    assert!((got - 0.130_812).abs() < 1e-6);
}

#[test]
fn kl_is_nonnegative_and_asymmetric() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..12);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        assert!(kl(&a, &v) >= -1e-12);
    }
    let a = [0.0, 3f64.ln()];
    let v = [0.0, 0.0];
    let forward = kl(&a, &v);
    // KL((0.5, 0.5) || (0.25, 0.75))
    let backward = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl(&v, &a) - backward).abs() < 1e-12);
    assert!((forward - backward).abs() > 1e-3);
}

#[test]
fn symmetric_terms_ignore_branch_order() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    for _ in 0..100 {
        let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for label in [Label::real(), fake()] {
            assert!((contrastive(&a, &v, label) - contrastive(&v, &a, label)).abs() < 1e-12);
            assert!((stats(&a, &v, label) - stats(&v, &a, label)).abs() < 1e-12);
        }
    }
}

#[test]
fn statistics_fake_saturates_once_gap_covers_margin() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
    for _ in 0..200 {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0) + rng.gen_range(-3.0..3.0)).collect();
        let (ma, sa) = mean_std(&a);
        let (mv, sv) = mean_std(&v);
        let gap_sq = (ma - mv).powi(2);
        let fake_loss = stats(&a, &v, fake());
        if gap_sq >= sa + sv {
            assert_eq!(fake_loss, 0.0);
        } else {
            assert!((fake_loss - (sa + sv - gap_sq)).abs() < 1e-12);
        }
        assert!((stats(&a, &v, Label::real()) - gap_sq).abs() < 1e-12);
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn single(logit_a: [f64; 2], logit_v: [f64; 2], fa: &[f64], fv: &[f64], label: Label, alpha: f64, variant: LossVariant) -> LossBreakdown {
    let mut g = Graph::<f64>::new();
    let out = Forward {
        audio_logits: g.constant(Tensor::vector(logit_a.to_vec())),
        visual_logits: g.constant(Tensor::vector(logit_v.to_vec())),
        audio_features: g.constant(Tensor::vector(fa.to_vec())),
        visual_features: g.constant(Tensor::vector(fv.to_vec())),
    };
    let terms = total_loss(&mut g, &out, label, alpha, variant).unwrap();
    LossBreakdown::read(&g, &terms)
}

#[test]
fn total_loss_examples() {
    let f = [0.2, 0.7];
    let b = single([0.0; 2], [0.0; 2], &f, &f, Label::real(), 1.0, LossVariant::Stats);
    assert!((b.total - 2.0 * LN2).abs() < 1e-12);

    let fa = [0.0, 2.0];
    let fv = [0.5, 2.5];
    for variant in [LossVariant::Stats, LossVariant::Kl, LossVariant::None] {
        let base = single([0.3, -0.1], [1.0, 0.5], &fa, &fv, fake(), 0.0, variant);
        assert!((base.total - (base.visual_ce + base.audio_ce + base.contrastive)).abs() < 1e-12);
        let weighted = single([0.3, -0.1], [1.0, 0.5], &fa, &fv, fake(), 2.5, variant);
        let expected = weighted.visual_ce + weighted.audio_ce + weighted.contrastive + 2.5 * weighted.statistics;
        assert!((weighted.total - expected).abs() <= 1e-6 * expected.abs());
    }
    let s = single([0.0; 2], [0.0; 2], &fa, &fv, fake(), 1.0, LossVariant::Stats);
    assert!((s.statistics - 1.75).abs() < 1e-12);
    let none = single([0.0; 2], [0.0; 2], &fa, &fv, fake(), 1.0, LossVariant::None);
    assert_eq!(none.statistics, 0.0);
    assert!((none.total - (2.0 * LN2 + none.contrastive)).abs() < 1e-12);
}

#[test]
fn total_loss_rejects_negative_alpha() {
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let out = Forward {
        audio_logits: v,
        visual_logits: v,
        audio_features: v,
        visual_features: v,
    };
    assert!(total_loss(&mut g, &out, fake(), -1.0, LossVariant::Stats).is_err());
}

#[test]
fn total_loss_gradient_wrt_audio_features() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
    let point = Tensor::vector((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let fv: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for variant in [LossVariant::Stats, LossVariant::Kl] {
        for label in [Label::real(), fake()] {
            let r = grad_check(
                |g, fa| {
                    let out = Forward {
                        audio_logits: g.constant(Tensor::vector(vec![0.2, -0.4])),
                        visual_logits: g.constant(Tensor::vector(vec![-0.3, 0.1])),
                        audio_features: fa,
                        visual_features: g.constant(Tensor::vector(fv.clone())),
                    };
                    Ok(total_loss(g, &out, label, 1.0, variant)?.total)
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(r.reliable());
            assert!(r.max_rel_error < 1e-5, "{variant} {label:?}: {r:?}");
        }
    }
}

#[test]
fn batch_mean_averages_each_term() {
    let mut g = Graph::<f64>::new();
    let samples: Vec<(Vec<f64>, Vec<f64>, Label)> = vec![
        (vec![0.0, 2.0], vec![0.5, 2.5], fake()),
        (vec![0.0, 2.0], vec![1.0, 3.0], Label::real()),
        (vec![1.0, 1.0], vec![1.0, 1.0], Label::real()),
    ];
    let mut terms = Vec::new();
    let mut singles = Vec::new();
    for (fa, fv, label) in &samples {
        let out = Forward {
            audio_logits: g.constant(Tensor::vector(vec![0.1, 0.2])),
            visual_logits: g.constant(Tensor::vector(vec![0.0, -0.5])),
            audio_features: g.constant(Tensor::vector(fa.clone())),
            visual_features: g.constant(Tensor::vector(fv.clone())),
        };
        let t = total_loss(&mut g, &out, *label, 0.5, LossVariant::Stats).unwrap();
        singles.push((LossBreakdown::read(&g, &t), 1));
        terms.push(t);
    }
    let batch = batch_mean(&mut g, &terms, 0.5).unwrap();
    let got = LossBreakdown::read(&g, &batch);
    let want = LossBreakdown::weighted_mean(&singles);
    assert!((got.statistics - (1.75 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    for (x, y) in [
        (got.audio_ce, want.audio_ce),
        (got.visual_ce, want.visual_ce),
        (got.contrastive, want.contrastive),
        (got.statistics, want.statistics),
        (got.total, want.total),
    ] {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(batch_mean::<f64>(&mut g, &[], 1.0).is_err());
}

#[test]
fn non_finite_term_is_named() {
    let mut b = LossBreakdown {
        audio_ce: 0.1,
        visual_ce: 0.2,
        contrastive: 0.3,
        statistics: 0.4,
        total: 1.0,
    };
    assert_eq!(b.non_finite_term(), None);
    b.contrastive = f64::NAN;
    assert_eq!(b.non_finite_term(), Some("L_c"));
}

#[test]
fn end_to_end_gradient_on_reduced_model() {
    let cfg = ArchConfig::reduced();
    // Seed picked so no relu input, pool tie or feature std lies within the
    // kink margin; `reliable()` below guards that choice.
    let params = ModelParams::init(&cfg, 5).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let na: usize = cfg.audio_input_shape().iter().product();
    let nv: usize = cfg.visual_input_shape().iter().product();
    let audio = Tensor::new(cfg.audio_input_shape(), (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let frames = Tensor::new(cfg.visual_input_shape(), (0..nv).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let points: Vec<Tensor<f64>> = params.tensors().iter().map(|t| t.tensor.cast()).collect();
    for variant in [LossVariant::Stats, LossVariant::Kl] {
        let r = grad_check_multi(
            |g, vars| {
                let p = ParamVars::from_vars(&cfg, vars.to_vec())?;
                let a = g.constant(audio.clone());
                let v = g.constant(frames.clone());
                let out = forward(g, &p, a, v)?;
                Ok(total_loss(g, &out, fake(), 1.0, variant)?.total)
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(r.reliable(), "{r:?}");
        assert!(r.max_rel_error < 1e-3, "{variant}: {r:?}");
    }
}

proptest! {
    #[test]
    fn all_terms_nonnegative(
        a in prop::collection::vec(-3.0f64..3.0, 1..8),
        shift in -2.0f64..2.0,
        logits in prop::array::uniform4(-5.0f64..5.0),
        alpha in 0.0f64..10.0,
        is_fake in any::<bool>(),
    ) {
        let v: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.7 + shift + i as f64 * 0.1).collect();
        let label = if is_fake { fake() } else { Label::real() };
        for variant in [LossVariant::Stats, LossVariant::Kl, LossVariant::None] {
            let b = single([logits[0], logits[1]], [logits[2], logits[3]], &a, &v, label, alpha, variant);
            prop_assert!(b.audio_ce >= 0.0 && b.visual_ce >= 0.0);
            prop_assert!(b.contrastive >= 0.0 && b.statistics >= -1e-15 && b.total >= 0.0);
            if is_fake {
                prop_assert!(b.contrastive <= 0.9801 + 1e-12);
            }
        }
    }

    #[test]
    fn statistics_ignore_coordinate_order(
        a in prop::collection::vec(-3.0f64..3.0, 2..8),
        v in prop::collection::vec(-3.0f64..3.0, 2..8),
        ra in any::<u64>(),
        rv in any::<u64>(),
    ) {
        let n = a.len().min(v.len());
        let (a, v) = (&a[..n], &v[..n]);
        let perm = |x: &[f64], seed: u64| {
            let mut y = x.to_vec();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            for i in (1..y.len()).rev() {
                y.swap(i, rng.gen_range(0..=i));
            }
            y
        };
        let (pa, pv) = (perm(a, ra), perm(v, rv));
        for label in [Label::real(), fake()] {
            prop_assert!((stats(a, v, label) - stats(&pa, &pv, label)).abs() < 1e-12);
        }
    }
}
