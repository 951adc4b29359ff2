use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::procedural_texture;
use crate::scene::{camera_ring, generate_toy_scene, Camera, GaussianScene, Intrinsics, SceneKind, DEFAULT_ELEVATION};
use crate::transfer::{DecoderNet, StyleStats};

fn enc() -> PseudoVgg {
    PseudoVgg::with_default_seed(8).unwrap()
}

fn noise_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(3, h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn generator() -> &'static Generator2d {
    static GEN: OnceLock<Generator2d> = OnceLock::new();
    GEN.get_or_init(|| Generator2d::pretrain(&enc(), &GeneratorConfig::default()).unwrap().0)
}

#[test]
fn weighted_total_examples() {
    let parts = LossParts {
        content: 2.0,
        style: 3.0,
        obs: 5.0,
        flow: 7.0,
    };
    let zero = LossWeights {
        lambda_style: 0.0,
        lambda_obs: 0.0,
        lambda_flow: 0.0,
        suppression: 0.0,
    };
    assert_eq!(total_stylized_loss(&parts, &zero).unwrap(), 2.0);
    let style_only = LossWeights {
        lambda_style: 1.0,
        ..zero
    };
    assert_eq!(total_stylized_loss(&parts, &style_only).unwrap(), 5.0);
    let w = LossWeights::default();
    let doubled = LossWeights {
        lambda_obs: 2.0 * w.lambda_obs,
        ..w
    };
    let delta = total_stylized_loss(&parts, &doubled).unwrap() - total_stylized_loss(&parts, &w).unwrap();
    assert!((delta - w.lambda_obs as f64 * parts.obs).abs() < 1e-12);

    let bad = LossParts { obs: f64::NAN, ..parts };
    let err = total_stylized_loss(&bad, &w).unwrap_err().to_string();
    assert!(err.contains("obs"), "{err}");
    assert!(LossWeights { lambda_flow: -1.0, ..w }.validate().is_err());
}

#[test]
fn content_loss_examples() {
    let enc = enc();
    let a = noise_image(1, 32, 32);
    let b = noise_image(2, 32, 32);
    assert_eq!(content_loss(&a, &a, &enc).unwrap(), 0.0);
    let ab = content_loss(&a, &b, &enc).unwrap();
    assert_eq!(ab, content_loss(&b, &a, &enc).unwrap());
    let fa = enc.tap_features(&a).unwrap().pop().unwrap();
    let fb = enc.tap_features(&b).unwrap().pop().unwrap();
    let brute: f64 = fa
        .data
        .iter()
        .zip(&fb.data)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / fa.data.len() as f64;
    assert!((ab - brute).abs() < 1e-12 && ab > 0.0);
    assert!(content_loss(&a, &noise_image(3, 32, 40), &enc).is_err());
}

#[test]
fn style_loss_examples() {
    let enc = enc();
    let a = noise_image(4, 32, 32);
    let own = enc.tap_stats(&a).unwrap();
    assert_eq!(style_loss(&a, &own, &enc).unwrap(), 0.0);

    let gap = |k: f32| {
        let mut refs = own.clone();
        refs[1].0.iter_mut().for_each(|m| *m += k);
        style_loss(&a, &refs, &enc).unwrap()
    };
    let (one, two) = (gap(0.1), gap(0.2));
    assert!((two / one - 4.0).abs() < 1e-4, "{one} {two}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let refs: TapStats = enc
        .tap_channels()
        .iter()
        .map(|&c| {
            (
                (0..c).map(|_| rng.random_range(0.0..1.0)).collect(),
                (0..c).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
        })
        .collect();
    let mut brute = 0.0f64;
    for (f, (rm, rs)) in enc.tap_features(&a).unwrap().iter().zip(&refs) {
        let n = f.pixels();
        for c in 0..f.channels {
            let row = &f.data[c * n..(c + 1) * n];
            let m = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let s = (row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            brute += (m - rm[c] as f64).powi(2) + (s - rs[c] as f64).powi(2);
        }
    }
    let got = style_loss(&a, &refs, &enc).unwrap();
    assert!((got - brute).abs() < 1e-5 * brute, "{got} vs {brute}");

    assert!(style_loss(&a, &refs[..3], &enc).is_err(), "missing tap");
}

#[test]
fn observation_loss_examples() {
    let enc = enc();
    let a = noise_image(6, 32, 32);
    let b = noise_image(7, 32, 32);
    assert_eq!(observation_loss(&a, &a, &enc).unwrap(), 0.0);
    let obs = observation_loss(&a, &b, &enc).unwrap();
    assert!(obs >= content_loss(&a, &b, &enc).unwrap());
    let brute: f64 = enc
        .tap_features(&a)
        .unwrap()
        .iter()
        .zip(enc.tap_features(&b).unwrap())
        .map(|(x, y)| {
            x.data
                .iter()
                .zip(&y.data)
                .map(|(p, q)| ((p - q) as f64).powi(2))
                .sum::<f64>()
                / x.data.len() as f64
        })
        .sum();
    assert!((obs - brute).abs() < 1e-12);
    assert!(observation_loss(&a, &noise_image(8, 31, 32), &enc).is_err());
}

#[test]
fn tape_losses_agree_with_direct_values() {
    let enc = enc();
    let a = noise_image(9, 32, 32);
    let b = noise_image(10, 32, 32);
    let refs = enc.tap_stats(&b).unwrap();
    let mut tape = Tape::<f64>::default();
    let x = tape.variable(&[3, 32, 32], a.data.clone()).unwrap();
    let taps = frozen_taps(&mut tape, &enc, x).unwrap();
    let fb = enc.tap_features(&b).unwrap();
    let targets: Vec<Var> = fb
        .iter()
        .map(|f| tape.constant(&f.shape(), f.data.clone()).unwrap())
        .collect();
    let c = content_loss_tape(&mut tape, &taps, *targets.last().unwrap()).unwrap();
    let o = observation_loss_tape(&mut tape, &taps, &targets).unwrap();
    let r: Vec<Var> = refs
        .iter()
        .map(|(m, s)| {
            tape.constant(&[2, m.len()], m.iter().chain(s).copied().collect())
                .unwrap()
        })
        .collect();
    let s = style_loss_tape(&mut tape, &taps, &r).unwrap();
    assert!((tape.scalar_native(c) - content_loss(&a, &b, &enc).unwrap()).abs() < 1e-6);
    assert!((tape.scalar_native(o) - observation_loss(&a, &b, &enc).unwrap()).abs() < 1e-6);
    assert!((tape.scalar_native(s) - style_loss(&a, &refs, &enc).unwrap()).abs() < 1e-5);
    // Frozen encoder weights: only the image variable is a gradient leaf.
    tape.backward(s).unwrap();
    assert!(tape.grad(x).is_some());
}

#[test]
fn suppression_examples() {
    use std::f64::consts::LN_2;
    let (d, g) = suppression_from_probs(&[0.5; 3], &[0.5; 3]);
    assert!((d - 2.0 * LN_2).abs() < 1e-12 && (g - LN_2).abs() < 1e-12);
    let (d, _) = suppression_from_probs(&[1.0; 3], &[0.0; 3]);
    assert!((0.0..1e-6).contains(&d), "{d}");
    let floor = -2.0 * (1.0 - PROB_FLOOR as f64).ln();
    assert!(d >= floor - 1e-12);
    let gens: Vec<f64> = [0.1, 0.3, 0.6, 0.9]
        .iter()
        .map(|&p| suppression_from_probs(&[0.5], &[p]).1)
        .collect();
    assert!(gens.windows(2).all(|w| w[1] < w[0]), "{gens:?}");

    let disc = DiscriminatorNet::new(3).unwrap();
    assert!(DiscriminatorNet::with_scales(3, 1).is_err());
    let a = noise_image(11, 32, 32);
    let probs = disc.predict(&a).unwrap();
    assert_eq!(probs.len(), DISC_SCALES);
    assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    let (dl, gl) = suppression_loss(&a, &noise_image(12, 32, 32), &disc).unwrap();
    assert!(dl.is_finite() && gl > 0.0);
    assert!(suppression_loss(&a, &noise_image(12, 16, 32), &disc).is_err());
    let back = DiscriminatorNet::from_params(disc.params().into_iter().cloned().collect(), DISC_SCALES).unwrap();
    assert_eq!(back.predict(&a).unwrap(), probs);
}

#[test]
fn generator_reproduces_content_and_carries_style_statistics() {
    let enc = enc();
    let content = procedural_texture(91, 0, 32, 32);
    let style = procedural_texture(92, 1, 32, 32);
    assert!(Generator2d::new(&enc, 0)
        .unwrap()
        .generate(&content, &style, &enc)
        .is_err());
    let gen = generator();

    let recon = gen.reconstruct(&content, &enc).unwrap();
    let recon_err = recon
        .data
        .iter()
        .zip(&content.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f32>()
        / recon.data.len() as f32;
    assert!(recon_err < 5e-3, "reconstruction {recon_err}");
    let same = gen.generate(&content, &content, &enc).unwrap();
    let diff = same
        .data
        .iter()
        .zip(&recon.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(diff < 1e-4, "AdaIN with own stats changed the output by {diff}");

    let out = gen.generate(&content, &style, &enc).unwrap();
    assert_eq!(out, gen.generate(&content, &style, &enc).unwrap());

    // Relative distance of tap-0 (mean, std) to the style's. A pointwise
    // decoder cannot reach every statistic from a content image's colors, so
    // the check is that most of the gap closes, not that it vanishes.
    let gap = |img: &Image, style: &Image| {
        let (gm, gs) = enc.tap_stats(img).unwrap().swap_remove(0);
        let (sm, ss) = enc.tap_stats(style).unwrap().swap_remove(0);
        let num: f32 = gm
            .iter()
            .zip(&sm)
            .chain(gs.iter().zip(&ss))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f32 = sm.iter().chain(&ss).map(|a| a * a).sum();
        (num / den).sqrt()
    };
    let mut mean = 0.0;
    for k in 0..10u64 {
        let c = procedural_texture(91, k, 32, 32);
        let s = procedural_texture(92, k + 10, 32, 32);
        let (before, after) = (gap(&c, &s), gap(&gen.generate(&c, &s, &enc).unwrap(), &s));
        assert!(after < 0.5 * before, "pair {k}: {before} -> {after}");
        mean += after / 10.0;
    }
    assert!(mean < 0.3, "mean relative gap {mean}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.prms");
    gen.save(&path).unwrap();
    let back = Generator2d::load(&path, &enc).unwrap();
    assert_eq!(back.generate(&content, &style, &enc).unwrap(), out);
}

fn tiny_setup() -> (GaussianScene, Vec<Camera>, DecoderNet, StyleGuide) {
    let d = 8;
    let mut scene = generate_toy_scene(SceneKind::TwoClusters, 4, 2, d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for g in &mut scene.gaussians {
        g.embedding.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        g.scale = g.scale.map(|s| s * 3.0);
    }
    let intr = Intrinsics {
        focal: 16.0,
        width: 16,
        height: 16,
        ..Intrinsics::default()
    };
    let cams = camera_ring([0.0; 3], 4.0, 4, DEFAULT_ELEVATION, &intr).unwrap();
    let decoder = DecoderNet::new(d, &[6], 4).unwrap();
    let style_img = procedural_texture(93, 2, 16, 16);
    let guide = StyleGuide {
        adain: StyleStats::new(vec![0.2; d], vec![0.7; d]).unwrap(),
        tap_refs: enc().tap_stats(&style_img).unwrap(),
    };
    (scene, cams, decoder, guide)
}

#[test]
fn stylized_loss_gradients_match_finite_differences() {
    let (scene, cams, decoder, guide) = tiny_setup();
    let enc = enc();
    let task = StylizationTask {
        scene: &scene,
        cams: &cams,
        encoder: &enc,
        generator: Some(generator()),
        guide: &guide,
        flow_loss: 0.25,
    };
    let err = task
        .gradient_check(&decoder, &LossWeights::default(), 0, 5, 1e-6, 12)
        .unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn training_edge_cases_and_log() {
    let (scene, cams, decoder, guide) = tiny_setup();
    let enc = enc();
    let mut task = StylizationTask {
        scene: &scene,
        cams: &cams,
        encoder: &enc,
        generator: None,
        guide: &guide,
        flow_loss: 0.25,
    };
    let zero = StylizationConfig {
        steps: 0,
        ..StylizationConfig::default()
    };
    assert!(
        train_stylization(&task, &decoder, &LossWeights::default(), &zero).is_err(),
        "needs a generator"
    );
    let classic = LossWeights {
        lambda_obs: 0.0,
        lambda_flow: 0.0,
        suppression: 0.0,
        ..LossWeights::default()
    };
    let out = train_stylization(&task, &decoder, &classic, &zero).unwrap();
    assert_eq!(out.decoder, decoder);
    assert!(out.discriminator.is_none() && out.log.is_empty());

    task.generator = Some(generator());
    let cfg = StylizationConfig {
        steps: 60,
        learning_rate: 1e-2,
        ..StylizationConfig::default()
    };
    let a = train_stylization(&task, &decoder, &LossWeights::default(), &cfg).unwrap();
    let b = train_stylization(&task, &decoder, &LossWeights::default(), &cfg).unwrap();
    let csv = stylization_csv(&a.log);
    assert_eq!(csv, stylization_csv(&b.log));
    assert!(csv.starts_with("step,content,style,obs,flow,sup_disc,sup_gen,total\n"));
    assert_eq!(csv.lines().count(), 61);
    assert!(a.discriminator.is_some());
    let (start, end) = moving_average_ends(&a.log, 20).unwrap();
    assert!(end < start, "total {start} -> {end}");
    assert!(a.log.iter().all(|r| r.flow == 0.25 && r.obs > 0.0 && r.sup_disc > 0.0));

    let wrong = StyleGuide {
        adain: StyleStats::new(vec![0.0; 4], vec![1.0; 4]).unwrap(),
        ..guide.clone()
    };
    task.guide = &wrong;
    assert!(train_stylization(&task, &decoder, &classic, &cfg).is_err());
}
