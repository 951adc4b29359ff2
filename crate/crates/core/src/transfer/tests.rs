use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{Domain, Provenance};
use crate::scene::{camera_ring, generate_toy_scene, Intrinsics, SceneKind, DEFAULT_ELEVATION};

fn small_intrinsics() -> Intrinsics {
    Intrinsics {
        focal: 32.0,
        width: 32,
        height: 32,
        ..Intrinsics::default()
    }
}

fn lattice(n: usize, d: usize) -> (GaussianScene, Vec<Camera>) {
    let scene = generate_toy_scene(SceneKind::Lattice, n, 3, d).unwrap();
    let cams = camera_ring([0.0; 3], 4.0, 4, DEFAULT_ELEVATION, &small_intrinsics()).unwrap();
    (scene, cams)
}

fn quick_distill() -> DistillConfig {
    DistillConfig {
        steps: 400,
        learning_rate: 1e-2,
        ..DistillConfig::default()
    }
}

fn moments(x: &[f32], d: usize) -> (Vec<f64>, Vec<f64>) {
    column_stats(x, d)
}

#[test]
fn adain_with_content_stats_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f32> = (0..40 * 5).map(|_| rng.random_range(-2.0..3.0)).collect();
    let (m, s) = moments(&x, 5);
    let style = StyleStats::new(
        m.iter().map(|&v| v as f32).collect(),
        s.iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    let out = adain(&x, 5, &style).unwrap();
    assert!(!out.flagged());
    for (a, b) in x.iter().zip(&out.data) {
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn adain_hand_example() {
    let style = StyleStats::new(vec![0.0], vec![1.0]).unwrap();
    let out = adain(&[1.0, 2.0, 3.0], 1, &style).unwrap();
    let expect = [-1.2247449, 0.0, 1.2247449];
    for (a, b) in out.data.iter().zip(expect) {
        assert!((a - b).abs() < 1e-5, "{:?}", out.data);
    }
}

#[test]
fn adain_flags_constant_channels_and_checks_shapes() {
    let style = StyleStats::new(vec![0.5, 1.0], vec![2.0, 1.0]).unwrap();
    let x = [3.0, 1.0, 3.0, 2.0, 3.0, 4.0];
    let out = adain(&x, 2, &style).unwrap();
    assert_eq!(out.degenerate_channels, vec![0]);
    assert!(out.data.iter().step_by(2).all(|&v| (v - 0.5).abs() < 1e-6));
    assert!(adain(&[1.0, 2.0], 2, &style).is_err(), "one row has no population std");
    assert!(adain(&x, 4, &StyleStats::new(vec![0.0; 4], vec![1.0; 4]).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn adain_output_carries_the_style_moments(seed in 0u64..10_000, n in 2usize..60, d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mu: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma: Vec<f32> = (0..d).map(|_| rng.random_range(0.05..3.0)).collect();
        let out = adain(&x, d, &StyleStats::new(mu.clone(), sigma.clone()).unwrap()).unwrap();
        let (m, s) = moments(&out.data, d);
        for j in 0..d {
            prop_assert!((m[j] - mu[j] as f64).abs() < 1e-5);
            prop_assert!((s[j] - sigma[j] as f64).abs() < 1e-5);
        }
    }
}

#[test]
fn stats_from_features_and_vectors() {
    let same = FeatureSet::new(Domain::VggLike, 2, vec![1.0, 2.0, 1.0, 2.0], Provenance::Imported).unwrap();
    let s = stats_from_set(&same).unwrap();
    assert_eq!(s.sigma, vec![EPSILON_STD; 2]);
    let two = FeatureSet::new(Domain::VggLike, 2, vec![0.0, 0.0, 2.0, 2.0], Provenance::Imported).unwrap();
    let s = stats_from_set(&two).unwrap();
    assert_eq!((s.mu, s.sigma), (vec![1.0, 1.0], vec![1.0, 1.0]));
    let s = stats_from_vector(&[0.3, -0.2, 0.0, 0.0]).unwrap();
    assert_eq!(s.mu, vec![0.3, -0.2]);
    assert!(s.sigma.iter().all(|&v| (v - std::f32::consts::LN_2).abs() < 1e-4));
    assert!(stats_from_vector(&[1.0, 2.0, 3.0]).is_err());
    assert!(stats_from_vector(&[]).is_err());
    // Round trip with the encoder's style vector convention.
    let sigma = 0.37f32;
    let v = [0.0, crate::encoders::softplus_inv(sigma)];
    assert!((stats_from_vector(&v).unwrap().sigma[0] - sigma).abs() < 1e-6);
}

#[test]
fn decoder_outputs_colors_and_round_trips() {
    let dec = DecoderNet::new(8, &[16, 16], 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e: Vec<f32> = (0..10 * 8).map(|_| rng.random_range(-50.0..50.0)).collect();
    let colors = dec.decode(&e).unwrap();
    assert_eq!(colors.len(), 10);
    assert!(colors.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dec.prms");
    dec.save(&path).unwrap();
    let back = DecoderNet::load(&path).unwrap();
    assert_eq!(back.decode(&e).unwrap(), colors);
    assert_eq!(back.net().spec().layer_widths, vec![8, 16, 16, 3]);
}

#[test]
fn tap_pool_rows_average_their_window() {
    let enc = PseudoVgg::with_default_seed(32).unwrap();
    let map = tap_pool_map(&enc, enc.embed_tap(), 32, 32).unwrap();
    let (rf, stride) = enc.tap_geometry()[enc.embed_tap()];
    assert_eq!((rf, stride), (7, 4));
    assert_eq!(map.rows(), 49);
    for r in 0..map.rows() {
        let total: f32 = map.row(r).map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
    assert!(tap_pool_map(&enc, enc.embed_tap(), 5, 5).is_err());
}

#[test]
fn distillation_reconstructs_colors_and_tracks_features() {
    let (scene, cams) = lattice(64, 32);
    let enc = PseudoVgg::with_default_seed(32).unwrap();
    let out = distill_embeddings(&scene, &cams, &enc, &quick_distill()).unwrap();
    let err = out.reconstruction_error().unwrap();
    assert!(err < 1e-3, "reconstruction {err}");
    let p = &out.projection_history;
    assert!(
        p.last().unwrap() < &p[0],
        "projection {} -> {}",
        p[0],
        p.last().unwrap()
    );
    assert!(out.scene.is_distilled());
    for (a, b) in scene.gaussians.iter().zip(&out.scene.gaussians) {
        assert!(a.same_geometry(b));
        assert_eq!(a.color, b.color);
    }
}

#[test]
fn distillation_gradients_match_finite_differences() {
    let (scene, cams) = lattice(8, 8);
    let enc = PseudoVgg::with_default_seed(8).unwrap();
    for feature_weight in [0.0, 1.0] {
        let cfg = DistillConfig {
            feature_weight,
            decoder_hidden: vec![6],
            ..quick_distill()
        };
        let err = distill_gradient_check(&scene, &cams, &enc, &cfg, 1e-6, 10).unwrap();
        assert!(err < 1e-3, "feature_weight {feature_weight}: max rel error {err}");
    }
    assert!(distill_gradient_check(&scene, &cams[..0], &enc, &quick_distill(), 1e-6, 10).is_err());
}

#[test]
fn distillation_edge_cases() {
    let (scene, cams) = lattice(27, 16);
    let enc = PseudoVgg::with_default_seed(16).unwrap();
    assert!(distill_embeddings(&scene, &[], &enc, &quick_distill()).is_err());
    let wrong = PseudoVgg::with_default_seed(32).unwrap();
    assert!(distill_embeddings(&scene, &cams, &wrong, &quick_distill()).is_err());

    let zero = DistillConfig {
        steps: 0,
        ..quick_distill()
    };
    let a = distill_embeddings(&scene, &cams, &enc, &zero).unwrap();
    let b = distill_embeddings(&scene, &cams[..1], &enc, &zero).unwrap();
    assert_eq!(a.scene, b.scene, "zero steps leave the seeded initialisation");
    assert!(a.recon_history.is_empty());
}

#[test]
fn identical_colors_get_identical_embeddings_without_the_feature_term() {
    let (scene, cams) = lattice(27, 16);
    let palette = [[0.2, 0.4, 0.6], [0.9, 0.1, 0.3], [0.5, 0.5, 0.5]];
    let colors: Vec<[f32; 3]> = (0..scene.len()).map(|i| palette[i % 3]).collect();
    let scene = scene.with_colors(&colors).unwrap();
    let enc = PseudoVgg::with_default_seed(16).unwrap();
    let cfg = DistillConfig {
        feature_weight: 0.0,
        steps: 200,
        ..quick_distill()
    };
    let out = distill_embeddings(&scene, &cams, &enc, &cfg).unwrap();
    for (i, g) in out.scene.gaussians.iter().enumerate() {
        let first = &out.scene.gaussians[i % 3].embedding;
        assert!(g.embedding.iter().zip(first).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

#[test]
fn stylization_keeps_geometry_and_is_repeatable() {
    let (scene, cams) = lattice(64, 32);
    let enc = PseudoVgg::with_default_seed(32).unwrap();
    assert!(stylize_scene(
        &scene,
        &StyleStats::new(vec![0.0; 32], vec![1.0; 32]).unwrap(),
        &DecoderNet::new(32, &[8], 0).unwrap()
    )
    .is_err());
    let distilled = distill_embeddings(&scene, &cams, &enc, &quick_distill()).unwrap();

    let e = distilled.scene.embedding_matrix();
    let (m, s) = column_stats(&e, 32);
    let own = StyleStats::new(
        m.iter().map(|&v| v as f32).collect(),
        s.iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    let same = stylize_scene(&distilled.scene, &own, &distilled.decoder).unwrap();
    let recon = distilled.reconstruction_error().unwrap();
    for (a, b) in same.gaussians.iter().zip(&scene.gaussians) {
        let err: f32 = (0..3).map(|k| (a.color[k] - b.color[k]).powi(2)).sum();
        assert!((err as f64) < 20.0 * recon + 1e-4, "{err} vs recon {recon}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let style = StyleStats::new(
        (0..32).map(|_| rng.random_range(0.0..1.0)).collect(),
        (0..32).map(|_| rng.random_range(0.05..0.5)).collect(),
    )
    .unwrap();
    let once = stylize_scene(&distilled.scene, &style, &distilled.decoder).unwrap();
    let twice = stylize_scene(&distilled.scene, &style, &distilled.decoder).unwrap();
    assert_eq!(once, twice);
    once.validate().unwrap();
    for (a, b) in once.gaussians.iter().zip(&distilled.scene.gaussians) {
        assert!(a.same_geometry(b));
        assert_eq!(a.embedding, b.embedding);
    }
    let wrong = StyleStats::new(vec![0.0; 8], vec![1.0; 8]).unwrap();
    assert!(stylize_scene(&distilled.scene, &wrong, &distilled.decoder).is_err());
}
