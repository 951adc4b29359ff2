use proptest::prelude::*;

use super::*;
use crate::scene::{camera_ring, generate_toy_scene, Intrinsics, SceneKind, DEFAULT_ELEVATION};

fn cam(w: usize, h: usize, pos: [f32; 3]) -> Camera {
    Camera {
        position: pos,
        orientation: [1.0, 0.0, 0.0, 0.0],
        focal: 60.0,
        width: w,
        height: h,
        near: 0.1,
        far: 100.0,
    }
}

fn blob(p: [f32; 3], s: f32, opacity: f32, color: [f32; 3], d: usize) -> GaussianPrimitive {
    GaussianPrimitive {
        position: p,
        rotation: [1.0, 0.0, 0.0, 0.0],
        scale: [s; 3],
        opacity,
        color,
        embedding: vec![0.0; d],
    }
}

fn scene_with_embeddings(kind: SceneKind, n: usize, seed: u64, d: usize) -> GaussianScene {
    let mut s = generate_toy_scene(kind, n, seed, d).unwrap();
    for (i, g) in s.gaussians.iter_mut().enumerate() {
        for (j, e) in g.embedding.iter_mut().enumerate() {
            *e = ((i * 7 + j * 3) % 11) as f32 / 11.0 - 0.5;
        }
    }
    s
}

#[test]
fn on_axis_gaussian_projects_to_center() {
    let g = blob([0.0, 0.0, 0.0], 0.1, 1.0, [1.0; 3], 1);
    let s = project_gaussian(&g, 0, &cam(64, 48, [0.0, 0.0, -5.0])).unwrap();
    assert_eq!(s.mean2d, [32.0, 24.0]);
    assert_eq!(s.view_depth, 5.0);
}

#[test]
fn isotropic_covariance_matches_jacobian_formula() {
    let (f, sc, z) = (60.0f32, 0.2f32, 4.0f32);
    let g = blob([0.0; 3], sc, 1.0, [1.0; 3], 1);
    let s = project_gaussian(&g, 0, &cam(64, 64, [0.0, 0.0, -z])).unwrap();
    let want = (f * sc / z).powi(2) + LOW_PASS;
    assert!((s.cov2d[0] - want).abs() < 1e-4 && (s.cov2d[2] - want).abs() < 1e-4);
    assert!(s.cov2d[1].abs() < 1e-6);
}

#[test]
fn gaussian_behind_camera_is_culled() {
    let g = blob([0.0, 0.0, -10.0], 0.1, 1.0, [1.0; 3], 1);
    assert!(project_gaussian(&g, 0, &cam(64, 64, [0.0, 0.0, -5.0])).is_none());
    let far = blob([0.0, 0.0, 500.0], 0.1, 1.0, [1.0; 3], 1);
    assert!(project_gaussian(&far, 0, &cam(64, 64, [0.0, 0.0, -5.0])).is_none());
}

#[test]
fn single_opaque_gaussian_hits_alpha_clamp() {
    let color = [0.2, 0.6, 1.0];
    let scene = GaussianScene::new(vec![blob([0.0; 3], 1.0, 1.0, color, 2)], 2, "t").unwrap();
    let out = render(&scene, &cam(65, 65, [0.0, 0.0, -5.0])).unwrap();
    let p = 32 * 65 + 32;
    for c in 0..3 {
        assert!((out.rgb[p * 3 + c] - 0.99 * color[c]).abs() < 1e-6);
    }
    assert!((out.alpha_mask[p] - 0.99).abs() < 1e-6);
    assert_eq!(out.depth[p], 5.0);
}

#[test]
fn two_layers_composite_front_to_back() {
    let (c1, c2) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    // Listed back-first to exercise the sort.
    let gs = vec![blob([0.0, 0.0, 1.0], 0.5, 0.8, c2, 1), blob([0.0; 3], 0.5, 0.4, c1, 1)];
    let scene = GaussianScene::new(gs, 1, "t").unwrap();
    let out = render(&scene, &cam(65, 65, [0.0, 0.0, -5.0])).unwrap();
    let p = 32 * 65 + 32;
    let (a1, a2) = (0.4f32, 0.8f32);
    assert!((out.rgb[p * 3] - a1).abs() < 1e-6);
    assert!((out.rgb[p * 3 + 2] - a2 * (1.0 - a1)).abs() < 1e-6);
    assert_eq!(out.depth[p], 6.0); // alpha first passes 0.5 at the back splat
}

#[test]
fn empty_scene_is_an_error() {
    let scene = GaussianScene {
        gaussians: vec![],
        embed_dim: 2,
        source_tag: String::new(),
    };
    assert!(render(&scene, &cam(8, 8, [0.0; 3])).is_err());
}

#[test]
fn tiled_render_matches_reference() {
    let scene = scene_with_embeddings(SceneKind::Lattice, 50, 11, 8);
    let cams = camera_ring([0.0; 3], 4.0, 3, DEFAULT_ELEVATION, &Intrinsics::default()).unwrap();
    for c in &cams {
        let a = render(&scene, c).unwrap();
        let b = render_reference(&scene, c).unwrap();
        let worst = a
            .rgb
            .iter()
            .zip(&b.rgb)
            .chain(a.features.iter().zip(&b.features))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1e-6, "{worst}");
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.alpha_mask, b.alpha_mask);
    }
}

#[test]
fn features_follow_a_linear_color_map() {
    let mut scene = generate_toy_scene(SceneKind::TwoClusters, 40, 5, 4).unwrap();
    let m = [[0.5, -1.0, 2.0], [0.0, 1.0, 0.3], [1.5, 0.2, -0.7], [0.1, 0.1, 0.1]];
    for g in &mut scene.gaussians {
        g.embedding = m.iter().map(|row| (0..3).map(|k| row[k] * g.color[k]).sum()).collect();
    }
    let c = camera_ring([0.0; 3], 6.0, 4, DEFAULT_ELEVATION, &Intrinsics::default()).unwrap();
    let out = render(&scene, &c[1]).unwrap();
    for p in 0..out.width * out.height {
        for (j, row) in m.iter().enumerate() {
            let want: f32 = (0..3).map(|k| row[k] * out.rgb[p * 3 + k]).sum();
            assert!((out.features[p * 4 + j] - want).abs() < 1e-5);
        }
    }
}

#[test]
fn compositing_weights_reproduce_render() {
    let scene = scene_with_embeddings(SceneKind::TexturedSlab, 60, 2, 3);
    let c = &camera_ring(
        [0.0; 3],
        4.0,
        8,
        DEFAULT_ELEVATION,
        &Intrinsics {
            width: 40,
            height: 36,
            ..Default::default()
        },
    )
    .unwrap()[1];
    let out = render(&scene, c).unwrap();
    let map = compositing_weights(&scene, c).unwrap();
    assert_eq!(map.rows(), 40 * 36);
    let rgb = map.apply_channel_major(&scene.color_matrix(), 3);
    let img = out.rgb_image();
    assert!(rgb.iter().zip(&img.data).all(|(a, b)| (a - b).abs() < 1e-6));
    let feats = map.apply_channel_major(&scene.embedding_matrix(), 3);
    assert!(feats
        .iter()
        .zip(&out.feature_image().data)
        .all(|(a, b)| (a - b).abs() < 1e-6));
}

#[test]
fn identity_warp() {
    let scene = generate_toy_scene(SceneKind::Lattice, 75, 1, 4).unwrap();
    let c = cam(48, 48, [0.0, 0.0, -4.0]);
    let out = render(&scene, &c).unwrap();
    let wm = warp_map(&c, &c, &out.depth, Some(&out.depth));
    let finite = out.depth.iter().filter(|d| d.is_finite()).count();
    assert!(finite > 0);
    assert_eq!(wm.valid_count(), finite);
    for (p, ok) in wm.valid.iter().enumerate() {
        if *ok {
            let (x, y) = ((p % 48) as f32 + 0.5, (p / 48) as f32 + 0.5);
            assert!((wm.coords[p][0] - x).abs() < 1e-4 && (wm.coords[p][1] - y).abs() < 1e-4);
        }
    }
}

#[test]
fn translation_warp_is_uniform_shift() {
    let (z, dx) = (4.0f32, 0.3f32);
    let src = cam(32, 32, [0.0, 0.0, -z]);
    let dst = cam(32, 32, [dx, 0.0, -z]);
    let depth = vec![z; 32 * 32];
    let wm = warp_map(&src, &dst, &depth, None);
    let shift = -60.0 * dx / z;
    for p in 0..32 * 32 {
        let x = (p % 32) as f32 + 0.5;
        assert!((wm.coords[p][0] - (x + shift)).abs() < 1e-4);
        assert_eq!(wm.valid[p], x + shift >= 0.5);
    }
    let mut depth = depth;
    depth[100] = f32::INFINITY;
    assert!(!warp_map(&src, &src, &depth, None).valid[100]);
}

#[test]
fn ppm_and_fmap_round_trip() {
    let scene = generate_toy_scene(SceneKind::Lattice, 20, 3, 5).unwrap();
    let out = render(&scene, &cam(20, 12, [0.0, 0.0, -4.0])).unwrap();
    let img = out.rgb_image();
    let ppm = encode_ppm(&img).unwrap();
    assert!(ppm.starts_with(b"P6\n20 12\n255\n"));
    let back = decode_ppm(&ppm).unwrap();
    assert!(back
        .data
        .iter()
        .zip(&img.data)
        .all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
    let depth = Image::new(1, 12, 20, out.depth.clone()).unwrap();
    let fm = encode_fmap(&depth);
    assert_eq!(fm.len(), 16 + 240 * 4);
    assert_eq!(decode_fmap(&fm).unwrap(), depth);
    assert_eq!(
        decode_fmap(&encode_fmap(&out.feature_image())).unwrap(),
        out.feature_image()
    );
    assert!(decode_fmap(&fm[..fm.len() - 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn render_is_order_invariant(seed in any::<u64>(), shift in 1usize..49) {
        let scene = scene_with_embeddings(SceneKind::TwoClusters, 50, seed, 3);
        let mut perm = scene.clone();
        perm.gaussians.rotate_left(shift);
        perm.gaussians.swap(0, 7);
        let c = &camera_ring([0.0; 3], 6.0, 5, DEFAULT_ELEVATION, &Intrinsics { width: 32, height: 32, focal: 32.0, ..Default::default() }).unwrap()[(seed % 5) as usize];
        let (a, b) = (render(&scene, c).unwrap(), render(&perm, c).unwrap());
        for (x, y) in a.rgb.iter().zip(&b.rgb).chain(a.features.iter().zip(&b.features)) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn render_is_linear_in_embeddings(seed in any::<u64>(), ca in -2.0f32..2.0, cb in -2.0f32..2.0) {
        let u = scene_with_embeddings(SceneKind::Lattice, 27, seed, 4);
        let mut w = u.clone();
        for (i, g) in w.gaussians.iter_mut().enumerate() {
            g.embedding = (0..4).map(|j| ((i + j) as f32 * 0.7).sin()).collect();
        }
        let mut mix = u.clone();
        for (k, g) in mix.gaussians.iter_mut().enumerate() {
            g.embedding = (0..4).map(|j| ca * u.gaussians[k].embedding[j] + cb * w.gaussians[k].embedding[j]).collect();
        }
        let c = &camera_ring([0.0; 3], 4.0, 4, DEFAULT_ELEVATION, &Intrinsics { width: 24, height: 24, focal: 24.0, ..Default::default() }).unwrap()[1];
        let (ru, rw, rm) = (render(&u, c).unwrap(), render(&w, c).unwrap(), render(&mix, c).unwrap());
        for i in 0..rm.features.len() {
            prop_assert!((rm.features[i] - (ca * ru.features[i] + cb * rw.features[i])).abs() <= 1e-5);
        }
        prop_assert!(rm.alpha_mask.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(ru.rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(ru.depth.iter().all(|d| *d > 0.0));
    }
}
