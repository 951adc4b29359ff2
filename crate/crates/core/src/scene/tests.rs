use nalgebra::{SymmetricEigen, Vector3};
use proptest::prelude::*;

use super::*;
use crate::binio::FormatErrorKind;

fn two_gaussians() -> GaussianScene {
    let g = |p: [f32; 3], c: [f32; 3]| GaussianPrimitive {
        position: p,
        rotation: normalize_quat([0.9, 0.1, -0.3, 0.2]),
        scale: [0.1, 0.2, 0.3],
        opacity: 0.7,
        color: c,
        embedding: vec![0.25, -1.5, 3.0],
    };
    GaussianScene::new(
        vec![
            g([0.0, 1.0, 2.0], [0.1, 0.2, 0.3]),
            g([-1.0, 0.5, 0.0], [0.9, 0.8, 0.7]),
        ],
        3,
        "t",
    )
    .unwrap()
}

fn format_kind(e: Error) -> (usize, FormatErrorKind) {
    match e {
        Error::Format(fe) => (fe.offset, fe.kind),
        other => panic!("expected format error, got {other}"),
    }
}

#[test]
fn gscn_round_trip_is_bit_identical() {
    let s = two_gaussians();
    let bytes = encode_scene(&s);
    assert_eq!(bytes.len(), 16 + 2 * (14 + 3) * 4);
    let back = decode_scene(&bytes).unwrap();
    assert_eq!(back.embed_dim, 3);
    assert_eq!(encode_scene(&back), bytes);
    for (a, b) in s.gaussians.iter().zip(&back.gaussians) {
        assert!(a.same_geometry(b));
        assert_eq!(a, b);
    }
}

#[test]
fn gscn_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.gscn");
    let s = generate_toy_scene(SceneKind::Lattice, 10, 3, 8).unwrap();
    save_scene(&s, &path).unwrap();
    let back = load_scene(&path).unwrap();
    assert_eq!(back.gaussians, s.gaussians);
}

#[test]
fn gscn_truncation_reports_offset() {
    let bytes = encode_scene(&two_gaussians());
    let cut = 16 + 17 * 4 + 10;
    let (offset, kind) = format_kind(decode_scene(&bytes[..cut]).unwrap_err());
    assert_eq!(offset, 16 + 17 * 4);
    assert!(matches!(kind, FormatErrorKind::Truncated { .. }));
}

#[test]
fn gscn_bad_magic_and_version() {
    let mut bytes = encode_scene(&two_gaussians());
    bytes[0] = b'X';
    assert!(matches!(
        format_kind(decode_scene(&bytes).unwrap_err()),
        (0, FormatErrorKind::BadMagic { .. })
    ));
    let mut bytes = encode_scene(&two_gaussians());
    bytes[4] = 2;
    assert!(matches!(
        format_kind(decode_scene(&bytes).unwrap_err()),
        (4, FormatErrorKind::Version { found: 2, .. })
    ));
}

#[test]
fn gscn_dim_mismatch_is_an_error() {
    let mut bytes = encode_scene(&two_gaussians());
    bytes[12] = 2; // header claims D=2, records carry D=3
    let (offset, _) = format_kind(decode_scene(&bytes).unwrap_err());
    assert_eq!(offset, 12);
    let mut bytes = encode_scene(&two_gaussians());
    bytes[12] = 4;
    assert!(decode_scene(&bytes).is_err());
}

#[test]
fn gscn_clamps_opacity_and_rejects_bad_quaternion() {
    let mut s = two_gaussians();
    s.gaussians[0].opacity = 1.5;
    let back = decode_scene(&encode_scene(&s)).unwrap();
    assert_eq!(back.gaussians[0].opacity, 1.0);
    let mut s = two_gaussians();
    s.gaussians[1].rotation = [1.0, 1.0, 0.0, 0.0];
    let (offset, _) = format_kind(decode_scene(&encode_scene(&s)).unwrap_err());
    assert_eq!(offset, 16 + 17 * 4);
}

#[test]
fn toy_scenes_are_deterministic() {
    let a = generate_toy_scene(SceneKind::Lattice, 8, 7, 32).unwrap();
    let b = generate_toy_scene(SceneKind::Lattice, 8, 7, 32).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_toy_scene(SceneKind::Lattice, 8, 8, 32).unwrap());
    assert!(generate_toy_scene(SceneKind::Lattice, 0, 7, 32).is_err());
}

#[test]
fn two_clusters_are_well_separated() {
    let s = generate_toy_scene(SceneKind::TwoClusters, 100, 1, 8).unwrap();
    let (left, right): (Vec<_>, Vec<_>) = s.gaussians.iter().partition(|g| g.position[0] < 0.0);
    assert_eq!(left.len(), 50);
    let stats = |v: &[&GaussianPrimitive]| {
        let m = v.iter().map(|g| g.position[0]).sum::<f32>() / v.len() as f32;
        let sd = (v.iter().map(|g| (g.position[0] - m).powi(2)).sum::<f32>() / v.len() as f32).sqrt();
        (m, sd)
    };
    let ((ml, sl), (mr, sr)) = (stats(&left), stats(&right));
    assert!(mr - ml > 5.0 * sl.max(sr), "{ml} {mr} {sl} {sr}");
}

#[test]
fn covariance_spectrum_is_scale_squared() {
    let s = generate_toy_scene(SceneKind::TwoClusters, 20, 4, 8).unwrap();
    for g in &s.gaussians {
        let cov = g.covariance();
        assert!((cov - cov.transpose()).abs().max() < 1e-7);
        let mut eig: Vec<f32> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        let mut want: Vec<f32> = g.scale.iter().map(|s| s * s).collect();
        eig.sort_by(f32::total_cmp);
        want.sort_by(f32::total_cmp);
        for (e, w) in eig.iter().zip(&want) {
            assert!((e - w).abs() < 1e-5, "{eig:?} vs {want:?}");
        }
    }
}

#[test]
fn camera_ring_geometry() {
    let intr = Intrinsics::default();
    let cams = camera_ring([0.5, 0.0, -1.0], 4.0, 4, 0.0, &intr).unwrap();
    let c = Vector3::new(0.5, 0.0, -1.0);
    for cam in &cams {
        let to_c = c - Vector3::from(cam.position);
        assert!((to_c.norm() - 4.0).abs() < 1e-5);
        assert!((cam.forward() - to_c / 4.0).norm() < 1e-5);
        let (u, v) = cam.project(&cam.world_to_camera(c.into()));
        assert!((u - 32.0).abs() < 1e-4 && (v - 32.0).abs() < 1e-4);
    }
    let angle = |a: &Camera, b: &Camera| a.forward().angle(&b.forward()).to_degrees();
    assert!((angle(&cams[0], &cams[1]) - 90.0).abs() < 1e-3);
    let cams8 = camera_ring([0.0; 3], 3.0, 8, 0.0, &intr).unwrap();
    let pairs = view_pairs(8);
    assert!(pairs.contains(&(0, 4, PairRange::Long)));
    assert!((angle(&cams8[0], &cams8[4]) - 180.0).abs() < 1e-2);
    assert_eq!(pairs.iter().filter(|p| p.2 == PairRange::Short).count(), 8);
    assert_eq!(pairs.iter().filter(|p| p.2 == PairRange::Long).count(), 4);
    assert!(camera_ring([0.0; 3], 3.0, 1, DEFAULT_ELEVATION, &intr).is_err());
    assert!(camera_ring([0.0; 3], 0.0, 4, DEFAULT_ELEVATION, &intr).is_err());
    assert!(camera_ring([0.0; 3], 1.0, 4, 1.6, &intr).is_err());
}

#[test]
fn elevated_ring_looks_down_without_roll() {
    let c = Vector3::new(0.0, 1.0, 0.0);
    let cams = camera_ring(c.into(), 4.0, 6, DEFAULT_ELEVATION, &Intrinsics::default()).unwrap();
    for (k, cam) in cams.iter().enumerate() {
        let to_c = c - Vector3::from(cam.position);
        assert!((to_c.norm() - 4.0).abs() < 1e-5);
        assert!((cam.forward() - to_c / 4.0).norm() < 1e-5);
        // Above the center (world -y is up) and looking down at DEFAULT_ELEVATION.
        assert!((cam.forward().y - DEFAULT_ELEVATION.sin()).abs() < 1e-5);
        let right = cam.rotation().transform_vector(&Vector3::x());
        assert!(right.y.abs() < 1e-6);
        let az = cam.forward().x.atan2(cam.forward().z).to_degrees().rem_euclid(360.0);
        assert!((az - 60.0 * k as f32).abs() < 1e-3 || (az - 60.0 * k as f32).abs() > 359.99);
    }
}

#[test]
fn unproject_inverts_project() {
    let cams = camera_ring([0.0; 3], 5.0, 5, DEFAULT_ELEVATION, &Intrinsics::default()).unwrap();
    let p = [0.3, -0.2, 0.4];
    for cam in &cams {
        let pc = cam.world_to_camera(p);
        let (u, v) = cam.project(&pc);
        let back = cam.unproject(u, v, pc.z);
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-5);
        }
    }
}

#[test]
fn with_colors_keeps_geometry() {
    let s = generate_toy_scene(SceneKind::TexturedSlab, 30, 2, 8).unwrap();
    let out = s.with_colors(&vec![[0.5; 3]; 30]).unwrap();
    assert!(s.gaussians.iter().zip(&out.gaussians).all(|(a, b)| a.same_geometry(b)));
    assert!(s.with_colors(&[[0.5; 3]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn toy_scenes_satisfy_invariants(kind in 0usize..3, n in 2usize..150, seed in any::<u64>()) {
        let s = generate_toy_scene(SceneKind::ALL[kind], n, seed, 16).unwrap();
        prop_assert_eq!(s.len(), n);
        s.validate().unwrap();
        for k in 0..3 {
            let lo = s.gaussians.iter().map(|g| g.color[k]).fold(1.0f32, f32::min);
            let hi = s.gaussians.iter().map(|g| g.color[k]).fold(0.0f32, f32::max);
            prop_assert!(hi - lo >= 0.5);
        }
        prop_assert!(!s.is_distilled());
    }

    #[test]
    fn gscn_round_trip_prop(kind in 0usize..3, n in 1usize..40, seed in any::<u64>(), d in 1usize..20) {
        let mut s = generate_toy_scene(SceneKind::ALL[kind], n, seed, d).unwrap();
        for (i, g) in s.gaussians.iter_mut().enumerate() {
            g.embedding.iter_mut().enumerate().for_each(|(j, v)| *v = (i * 31 + j) as f32 * 0.37 - 2.0);
        }
        let bytes = encode_scene(&s);
        let back = decode_scene(&bytes).unwrap();
        prop_assert_eq!(back.gaussians, s.gaussians);
    }
}
