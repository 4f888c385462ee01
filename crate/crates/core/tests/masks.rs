mod common;

use autograd::{Graph, Tensor};
use common::{randn, rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use thermofront::data::synth::FaceGeometry;
use thermofront::masks::*;
use thermofront::Error;

fn example() -> LandmarkSet {
    LandmarkSet::from_points([
        Point::new(44.0, 52.0),
        Point::new(84.0, 52.0),
        Point::new(64.0, 74.0),
        Point::new(50.0, 94.0),
        Point::new(78.0, 94.0),
    ])
}

/// Boxes `(x0, y0, x1, y1)` rebuilt from the stated proportions, before clipping.
fn oracle_boxes(lm: &LandmarkSet) -> Vec<(f64, f64, f64, f64)> {
    let d = ((lm.right_eye.x - lm.left_eye.x).powi(2) + (lm.right_eye.y - lm.left_eye.y).powi(2)).sqrt();
    let centered = |cx: f64, cy: f64, w: f64, h: f64| (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
    let pad = 0.15 * d;
    vec![
        centered(lm.left_eye.x, lm.left_eye.y - 0.1 * d, 0.45 * d, 0.35 * d),
        centered(lm.right_eye.x, lm.right_eye.y - 0.1 * d, 0.45 * d, 0.35 * d),
        centered(lm.nose.x, lm.nose.y, 0.35 * d, 0.45 * d),
        (
            lm.mouth_left.x.min(lm.mouth_right.x) - pad,
            lm.mouth_left.y.min(lm.mouth_right.y) - pad,
            lm.mouth_left.x.max(lm.mouth_right.x) + pad,
            lm.mouth_left.y.max(lm.mouth_right.y) + pad,
        ),
    ]
}

/// Pixel-by-pixel point-in-box test over the clipped union.
fn oracle_mask(lm: &LandmarkSet, h: usize, w: usize) -> Vec<bool> {
    let boxes: Vec<_> = oracle_boxes(lm)
        .into_iter()
        .map(|(x0, y0, x1, y1)| {
            (
                x0.clamp(0.0, w as f64),
                y0.clamp(0.0, h as f64),
                x1.clamp(0.0, w as f64),
                y1.clamp(0.0, h as f64),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            out.push(
                boxes
                    .iter()
                    .any(|&(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1),
            );
        }
    }
    out
}

fn as_bools(m: &ComponentMask) -> Vec<bool> {
    m.mask.data().iter().map(|&v| v == 1.0).collect()
}

#[test]
fn example_matches_brute_force_union() {
    let m = mask_from_landmarks(&example(), (128, 128)).unwrap();
    let want = oracle_mask(&example(), 128, 128);
    assert_eq!(as_bools(&m), want);
    assert_eq!(m.area(), want.iter().filter(|&&b| b).count());
    assert!(m.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(m.area() * 100 >= 128 * 128);
}

#[test]
fn clipped_boxes_match_brute_force() {
    // Near the corner, so every eye box leaves the frame.
    let lm = example().translate(-40.0, -49.0);
    let m = mask_from_landmarks(&lm, (128, 128)).unwrap();
    assert_eq!(as_bools(&m), oracle_mask(&lm, 128, 128));
}

#[test]
fn translation_shifts_mask() {
    let base = mask_from_landmarks(&example(), (128, 128)).unwrap();
    let moved = mask_from_landmarks(&example().translate(5.0, 5.0), (128, 128)).unwrap();
    assert_eq!(base.area(), moved.area());
    let (b, m) = (base.mask.data(), moved.mask.data());
    for r in 0..128 {
        for c in 0..128 {
            let shifted = if r >= 5 && c >= 5 {
                b[(r - 5) * 128 + (c - 5)]
            } else {
                0.0
            };
            assert_eq!(m[r * 128 + c], shifted, "pixel ({r}, {c})");
        }
    }
}

#[test]
fn coincident_eyes_are_rejected() {
    let mut lm = example();
    lm.right_eye = lm.left_eye;
    match mask_from_landmarks(&lm, (128, 128)) {
        Err(e @ Error::LandmarksCollapsed { .. }) => assert!(e.to_string().contains("landmarks collapsed")),
        other => panic!("expected collapse error, got {other:?}"),
    }
}

#[test]
fn out_of_frame_landmarks_are_rejected() {
    let mut lm = example();
    lm.nose = Point::new(64.0, 130.0);
    assert!(matches!(
        mask_from_landmarks(&lm, (128, 128)),
        Err(Error::InvalidLandmarks(_))
    ));
}

#[test]
fn identity_and_null_masks() {
    let img = uniform::<f32>(&[3, 128, 128], &mut rng(1));
    assert_eq!(apply_mask(&ComponentMask::filled((128, 128), true), &img).unwrap(), img);
    let zero = apply_mask(&ComponentMask::filled((128, 128), false), &img).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn random_mask_matches_elementwise_loop() {
    let mut r = rng(2);
    let bits: Vec<f32> = (0..16 * 12)
        .map(|_| if r.random::<bool>() { 1.0 } else { 0.0 })
        .collect();
    let m = ComponentMask {
        mask: Tensor::new(&[1, 16, 12], bits.clone()),
        boxes: Vec::new(),
    };
    let img = randn::<f64>(&[2, 3, 16, 12], &mut r);
    let out = apply_mask(&m, &img).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            for h in 0..16 {
                for w in 0..12 {
                    let i = ((b * 3 + c) * 16 + h) * 12 + w;
                    assert_eq!(out.data()[i], img.data()[i] * bits[h * 12 + w] as f64);
                }
            }
        }
    }
}

#[test]
fn size_mismatch_is_rejected() {
    let m = ComponentMask::filled((128, 128), true);
    assert!(matches!(
        apply_mask(&m, &Tensor::<f32>::zeros(&[3, 64, 64])),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        apply_mask(&m, &Tensor::<f32>::zeros(&[128, 128])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn graph_gate_agrees_with_tensor_path() {
    let m = mask_from_landmarks(&example(), (128, 128)).unwrap();
    let img = uniform::<f64>(&[2, 3, 128, 128], &mut rng(3));
    let gate = mask_batch::<f64>(&[&m, &m], 3).unwrap();
    let g = Graph::new();
    let out = apply_mask_var(&gate, g.constant(img.clone())).unwrap();
    assert_eq!(*out.value(), apply_mask(&m, &img).unwrap());
}

#[test]
fn frontal_synthetic_landmarks_are_symmetric() {
    for seed in [1u64, 17, 99, 12345] {
        let lm = synthetic_landmarks(seed, 0.0);
        assert!((lm.left_eye.x + lm.right_eye.x - 128.0).abs() <= 1.0);
        assert!((lm.left_eye.y - lm.right_eye.y).abs() <= 1.0);
        assert!((lm.mouth_left.x + lm.mouth_right.x - 128.0).abs() <= 1.0);
        assert!((lm.nose.x - 64.0).abs() <= 1.0);
        assert_eq!(lm, synthetic_landmarks(seed, 0.0));
    }
}

#[test]
fn yaw_shrinks_interocular_distance() {
    for seed in [3u64, 8, 21] {
        let geo = FaceGeometry::from_seed(seed);
        let h = geo.eye_half_sep;
        // Both eyes share the same yaw offset, so only the perspective term matters.
        let t = 60f64.to_radians();
        let proj = |x: f64| x * t.cos() / (1.0 + x * t.sin() / 160.0);
        let expected = proj(h) - proj(-h);
        let frontal = synthetic_landmarks(seed, 0.0).interocular();
        let turned = synthetic_landmarks(seed, 60.0).interocular();
        assert!((frontal - 2.0 * h).abs() < 1e-9);
        assert!((turned - expected).abs() < 1e-9);
        assert!(turned < frontal);
    }
}

#[test]
fn landmark_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.txt");
    let records: Vec<LandmarkRecord> = (0..3)
        .map(|i| LandmarkRecord {
            image: format!("images/id{i:03}_visible_p0.png").into(),
            landmarks: synthetic_landmarks(i, 30.0 * i as f64),
        })
        .collect();
    write_landmark_file(&path, &records).unwrap();
    assert_eq!(read_landmark_file(&path).unwrap(), records);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().all(|l| l.split_whitespace().count() == 11));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn apply_mask_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let bits: Vec<f32> = (0..64).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let m = ComponentMask { mask: Tensor::new(&[1, 8, 8], bits), boxes: Vec::new() };
        let x = randn::<f64>(&[3, 8, 8], &mut r);
        let z = randn::<f64>(&[3, 8, 8], &mut r);
        let combo = x.zip_map(&z, |p, q| a * p + b * q);
        let lhs = apply_mask(&m, &combo).unwrap();
        let (mx, mz) = (apply_mask(&m, &x).unwrap(), apply_mask(&m, &z).unwrap());
        let rhs = mx.zip_map(&mz, |p, q| a * p + b * q);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn mask_is_binary_deterministic_and_matches_oracle(
        dx in -20.0f64..20.0, dy in -20.0f64..20.0, spread in 0.7f64..1.3
    ) {
        let base = example();
        let scale = |p: Point| Point::new(64.0 + (p.x - 64.0) * spread + dx, 64.0 + (p.y - 64.0) * spread + dy);
        let lm = LandmarkSet::from_points(base.points().map(scale));
        let m = mask_from_landmarks(&lm, (128, 128)).unwrap();
        prop_assert!(m.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(&m, &mask_from_landmarks(&lm, (128, 128)).unwrap());
        prop_assert_eq!(as_bools(&m), oracle_mask(&lm, 128, 128));
    }

    #[test]
    fn unclipped_translation_keeps_area(dx in -8i32..8, dy in -8i32..8) {
        let a = mask_from_landmarks(&example(), (128, 128)).unwrap().area();
        let moved = example().translate(dx as f64, dy as f64);
        prop_assert_eq!(mask_from_landmarks(&moved, (128, 128)).unwrap().area(), a);
    }
}
