mod common;

use std::collections::BTreeSet;
use std::path::Path;

use autograd::Tensor;
use common::rng;
use proptest::prelude::*;
use thermofront::data::synth::{render, FaceGeometry, SyntheticFaceSpec};
use thermofront::data::*;
use thermofront::Error;

const POSES: [f64; 4] = [-60.0, -30.0, 30.0, 60.0];

fn generate(dir: &Path, n: usize, seed: u64) -> Dataset {
    let manifest = generate_synthetic_dataset(n, &POSES, dir, seed).unwrap();
    Dataset::load(&load_manifest(&manifest).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "landmarks"] {
        let mut entries: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out.push(("manifest".into(), std::fs::read(dir.join(MANIFEST_NAME)).unwrap()));
    out
}

fn mean_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.numel() as f64
}

fn to_three(t: Tensor<f32>) -> Tensor<f32> {
    if t.shape()[0] == 3 {
        return t;
    }
    Tensor::cat0(&[t.clone(), t.clone(), t])
}

// ---- synthetic generation ----

#[test]
fn synthetic_set_has_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(16, &POSES, dir.path(), 7).unwrap();
    let m = load_manifest(&manifest).unwrap();
    assert_eq!(m.records.len(), 96);
    assert_eq!(m.num_identities(), 16);
    assert_eq!(std::fs::read_dir(dir.path().join("images")).unwrap().count(), 96);
    for ids in m.identities.values() {
        assert_eq!(ids.visible_frontal.len(), 1);
        assert_eq!(ids.thermal_frontal.len(), 1);
        assert_eq!(ids.thermal_profile.len(), 4);
        assert!(ids.visible_profile.is_empty());
    }
    let ds = Dataset::load(&m).unwrap();
    assert_eq!(ds.num_identities(), 16);
    for e in ds.identities() {
        let f = ds.record(e.frontal);
        assert_eq!(
            (f.domain, f.frontal, f.identity.as_str()),
            (Domain::Visible, true, e.name.as_str())
        );
        assert_eq!(e.thermal.len(), 5);
        assert!(e
            .probes
            .iter()
            .all(|&p| ds.record(p).is_profile() && ds.record(p).domain == Domain::Thermal));
        for &i in &e.thermal {
            let img = ds.image(i);
            assert_eq!(img.shape(), &[3, IMAGE_SIZE, IMAGE_SIZE]);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic_dataset(4, &POSES, a.path(), 11).unwrap();
    generate_synthetic_dataset(4, &POSES, b.path(), 11).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    let c = tempfile::tempdir().unwrap();
    generate_synthetic_dataset(4, &POSES, c.path(), 12).unwrap();
    assert_ne!(files(a.path()), files(c.path()));
}

#[test]
fn generation_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_synthetic_dataset(1, &POSES, dir.path(), 7),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        generate_synthetic_dataset(4, &[0.0], dir.path(), 7),
        Err(Error::InvalidArgument(_))
    ));
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    assert!(matches!(
        generate_synthetic_dataset(2, &POSES, &file, 7),
        Err(Error::Io { .. })
    ));
}

#[test]
fn rendering_is_pure() {
    let spec = SyntheticFaceSpec {
        identity_seed: 42,
        pose: 30.0,
        domain: Domain::Thermal,
        expression: 1,
    };
    assert_eq!(render(&spec), render(&spec));
}

#[test]
fn domains_are_distinguishable() {
    for seed in [1u64, 2, 3, 1234] {
        for pose in [0.0, 30.0, -60.0] {
            let spec = |domain| SyntheticFaceSpec {
                identity_seed: seed,
                pose,
                domain,
                expression: 0,
            };
            let vis = render(&spec(Domain::Visible));
            let th = to_three(render(&spec(Domain::Thermal)));
            let mad = mean_abs_diff(&vis, &th);
            assert!(mad > 0.1, "seed {seed} pose {pose}: mean abs difference {mad}");
        }
    }
}

#[test]
fn identities_are_nearest_neighbor_separable() {
    // Gallery: neutral visible frontals. Queries: the same faces with other expressions.
    let seeds = synth::identity_seeds(16, 7);
    let frontal = |seed: u64, expression: u32| {
        render(&SyntheticFaceSpec {
            identity_seed: seed,
            pose: 0.0,
            domain: Domain::Visible,
            expression,
        })
    };
    let gallery: Vec<_> = seeds.iter().map(|&s| frontal(s, 0)).collect();
    for (truth, &s) in seeds.iter().enumerate() {
        for expression in 1..4 {
            let q = frontal(s, expression);
            let dist = |g: &Tensor<f32>| {
                q.data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
            };
            let best = (0..gallery.len())
                .min_by(|&a, &b| dist(&gallery[a]).total_cmp(&dist(&gallery[b])))
                .unwrap();
            assert_eq!(best, truth, "identity {truth}, expression {expression}");
        }
    }
}

#[test]
fn landmark_files_match_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = load_manifest(&generate_synthetic_dataset(3, &POSES, dir.path(), 5).unwrap()).unwrap();
    let seeds = synth::identity_seeds(3, 5);
    for r in &manifest.records {
        let i: usize = r.identity[2..].parse().unwrap();
        let lm = thermofront::masks::read_landmark_file(&manifest.resolve(r.landmarks.as_ref().unwrap())).unwrap();
        assert_eq!(lm[0].landmarks, FaceGeometry::from_seed(seeds[i]).landmarks(r.pose));
    }
}

// ---- preprocessing ----

fn png_bytes(img: image::DynamicImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[test]
fn preprocess_resizes_and_scales() {
    let rgb = image::RgbImage::from_fn(256, 256, |x, y| image::Rgb([x as u8, y as u8, ((x + y) / 2) as u8]));
    let t = preprocess_bytes(&png_bytes(rgb.into()), 128).unwrap();
    assert_eq!(t.shape(), &[3, 128, 128]);
    assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let flat = image::RgbImage::from_pixel(200, 150, image::Rgb([128, 128, 128]));
    let t = preprocess_bytes(&png_bytes(flat.into()), 128).unwrap();
    assert!(t.data().iter().all(|&v| (v as f64 - 128.0 / 255.0).abs() < 1e-6));
}

#[test]
fn grayscale_is_replicated() {
    let gray = image::GrayImage::from_fn(128, 128, |x, y| image::Luma([(x * 2 + y) as u8]));
    let t = preprocess_bytes(&png_bytes(gray.into()), 128).unwrap();
    let plane = 128 * 128;
    let d = t.data();
    assert!((0..plane).all(|i| d[i] == d[plane + i] && d[i] == d[2 * plane + i]));
    assert_eq!(d[5 * 128 + 3], (3 * 2 + 5) as f32 / 255.0);
}

#[test]
fn undecodable_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.png");
    std::fs::write(&path, b"not an image").unwrap();
    match preprocess(&path) {
        Err(e @ Error::Image { .. }) => assert!(e.to_string().contains("broken.png")),
        other => panic!("expected image error, got {other:?}"),
    }
}

#[test]
fn preprocess_is_idempotent_on_conforming_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let t = render(&SyntheticFaceSpec {
        identity_seed: 9,
        pose: 0.0,
        domain: Domain::Visible,
        expression: 0,
    });
    // Quantize first so the PNG round trip is lossless.
    let t = t.map(|v| (v * 255.0).round() / 255.0);
    save_png(&path, &t).unwrap();
    let once = preprocess(&path).unwrap();
    assert!(mean_abs_diff(&once, &t) < 1e-6);
    save_png(&path, &once).unwrap();
    let twice = preprocess(&path).unwrap();
    assert!(once.data().iter().zip(twice.data()).all(|(a, b)| (a - b).abs() <= 1e-6));
}

// ---- manifests ----

fn write_manifest(dir: &Path, rows: &[&str]) -> std::path::PathBuf {
    let path = dir.join("manifest.csv");
    let mut text = MANIFEST_HEADER.join(",");
    for r in rows {
        text.push('\n');
        text.push_str(r);
    }
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn valid_manifest_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        &[
            "a_v.png,alice,visible,0,true,a.txt",
            "a_t.png,alice,thermal,45,false,",
            "b_v.png,bob,visible,2.5,true,b.txt",
            "b_t.png,bob,thermal,-30,false,",
        ],
    );
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.records.len(), 4);
    assert_eq!(m.num_identities(), 2);
    assert_eq!(m.records[1].domain, Domain::Thermal);
    assert_eq!(m.records[1].pose, 45.0);
    assert_eq!(m.records[1].landmarks, None);
    assert_eq!(m.identities["bob"].thermal_profile, vec![3]);
    assert_eq!(m.resolve(Path::new("a_v.png")), dir.path().join("a_v.png"));
}

#[test]
fn unknown_domain_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        &["a_v.png,alice,visible,0,true,a.txt", "a_t.png,alice,infrared,45,false,"],
    );
    match load_manifest(&path) {
        Err(e @ Error::Manifest { line: 3, .. }) => assert!(e.to_string().contains("infrared"), "{e}"),
        other => panic!("expected line-3 manifest error, got {other:?}"),
    }
}

#[test]
fn inconsistent_frontal_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), &["a_v.png,alice,visible,20,true,a.txt"]);
    assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 2, .. })));
}

#[test]
fn wrong_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "file,id\nx,y\n").unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 1, .. })));
}

#[test]
fn unpaired_identities_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        &[
            "a_v.png,alice,visible,0,true,a.txt",
            "a_t.png,alice,thermal,45,false,",
            "c_t.png,carol,thermal,30,false,",
            "d_t.png,dave,thermal,60,false,",
        ],
    );
    match load_manifest(&path) {
        Err(Error::Unpaired(ids)) => assert_eq!(ids, vec!["carol".to_string(), "dave".to_string()]),
        other => panic!("expected pairing error, got {other:?}"),
    }
}

// ---- pair sampling ----

#[test]
fn sampling_is_deterministic_and_labels_hold() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(dir.path(), 6, 3);
    let a = sample_dual_path_batch(&ds, 8, 0.5, &mut rng(1)).unwrap();
    let b = sample_dual_path_batch(&ds, 8, 0.5, &mut rng(1)).unwrap();
    assert_eq!((&a.x1, &a.x2, &a.y1, &a.same), (&b.x1, &b.x2, &b.y1, &b.same));
    assert_eq!(a.x1.shape(), &[8, 3, 128, 128]);
    assert_eq!(a.m2.shape(), &[8, 3, 128, 128]);

    let pairs = sample_pair_indices(&ds, 500, 0.5, &mut rng(2)).unwrap();
    for p in &pairs {
        let (ia, ib) = (&ds.identities()[p.first.0], &ds.identities()[p.second.0]);
        assert_eq!(p.same, ia.name == ib.name);
        assert_eq!(ds.record(p.first.1).identity, ia.name);
        assert_eq!(ds.record(p.second.1).identity, ib.name);
        assert_eq!(ds.record(p.first.1).domain, Domain::Thermal);
    }
    let batch = PairBatch::assemble(&ds, &pairs[..3]).unwrap();
    let plane = 3 * 128 * 128;
    for (k, p) in pairs[..3].iter().enumerate() {
        let e = &ds.identities()[p.second.0];
        assert_eq!(&batch.y2.data()[k * plane..(k + 1) * plane], ds.image(e.frontal).data());
        assert_eq!(
            &batch.x2.data()[k * plane..(k + 1) * plane],
            ds.image(p.second.1).data()
        );
        assert_eq!(&batch.m2.data()[k * plane..k * plane + 128 * 128], e.mask.mask.data());
        assert_eq!(batch.identities[k].1, e.name);
    }
}

#[test]
fn same_fraction_boundaries_and_law_of_large_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(dir.path(), 4, 8);
    let all = sample_pair_indices(&ds, 200, 1.0, &mut rng(3)).unwrap();
    assert!(all.iter().all(|p| p.same && p.first.0 == p.second.0));
    let none = sample_pair_indices(&ds, 200, 0.0, &mut rng(3)).unwrap();
    assert!(none.iter().all(|p| !p.same && p.first.0 != p.second.0));

    let pairs = sample_pair_indices(&ds, 10_000, 0.5, &mut rng(4)).unwrap();
    let frac = pairs.iter().filter(|p| p.same).count() as f64 / 10_000.0;
    assert!((0.48..=0.52).contains(&frac), "same-identity fraction {frac}");
}

#[test]
fn sampling_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(dir.path(), 4, 8);
    assert!(matches!(
        sample_dual_path_batch(&ds, 0, 0.5, &mut rng(0)),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        sample_pair_indices(&ds, 4, 1.5, &mut rng(0)),
        Err(Error::InvalidArgument(_))
    ));
    let one = ds.subset(&["id000"]);
    assert!(matches!(
        sample_pair_indices(&one, 4, 0.5, &mut rng(0)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn identity_split_is_disjoint_three_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(dir.path(), 8, 2);
    let (train, test) = ds.split_by_identity();
    let names = |d: &Dataset| d.identities().iter().map(|e| e.name.clone()).collect::<BTreeSet<_>>();
    let (a, b) = (names(&train), names(&test));
    assert_eq!((a.len(), b.len()), (6, 2));
    assert!(a.is_disjoint(&b));
    assert_eq!(a.union(&b).count(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_synthetic_render_is_in_range(seed in any::<u64>(), pose in -80.0f64..80.0, expression in 0u32..4) {
        for domain in [Domain::Visible, Domain::Thermal] {
            let t = render(&SyntheticFaceSpec { identity_seed: seed, pose, domain, expression });
            prop_assert_eq!(t.shape()[1..].to_vec(), vec![128, 128]);
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
