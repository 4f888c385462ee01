mod common;

use autograd::Tensor;
use common::{rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use thermofront::eval::*;
use thermofront::Error;

/// Fraction of `scores` at or above `t`.
fn rate(scores: &[f64], t: f64) -> f64 {
    scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64
}

/// Mann-Whitney statistic with ties counted as one half, in percent.
fn mann_whitney(g: &[f64], i: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in g {
        for &b in i {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    100.0 * wins / (g.len() * i.len()) as f64
}

/// Every operating point of a brute-force threshold sweep, strictest first.
fn sweep(s: &ScoreSet) -> Vec<(f64, f64)> {
    let mut ts: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut out = vec![(0.0, 0.0)];
    out.extend(ts.iter().map(|&t| (rate(&s.imposter, t), rate(&s.genuine, t))));
    out
}

fn tar_oracle(s: &ScoreSet, alpha: f64) -> f64 {
    100.0
        * sweep(s)
            .iter()
            .filter(|p| p.0 <= alpha)
            .map(|p| p.1)
            .fold(0.0, f64::max)
}

fn random_set(r: &mut impl Rng, ties: bool) -> ScoreSet {
    let (ng, ni) = (r.random_range(1..40), r.random_range(1..40));
    let mut draw = |shift: f64| {
        let v = r.random::<f64>() + shift;
        if ties {
            (v * 8.0).round() / 8.0
        } else {
            v
        }
    };
    let g = (0..ng).map(|_| draw(0.3)).collect();
    let i = (0..ni).map(|_| draw(0.0)).collect();
    ScoreSet::new(g, i)
}

#[test]
fn perfect_separation() {
    let r = roc_metrics(&ScoreSet::new(vec![0.9, 0.8], vec![0.1, 0.2])).unwrap();
    assert_eq!(
        (r.auc, r.eer, r.tar_at_far_1, r.tar_at_far_5),
        (100.0, 0.0, 100.0, 100.0)
    );
    assert_eq!((r.genuine_count, r.imposter_count), (2, 2));
}

#[test]
fn three_of_four_pairs_ordered() {
    let (g, i) = (vec![0.8, 0.3], vec![0.5, 0.1]);
    let r = roc_metrics(&ScoreSet::new(g.clone(), i.clone())).unwrap();
    assert_eq!(mann_whitney(&g, &i), 75.0);
    assert!((r.auc - 75.0).abs() < 1e-9);
}

#[test]
fn equal_error_at_one_third() {
    let s = ScoreSet::new(vec![0.9, 0.6, 0.4], vec![0.5, 0.3, 0.1]);
    // Brute force: FAR and FRR agree at 1/3 for any threshold in (0.4, 0.5].
    for t in [0.41, 0.45, 0.5] {
        assert!((rate(&s.imposter, t) - 1.0 / 3.0).abs() < 1e-12);
        assert!((1.0 - rate(&s.genuine, t) - 1.0 / 3.0).abs() < 1e-12);
    }
    let r = roc_metrics(&s).unwrap();
    assert!((r.eer - 100.0 / 3.0).abs() < 0.005, "eer {}", r.eer);
}

#[test]
fn empty_and_non_finite_sets_are_rejected() {
    assert!(matches!(
        roc_metrics(&ScoreSet::new(vec![], vec![0.1])),
        Err(Error::EmptyScores {
            genuine: 0,
            imposter: 1
        })
    ));
    assert!(matches!(
        roc_metrics(&ScoreSet::new(vec![0.4], vec![])),
        Err(Error::EmptyScores { .. })
    ));
    assert!(roc_metrics(&ScoreSet::new(vec![f64::NAN], vec![0.1])).is_err());
}

#[test]
fn random_sets_match_independent_oracles() {
    let mut r = rng(17);
    for k in 0..100 {
        let s = random_set(&mut r, k % 2 == 1);
        let rep = roc_metrics(&s).unwrap();
        let mw = mann_whitney(&s.genuine, &s.imposter);
        assert!((rep.auc - mw).abs() < 1e-9, "set {k}: {} vs {mw}", rep.auc);
        assert_eq!(rep.tar_at_far_1, tar_oracle(&s, 0.01));
        assert_eq!(rep.tar_at_far_5, tar_oracle(&s, 0.05));
        for alpha in [0.1, 0.25, 0.5] {
            assert_eq!(rep.tar_at_far(alpha), tar_oracle(&s, alpha));
        }

        // The EER lies on the ROC segment where FAR first meets FRR.
        let pts = sweep(&s);
        let gap = |p: &(f64, f64)| p.0 - (1.0 - p.1);
        let w = pts.windows(2).find(|w| gap(&w[0]) <= 0.0 && gap(&w[1]) >= 0.0).unwrap();
        let (lo, hi) = if gap(&w[0]) == 0.0 {
            (w[0].0, w[0].0)
        } else {
            (w[0].0.max(1.0 - w[1].1), w[1].0.min(1.0 - w[0].1))
        };
        let eer = rep.eer / 100.0;
        assert!(
            eer >= lo - 1e-12 && eer <= hi + 1e-12,
            "set {k}: eer {eer} outside [{lo}, {hi}]"
        );
    }
}

#[test]
fn rank_invariance_is_exact() {
    let mut r = rng(5);
    for k in 0..40 {
        let s = random_set(&mut r, k % 3 == 0);
        let base = roc_metrics(&s).unwrap();
        for f in [|v: f64| v.exp(), |v: f64| 3.0 * v - 7.0, |v: f64| v.powi(3) + v] {
            let t = ScoreSet::new(
                s.genuine.iter().map(|&v| f(v)).collect(),
                s.imposter.iter().map(|&v| f(v)).collect(),
            );
            let rep = roc_metrics(&t).unwrap();
            assert_eq!(
                (rep.auc, rep.eer, rep.tar_at_far_1, rep.tar_at_far_5),
                (base.auc, base.eer, base.tar_at_far_1, base.tar_at_far_5)
            );
        }
    }
}

#[test]
fn swapping_sides_complements_auc() {
    let mut r = rng(6);
    for k in 0..50 {
        let s = random_set(&mut r, k % 2 == 0);
        let a = roc_metrics(&s).unwrap().auc;
        let b = roc_metrics(&ScoreSet::new(s.imposter.clone(), s.genuine.clone()))
            .unwrap()
            .auc;
        assert!((a + b - 100.0).abs() < 1e-9);
    }
}

#[test]
fn report_serializes_to_json() {
    let rep = roc_metrics(&ScoreSet::new(vec![0.9, 0.6, 0.4], vec![0.5, 0.3, 0.1])).unwrap();
    let text = serde_json::to_string(&rep).unwrap();
    let back: VerificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rep);
    assert_eq!(text, serde_json::to_string(&back).unwrap());
}

// ---- embeddings and protocol scoring ----

fn labeled(identity: &str, image: Tensor<f32>) -> LabeledImage {
    LabeledImage {
        identity: identity.into(),
        image,
    }
}

#[test]
fn embeddings_are_unit_and_continuous() {
    let emb = ConvEmbedder::<f32>::standard(128).unwrap();
    let mut r = rng(1);
    let img: Tensor<f32> = uniform(&[3, 128, 128], &mut r);
    let v = extract_embedding(&img, &emb).unwrap();
    assert_eq!(v.len(), emb.dim());
    assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    assert_eq!(v, extract_embedding(&img, &emb).unwrap());
    let signs: Vec<f32> = (0..img.numel())
        .map(|_| if r.random::<bool>() { 1e-6 } else { -1e-6 })
        .collect();
    let noisy = img.zip_map(&Tensor::new(img.shape(), signs), |x, n| x + n);
    assert!(cosine_similarity(&v, &extract_embedding(&noisy, &emb).unwrap()) > 0.999);

    let batch: Tensor<f32> = uniform(&[3, 3, 128, 128], &mut r);
    for row in extract_embeddings(&batch, &emb).unwrap() {
        assert!((row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn protocol_counts_genuine_and_imposter() {
    let mut r = rng(2);
    let mut img = || uniform::<f32>(&[3, 128, 128], &mut r);
    let gallery = vec![labeled("a", img()), labeled("b", img())];
    let probes = vec![
        labeled("a", img()),
        labeled("a", img()),
        labeled("b", img()),
        labeled("b", img()),
    ];
    let emb = ConvEmbedder::<f32>::standard(128).unwrap();
    let s = score_protocol(&gallery, &probes, None, &emb).unwrap();
    assert_eq!((s.genuine.len(), s.imposter.len(), s.entries.len()), (4, 4, 8));
    assert!(s.entries.iter().all(|e| e.genuine == (e.gallery == e.probe)));

    let through = score_protocol(&gallery, &probes, Some(&Passthrough), &emb).unwrap();
    assert_eq!(through, s);

    let mut csv = Vec::new();
    s.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("gallery,probe,probe_index,score,genuine"));
}

#[test]
fn unknown_probe_identity_is_named() {
    let img = Tensor::<f32>::full(&[3, 128, 128], 0.5);
    let gallery = vec![labeled("a", img.clone())];
    let probes = vec![labeled("zed", img)];
    let emb = ConvEmbedder::<f32>::standard(128).unwrap();
    match score_protocol(&gallery, &probes, None, &emb) {
        Err(e @ Error::UnknownProbeIdentity(_)) => assert!(e.to_string().contains("zed")),
        other => panic!("expected unknown-identity error, got {other:?}"),
    }
}

#[test]
fn mean_pixel_toy_scores_by_hand() {
    // One-dimensional embeddings normalize to the sign of the mean, so cosine is a sign product.
    let img = |v: f32| Tensor::<f32>::full(&[3, 4, 4], v);
    let gallery = vec![labeled("a", img(0.5)), labeled("b", img(-0.2))];
    let probes = vec![labeled("a", img(0.9)), labeled("b", img(-0.7)), labeled("b", img(0.1))];
    let s = score_protocol(&gallery, &probes, None, &MeanPixelEmbedder).unwrap();
    let got: Vec<(String, String, f64)> = s
        .entries
        .iter()
        .map(|e| (e.gallery.clone(), e.probe.clone(), e.score))
        .collect();
    let want = [
        ("a", "a", 1.0),
        ("b", "a", -1.0),
        ("a", "b", -1.0),
        ("b", "b", 1.0),
        ("a", "b", 1.0),
        ("b", "b", -1.0),
    ];
    assert_eq!(got.len(), want.len());
    for ((g, p, v), (wg, wp, wv)) in got.iter().zip(want) {
        assert_eq!((g.as_str(), p.as_str()), (wg, wp));
        assert!((v - wv).abs() < 1e-12);
    }
    assert_eq!(s.genuine.len(), 3);
}

#[test]
fn cosine_similarity_by_hand() {
    assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    assert!((cosine_similarity(&[2.0, -1.0], &[-4.0, 2.0]) + 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_range_and_tar_is_monotone(seed in any::<u64>(), ties in any::<bool>()) {
        let s = random_set(&mut rng(seed), ties);
        let rep = roc_metrics(&s).unwrap();
        for v in [rep.auc, rep.eer, rep.tar_at_far_1, rep.tar_at_far_5] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(rep.tar_at_far_1 <= rep.tar_at_far_5);
        let mut last = 0.0;
        for k in 0..=20 {
            let t = rep.tar_at_far(k as f64 / 20.0);
            prop_assert!(t >= last);
            last = t;
        }
        prop_assert!(rep.roc.windows(2).all(|w| w[1].far >= w[0].far && w[1].tar >= w[0].tar));
    }
}
