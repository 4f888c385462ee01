use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One gallery-probe comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub gallery: String,
    pub probe: String,
    pub probe_index: usize,
    pub score: f64,
    pub genuine: bool,
}

/// Similarity scores split by whether the two sides share an identity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    /// Per-comparison detail, when the scores came from a protocol run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>) -> Self {
        Self {
            genuine,
            imposter,
            entries: Vec::new(),
        }
    }

    /// Comparisons as CSV: `gallery,probe,probe_index,score,genuine`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `+inf` for the accept-nothing point; JSON has no infinity, so it is written as `null`.
    #[serde(with = "threshold_json")]
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

mod threshold_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_some(t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Verification metrics; rates are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub auc: f64,
    pub eer: f64,
    pub tar_at_far_1: f64,
    pub tar_at_far_5: f64,
    pub genuine_count: usize,
    pub imposter_count: usize,
    /// Ordered from the strictest threshold (`+inf`, nothing accepted) to the loosest.
    pub roc: Vec<RocPoint>,
}

impl VerificationReport {
    /// True accept rate (percent) at the loosest threshold whose FAR does not exceed `far` (a fraction).
    pub fn tar_at_far(&self, far: f64) -> f64 {
        tar_at(&self.roc, far)
    }
}

fn tar_at(roc: &[RocPoint], far: f64) -> f64 {
    roc.iter().filter(|p| p.far <= far).map(|p| p.tar).fold(0.0, f64::max) * 100.0
}

/// ROC, AUC, EER and TAR@FAR for a score set; a pair is accepted iff `score >= threshold`.
pub fn roc_metrics(s: &ScoreSet) -> Result<VerificationReport> {
    if s.genuine.is_empty() || s.imposter.is_empty() {
        return Err(Error::EmptyScores {
            genuine: s.genuine.len(),
            imposter: s.imposter.len(),
        });
    }
    if s.genuine.iter().chain(&s.imposter).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = s
        .genuine
        .iter()
        .map(|&v| (v, true))
        .chain(s.imposter.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (ng, ni) = (s.genuine.len() as f64, s.imposter.len() as f64);
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    }];
    let (mut g, mut i) = (0usize, 0usize);
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        while k < all.len() && all[k].0 == t {
            if all[k].1 {
                g += 1;
            } else {
                i += 1;
            }
            k += 1;
        }
        roc.push(RocPoint {
            threshold: t,
            far: i as f64 / ni,
            tar: g as f64 / ng,
        });
    }

    let auc: f64 = roc
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tar + w[0].tar) / 2.0)
        .sum();

    let gap = |p: &RocPoint| p.far - (1.0 - p.tar);
    let eer = roc
        .windows(2)
        .find_map(|w| {
            let (a, b) = (gap(&w[0]), gap(&w[1]));
            if a == 0.0 {
                Some(w[0].far)
            } else if a < 0.0 && b >= 0.0 {
                let alpha = -a / (b - a);
                Some(w[0].far + alpha * (w[1].far - w[0].far))
            } else {
                None
            }
        })
        .unwrap_or(1.0);

    Ok(VerificationReport {
        auc: auc * 100.0,
        eer: eer * 100.0,
        tar_at_far_1: tar_at(&roc, 0.01),
        tar_at_far_5: tar_at(&roc, 0.05),
        genuine_count: s.genuine.len(),
        imposter_count: s.imposter.len(),
        roc,
    })
}
