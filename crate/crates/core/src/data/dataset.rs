use std::sync::Arc;

use autograd::Tensor;
use rand::Rng;

use super::preprocess::{preprocess, IMAGE_SIZE};
use super::records::{FaceRecord, Manifest};
use crate::error::{Error, Result};
use crate::masks::{mask_from_landmarks, read_landmark_file, ComponentMask};

/// Images of one identity, as record indices, plus its component mask.
#[derive(Clone, Debug)]
pub struct IdentityEntry {
    pub name: String,
    /// The visible frontal: ground truth, gallery image and mask source.
    pub frontal: usize,
    /// Every thermal image, frontal first.
    pub thermal: Vec<usize>,
    /// Thermal profiles only.
    pub probes: Vec<usize>,
    pub mask: ComponentMask,
}

/// Preprocessed images indexed by identity. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Dataset {
    records: Arc<Vec<FaceRecord>>,
    images: Arc<Vec<Tensor<f32>>>,
    identities: Vec<IdentityEntry>,
}

impl Dataset {
    /// Loads every image of the manifest and builds masks from visible frontal landmarks.
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let images = manifest
            .records
            .iter()
            .map(|r| preprocess(&manifest.resolve(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        let mut identities = Vec::new();
        let mut unpaired = Vec::new();
        for (name, idx) in &manifest.identities {
            let thermal = idx.thermal();
            let Some(&frontal) = idx.visible_frontal.first() else {
                if !thermal.is_empty() {
                    unpaired.push(name.clone());
                }
                continue;
            };
            if thermal.is_empty() {
                continue;
            }
            let rec = &manifest.records[frontal];
            let lm_path = rec.landmarks.as_ref().ok_or_else(|| {
                Error::InvalidLandmarks(format!(
                    "{}: visible frontal of `{name}` has no landmark file",
                    rec.path.display()
                ))
            })?;
            let lm_path = manifest.resolve(lm_path);
            let lm = read_landmark_file(&lm_path)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidLandmarks(format!("{}: no landmark record", lm_path.display())))?;
            let mask = mask_from_landmarks(&lm.landmarks, (IMAGE_SIZE, IMAGE_SIZE))?;
            identities.push(IdentityEntry {
                name: name.clone(),
                frontal,
                thermal,
                probes: idx.thermal_profile.clone(),
                mask,
            });
        }
        if !unpaired.is_empty() {
            return Err(Error::Unpaired(unpaired));
        }
        Ok(Self {
            records: Arc::new(manifest.records.clone()),
            images: Arc::new(images),
            identities,
        })
    }

    pub fn identities(&self) -> &[IdentityEntry] {
        &self.identities
    }

    pub fn record(&self, i: usize) -> &FaceRecord {
        &self.records[i]
    }

    pub fn image(&self, i: usize) -> &Tensor<f32> {
        &self.images[i]
    }

    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    /// Restriction to the named identities, in this dataset's order.
    pub fn subset(&self, names: &[&str]) -> Self {
        Self {
            records: Arc::clone(&self.records),
            images: Arc::clone(&self.images),
            identities: self
                .identities
                .iter()
                .filter(|e| names.contains(&e.name.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Disjoint identity split, 3:1; every fourth identity in name order is held out.
    pub fn split_by_identity(&self) -> (Self, Self) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, e) in self.identities.iter().enumerate() {
            if i % 4 == 3 {
                test.push(e.name.as_str());
            } else {
                train.push(e.name.as_str());
            }
        }
        (self.subset(&train), self.subset(&test))
    }
}

/// One dual-path pair as (identity index, thermal record index) on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub first: (usize, usize),
    pub second: (usize, usize),
    pub same: bool,
}

/// Draws `pairs` thermal pairs; each is same-identity with probability `same_id_fraction`.
pub fn sample_pair_indices(
    ds: &Dataset,
    pairs: usize,
    same_id_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<PairIndex>> {
    if pairs < 1 {
        return Err(Error::InvalidArgument("batch must hold at least one pair".into()));
    }
    if !(0.0..=1.0).contains(&same_id_fraction) {
        return Err(Error::InvalidArgument(format!(
            "same_id_fraction must lie in [0, 1], got {same_id_fraction}"
        )));
    }
    let n = ds.identities.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "pair sampling needs at least 2 identities, got {n}"
        )));
    }
    let pick = |rng: &mut dyn rand::RngCore, id: usize| -> usize {
        let t = &ds.identities[id].thermal;
        t[rng.random_range(0..t.len())]
    };
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let same = rng.random_bool(same_id_fraction);
        let a = rng.random_range(0..n);
        let ra = pick(rng, a);
        let (b, rb) = if same {
            let t = &ds.identities[a].thermal;
            let rb = if t.len() > 1 {
                let others: Vec<usize> = t.iter().copied().filter(|&r| r != ra).collect();
                others[rng.random_range(0..others.len())]
            } else {
                ra
            };
            (a, rb)
        } else {
            let b = (a + 1 + rng.random_range(0..n - 1)) % n;
            (b, pick(rng, b))
        };
        out.push(PairIndex {
            first: (a, ra),
            second: (b, rb),
            same,
        });
    }
    Ok(out)
}

/// A dual-path training batch of `P` pairs. Images are `[P, 3, S, S]`.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub x1: Tensor<f32>,
    pub x2: Tensor<f32>,
    /// Visible frontal ground truth for each side.
    pub y1: Tensor<f32>,
    pub y2: Tensor<f32>,
    /// Component masks broadcast over channels, `[P, 3, S, S]`.
    pub m1: Tensor<f32>,
    pub m2: Tensor<f32>,
    /// 1 for same-identity pairs, 0 otherwise.
    pub same: Vec<f64>,
    pub identities: Vec<(String, String)>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.same.len()
    }

    pub fn is_empty(&self) -> bool {
        self.same.is_empty()
    }

    /// Gathers the tensors for sampled pairs.
    pub fn assemble(ds: &Dataset, pairs: &[PairIndex]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("batch must hold at least one pair".into()));
        }
        let side = |pick: fn(&PairIndex) -> (usize, usize)| -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
            let x: Vec<Tensor<f32>> = pairs.iter().map(|p| ds.image(pick(p).1).clone()).collect();
            let y: Vec<Tensor<f32>> = pairs
                .iter()
                .map(|p| ds.image(ds.identities[pick(p).0].frontal).clone())
                .collect();
            let masks: Vec<&ComponentMask> = pairs.iter().map(|p| &ds.identities[pick(p).0].mask).collect();
            Ok((
                Tensor::stack(&x),
                Tensor::stack(&y),
                crate::masks::mask_batch(&masks, 3)?,
            ))
        };
        let (x1, y1, m1) = side(|p| p.first)?;
        let (x2, y2, m2) = side(|p| p.second)?;
        Ok(Self {
            x1,
            x2,
            y1,
            y2,
            m1,
            m2,
            same: pairs.iter().map(|p| if p.same { 1.0 } else { 0.0 }).collect(),
            identities: pairs
                .iter()
                .map(|p| {
                    (
                        ds.identities[p.first.0].name.clone(),
                        ds.identities[p.second.0].name.clone(),
                    )
                })
                .collect(),
        })
    }
}

/// Samples and assembles a batch of `pairs` dual-path pairs.
pub fn sample_dual_path_batch(
    ds: &Dataset,
    pairs: usize,
    same_id_fraction: f64,
    rng: &mut impl Rng,
) -> Result<PairBatch> {
    let idx = sample_pair_indices(ds, pairs, same_id_fraction, rng)?;
    PairBatch::assemble(ds, &idx)
}
