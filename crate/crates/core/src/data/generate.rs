use std::path::{Path, PathBuf};

use super::preprocess::save_png;
use super::records::{Domain, FaceRecord, Manifest, FRONTAL_TOLERANCE};
use super::synth::{identity_seeds, render, FaceGeometry, SyntheticFaceSpec};
use crate::error::{Error, Result};
use crate::masks::{write_landmark_file, LandmarkRecord};

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Name of the `i`-th synthetic identity.
pub fn identity_name(i: usize) -> String {
    format!("id{i:03}")
}

/// Renders `n_identities` faces into `out_dir/{images,landmarks}` and writes the manifest.
///
/// Each identity gets a visible frontal, a thermal frontal and one thermal
/// image per entry of `poses`. Returns the manifest path.
pub fn generate_synthetic_dataset(n_identities: usize, poses: &[f64], out_dir: &Path, seed: u64) -> Result<PathBuf> {
    if n_identities < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 identities for pair sampling, got {n_identities}"
        )));
    }
    if let Some(p) = poses.iter().find(|p| !(p.abs() > FRONTAL_TOLERANCE && p.abs() <= 90.0)) {
        return Err(Error::InvalidArgument(format!(
            "profile pose {p} must satisfy {FRONTAL_TOLERANCE} < |pose| <= 90"
        )));
    }
    let images_dir = out_dir.join("images");
    let landmarks_dir = out_dir.join("landmarks");
    for d in [&images_dir, &landmarks_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut records = Vec::new();
    for (i, seed) in identity_seeds(n_identities, seed).into_iter().enumerate() {
        let identity = identity_name(i);
        let geometry = FaceGeometry::from_seed(seed);
        let shots = [(Domain::Visible, 0.0), (Domain::Thermal, 0.0)]
            .into_iter()
            .chain(poses.iter().map(|&p| (Domain::Thermal, p)));
        for (domain, pose) in shots {
            let stem = format!("{identity}_{domain}_p{pose:+}");
            let image_rel = PathBuf::from("images").join(format!("{stem}.png"));
            let lm_rel = PathBuf::from("landmarks").join(format!("{stem}.txt"));
            let spec = SyntheticFaceSpec {
                identity_seed: seed,
                pose,
                domain,
                expression: 0,
            };
            save_png(&out_dir.join(&image_rel), &render(&spec))?;
            write_landmark_file(
                &out_dir.join(&lm_rel),
                &[LandmarkRecord {
                    image: image_rel.clone(),
                    landmarks: geometry.landmarks(pose),
                }],
            )?;
            records.push(FaceRecord {
                path: image_rel,
                identity: identity.clone(),
                domain,
                pose,
                frontal: pose.abs() <= FRONTAL_TOLERANCE,
                landmarks: Some(lm_rel),
            });
        }
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    Manifest::write(&manifest, &records)?;
    Ok(manifest)
}
