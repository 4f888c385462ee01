//! Manifests, preprocessing, dual-path pair sampling and the synthetic paired dataset.

mod dataset;
mod generate;
mod preprocess;
mod records;
pub mod synth;

pub use dataset::{sample_dual_path_batch, sample_pair_indices, Dataset, IdentityEntry, PairBatch, PairIndex};
pub use generate::{generate_synthetic_dataset, identity_name, MANIFEST_NAME};
pub use preprocess::{preprocess, preprocess_bytes, save_png, IMAGE_SIZE};
pub use records::{load_manifest, Domain, FaceRecord, IdentityRecords, Manifest, FRONTAL_TOLERANCE, MANIFEST_HEADER};
