//! Verification harness: embeddings, gallery/probe scoring and ROC metrics.

mod embedder;
mod metrics;
mod protocol;

pub use embedder::{ChannelMeanEmbedder, ConvEmbedder, Embedder, MeanPixelEmbedder, EMBEDDER_SEED};
pub use metrics::{roc_metrics, RocPoint, ScoreEntry, ScoreSet, VerificationReport};
pub use protocol::{
    cosine_similarity, evaluate_split, extract_embedding, extract_embeddings, protocol_images, score_protocol,
    score_split, Frontalizer, LabeledImage, Passthrough,
};
