//! Thermal-to-visible face frontalization.
//!
//! A U-Net generator maps thermal profile faces to visible frontal faces. It
//! is trained against global and local gradient-penalty critics, with a
//! gradient-reversed domain classifier and a contrastive loss shaping the
//! encoder's latent space across two weight-shared paths.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod masks;
pub mod nets;
pub mod training;

pub use error::{Error, Result};
