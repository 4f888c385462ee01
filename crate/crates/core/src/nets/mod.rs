//! Differentiable network components.

mod attention;
mod classifier;
mod critic;
mod equalize;
mod generator;
mod layers;
mod params;

use autograd::{Float, Var};

pub use attention::{self_attention, AttentionOutput};
pub use classifier::{domain_classifier_forward, DomainClassifierConfig, DomainClassifierParams};
pub use critic::{critic_forward, CriticConfig, CriticParams};
pub use equalize::{ensure_finite, equalize_features, EqualizationConfig};
pub use generator::{decoder_forward, encoder_forward, GeneratorConfig, GeneratorParams, LatentFeatures, Synthesis};
pub use params::{Bound, Network, ParamStore};

pub(crate) use params::StoreLayout;

/// Identity on the forward pass; scales the backward gradient by `-lambda`.
pub fn gradient_reversal<'g, T: Float>(x: Var<'g, T>, lambda: f64) -> Var<'g, T> {
    x.reverse_grad(lambda)
}
