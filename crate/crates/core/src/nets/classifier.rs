use autograd::{Float, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::equalize::{equalize_features, EqualizationConfig};
use super::layers::{Linear, LEAKY_SLOPE};
use super::params::{Bound, Network, ParamStore};
use crate::error::{Error, Result};

/// Three-layer perceptron estimating whether a latent came from a visible image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifierConfig {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub equalization: bool,
    pub equalization_eps: f64,
}

impl DomainClassifierConfig {
    pub fn for_latent(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: [128, 64],
            equalization: true,
            equalization_eps: EqualizationConfig::default().eps,
        }
    }

    pub(crate) fn layers(&self) -> [Linear; 3] {
        [
            Linear::new("cls.fc0", self.input_dim, self.hidden[0]),
            Linear::new("cls.fc1", self.hidden[0], self.hidden[1]),
            Linear::new("cls.fc2", self.hidden[1], 1).with_gain(1.0),
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.layers().iter().map(Linear::num_scalars).sum()
    }
}

pub type DomainClassifierParams<T> = Network<DomainClassifierConfig, T>;

impl<T: Float> DomainClassifierParams<T> {
    pub fn init(config: DomainClassifierConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::default();
        for l in config.layers() {
            l.init(&mut params, rng);
        }
        Self { config, params }
    }
}

/// Probability, per batch element, that the latent encodes a visible-domain image.
///
/// Accepts any `[B, ...]` latent whose trailing dimensions flatten to `input_dim`.
pub fn domain_classifier_forward<'g, T: Float>(
    z: Var<'g, T>,
    p: &Bound<'_, 'g, DomainClassifierConfig, T>,
) -> Result<Var<'g, T>> {
    let cfg = p.config;
    let s = z.shape();
    let batch = s[0];
    let dim: usize = s[1..].iter().product();
    if dim != cfg.input_dim {
        return Err(Error::Shape(format!(
            "domain classifier expects {} features, got {dim} from {s:?}",
            cfg.input_dim
        )));
    }
    let eq = EqualizationConfig {
        eps: cfg.equalization_eps,
    };
    let [l0, l1, l2] = cfg.layers();
    let mut h = z.reshape(&[batch, dim]);
    for layer in [l0, l1] {
        h = layer.forward(p, h).leaky_relu(LEAKY_SLOPE);
        if cfg.equalization {
            h = equalize_features(h, &eq, &format!("classifier.{}", layer.name))?;
        }
    }
    Ok(l2.forward(p, h).reshape(&[batch]).sigmoid())
}
