use autograd::{Float, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, Linear, LEAKY_SLOPE};
use super::params::{Bound, Network, ParamStore};
use crate::error::{Error, Result};

/// Strided conv stack with a linear score head and no normalization layers.
///
/// The global and local critics are two independent instances of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            in_channels: 3,
            channels: vec![16, 32, 64, 128, 256],
        }
    }
}

impl CriticConfig {
    pub(crate) fn convs(&self) -> Vec<Conv> {
        let mut cin = self.in_channels;
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let l = Conv::new(format!("critic.conv{i}"), cin, c, 3, 2);
                cin = c;
                l
            })
            .collect()
    }

    fn final_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub(crate) fn head(&self) -> Linear {
        let s = self.final_size();
        Linear::new(
            "critic.head",
            self.channels.last().copied().unwrap_or(self.in_channels) * s * s,
            1,
        )
        .with_gain(1.0)
    }

    pub fn num_scalars(&self) -> usize {
        self.convs().iter().map(Conv::num_scalars).sum::<usize>() + self.head().num_scalars()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.final_size() == 0
            || !self.image_size.is_multiple_of(1 << self.channels.len())
        {
            return Err(Error::Config(format!(
                "critic with {} stages cannot reduce {}px evenly",
                self.channels.len(),
                self.image_size
            )));
        }
        Ok(())
    }
}

pub type CriticParams<T> = Network<CriticConfig, T>;

impl<T: Float> CriticParams<T> {
    pub fn init(config: CriticConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        for l in config.convs() {
            l.init(&mut params, rng);
        }
        config.head().init(&mut params, rng);
        Ok(Self { config, params })
    }
}

/// Unbounded realness score per batch element, `[B, C, S, S] -> [B]`.
pub fn critic_forward<'g, T: Float>(img: Var<'g, T>, p: &Bound<'_, 'g, CriticConfig, T>) -> Result<Var<'g, T>> {
    let cfg = p.config;
    let s = img.shape();
    if s.len() != 4 || s[1] != cfg.in_channels {
        return Err(Error::Shape(format!(
            "critic input must be [B, {}, H, W], got {s:?}",
            cfg.in_channels
        )));
    }
    if s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(Error::Resolution {
            what: "critic input".into(),
            expected: cfg.image_size,
            got_h: s[2],
            got_w: s[3],
        });
    }
    let mut h = img;
    for layer in cfg.convs() {
        h = layer.forward(p, h).leaky_relu(LEAKY_SLOPE);
    }
    let batch = s[0];
    let flat = h.reshape(&[batch, cfg.head().fan_in]);
    Ok(cfg.head().forward(p, flat).reshape(&[batch]))
}
