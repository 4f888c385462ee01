use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::{CriticConfig, DomainClassifierConfig, EqualizationConfig, GeneratorConfig};

/// Components that can be switched off for ablation runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub pixel: bool,
    /// Supervise the 32 and 64 pixel side outputs as well as the full image.
    pub multiscale_pixel: bool,
    pub identity_loss: bool,
    pub self_attention: bool,
    pub local_critic: bool,
    pub equalization: bool,
    pub cls_loss: bool,
    pub contrastive_loss: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            pixel: true,
            multiscale_pixel: true,
            identity_loss: true,
            self_attention: true,
            local_critic: true,
            equalization: true,
            cls_loss: true,
            contrastive_loss: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Architecture sizes; the ablation flags decide attention and equalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub encoder_channels: Vec<usize>,
    pub critic_channels: Vec<usize>,
    pub classifier_hidden: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            image_size: g.image_size,
            encoder_channels: g.encoder_channels,
            critic_channels: CriticConfig::default().channels,
            classifier_hidden: [128, 64],
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    /// Images per path-pair batch; each step draws `batch_size / 2` pairs.
    pub batch_size: usize,
    pub critic_steps: usize,
    pub learning_rate: f64,
    /// Per-step multiplicative learning-rate decay; 1 keeps it constant.
    pub lr_decay: f64,
    pub same_id_fraction: f64,
    /// Checkpoint interval in steps; 0 writes only the initial and final checkpoints.
    pub checkpoint_every: u64,
    pub loss: LossWeights,
    pub ablation: AblationFlags,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 500,
            batch_size: 8,
            critic_steps: 1,
            learning_rate: 0.01,
            lr_decay: 1.0,
            same_id_fraction: 0.5,
            checkpoint_every: 100,
            loss: LossWeights::default(),
            ablation: AblationFlags::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            ));
        }
        if self.critic_steps < 1 {
            return bad("critic_steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.same_id_fraction) {
            return bad(format!(
                "same_id_fraction must lie in [0, 1], got {}",
                self.same_id_fraction
            ));
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad("optimizer betas must lie in [0, 1) and eps must be positive".into());
        }
        self.loss.validate()?;
        self.generator_config().validate()?;
        self.critic_config().validate()?;
        Ok(())
    }

    pub fn pairs_per_batch(&self) -> usize {
        self.batch_size / 2
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            image_size: self.model.image_size,
            in_channels: 3,
            encoder_channels: self.model.encoder_channels.clone(),
            self_attention: self.ablation.self_attention,
            equalization: self.ablation.equalization,
            equalization_eps: self.loss.eps,
        }
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            image_size: self.model.image_size,
            in_channels: 3,
            channels: self.model.critic_channels.clone(),
        }
    }

    pub fn classifier_config(&self) -> DomainClassifierConfig {
        DomainClassifierConfig {
            input_dim: self.generator_config().latent_dim(),
            hidden: self.model.classifier_hidden,
            equalization: self.ablation.equalization,
            equalization_eps: self.loss.eps,
        }
    }

    pub fn equalization(&self) -> EqualizationConfig {
        EqualizationConfig { eps: self.loss.eps }
    }

    /// Parses a TOML config; absent keys keep their defaults, unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value`; the key must already exist.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        if slot.is_table() {
            return Err(Error::Config(format!("`{key}` is a section, not a value")));
        }
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        let updated: TrainConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        *self = updated;
        Ok(())
    }
}
