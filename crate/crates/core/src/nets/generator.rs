use autograd::{Float, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{self, self_attention};
use super::equalize::{ensure_finite, equalize_features, EqualizationConfig};
use super::layers::{Conv, UpConv, LEAKY_SLOPE};
use super::params::{Bound, Network, ParamStore};
use crate::error::{Error, Result};

/// Encoder-decoder layout. The decoder mirrors the encoder with U-Net skips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Output channels of each stride-2 encoder stage.
    pub encoder_channels: Vec<usize>,
    pub self_attention: bool,
    pub equalization: bool,
    pub equalization_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            in_channels: 3,
            encoder_channels: vec![32, 64, 128, 256, 512],
            self_attention: true,
            equalization: true,
            equalization_eps: EqualizationConfig::default().eps,
        }
    }
}

pub type GeneratorParams<T> = Network<GeneratorConfig, T>;

impl GeneratorConfig {
    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.depth()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_channels.last().expect("empty encoder")
    }

    /// Flattened bottleneck length `C * H * W`.
    pub fn latent_dim(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_size() * self.bottleneck_size()
    }

    /// Output resolutions of the three synthesis heads, smallest first.
    pub fn output_scales(&self) -> [usize; 3] {
        [self.image_size / 4, self.image_size / 2, self.image_size]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d < 3 {
            return Err(Error::Config("generator needs at least 3 encoder stages".into()));
        }
        if !self.image_size.is_multiple_of(1 << d) || self.image_size >> d == 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^{d}",
                self.image_size
            )));
        }
        if self.encoder_channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("zero channel count".into()));
        }
        if self.equalization_eps <= 0.0 {
            return Err(Error::Config("equalization eps must be positive".into()));
        }
        Ok(())
    }

    fn equalization(&self) -> EqualizationConfig {
        EqualizationConfig {
            eps: self.equalization_eps,
        }
    }

    pub(crate) fn encoder_layers(&self) -> Vec<Conv> {
        let mut cin = self.in_channels;
        self.encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let layer = Conv::new(format!("enc{i}"), cin, cout, 3, 2);
                cin = cout;
                layer
            })
            .collect()
    }

    /// Output channels of decoder stage `j`, before the skip concatenation.
    fn decoder_out_channels(&self) -> Vec<usize> {
        let enc = &self.encoder_channels;
        let d = enc.len();
        (0..d)
            .map(|j| if j + 1 < d { enc[d - 2 - j] } else { enc[0] })
            .collect()
    }

    /// Encoder stage whose output is concatenated after decoder stage `j`.
    fn skip_for(&self, j: usize) -> Option<usize> {
        let d = self.depth();
        (j + 1 < d).then(|| d - 2 - j)
    }

    pub(crate) fn decoder_layers(&self) -> Vec<UpConv> {
        let mut cin = self.bottleneck_channels();
        self.decoder_out_channels()
            .into_iter()
            .enumerate()
            .map(|(j, cout)| {
                let layer = UpConv::new(format!("dec{j}"), cin, cout);
                cin = cout + self.skip_for(j).map_or(0, |s| self.encoder_channels[s]);
                layer
            })
            .collect()
    }

    /// Channels of decoder stage `j` after its skip concatenation.
    fn decoder_stage_channels(&self, j: usize) -> usize {
        self.decoder_out_channels()[j] + self.skip_for(j).map_or(0, |s| self.encoder_channels[s])
    }

    /// 1x1 projection heads for the two reduced-resolution outputs.
    pub(crate) fn side_heads(&self) -> [(usize, Conv); 2] {
        let d = self.depth();
        let out = self.in_channels;
        [d - 3, d - 2].map(|j| {
            (
                j,
                Conv::new(format!("side{j}"), self.decoder_stage_channels(j), out, 1, 1).with_gain(1.0),
            )
        })
    }

    pub(crate) fn output_conv(&self) -> Conv {
        let d = self.depth();
        Conv::new("out", self.decoder_stage_channels(d - 1), self.in_channels, 3, 1).with_gain(1.0)
    }

    /// Closed-form parameter count.
    pub fn num_scalars(&self) -> usize {
        self.encoder_layers().iter().map(Conv::num_scalars).sum::<usize>()
            + self.decoder_layers().iter().map(UpConv::num_scalars).sum::<usize>()
            + self.side_heads().iter().map(|(_, c)| c.num_scalars()).sum::<usize>()
            + self.output_conv().num_scalars()
            + attention::num_scalars(self.bottleneck_channels())
    }
}

impl<T: Float> GeneratorParams<T> {
    /// Unit-normal weights (scaled at runtime), zero biases, attention `gamma = 0`.
    pub fn init(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        for l in config.encoder_layers() {
            l.init(&mut params, rng);
        }
        attention::init(config.bottleneck_channels(), &mut params, rng);
        for l in config.decoder_layers() {
            l.init(&mut params, rng);
        }
        for (_, h) in config.side_heads() {
            h.init(&mut params, rng);
        }
        config.output_conv().init(&mut params, rng);
        Ok(Self { config, params })
    }

    pub fn attention_gamma(&self) -> T {
        self.params.get(attention::GAMMA).expect("gamma").item()
    }
}

/// Encoder output: the bottleneck plus every stage's activation.
#[derive(Clone)]
pub struct LatentFeatures<'g, T> {
    pub bottleneck: Var<'g, T>,
    /// One entry per encoder stage; the last one is the bottleneck itself.
    pub skips: Vec<Var<'g, T>>,
}

/// Decoder outputs at the three supervised scales, each in `[0, 1]`.
#[derive(Clone)]
pub struct Synthesis<'g, T> {
    /// Ordered as [`GeneratorConfig::output_scales`].
    pub scales: [Var<'g, T>; 3],
}

impl<'g, T> Synthesis<'g, T> {
    /// The full-resolution frontal image.
    pub fn image(&self) -> Var<'g, T>
    where
        T: Copy,
    {
        self.scales[2]
    }
}

fn activate<'g, T: Float>(h: Var<'g, T>, cfg: &GeneratorConfig, layer: &str) -> Result<Var<'g, T>> {
    let h = h.leaky_relu(LEAKY_SLOPE);
    if cfg.equalization {
        equalize_features(h, &cfg.equalization(), layer)
    } else {
        ensure_finite(&h, layer)?;
        Ok(h)
    }
}

/// Runs the encoder on `x: [B, C, S, S]` with values in `[0, 1]`.
pub fn encoder_forward<'g, T: Float>(
    x: Var<'g, T>,
    p: &Bound<'_, 'g, GeneratorConfig, T>,
) -> Result<LatentFeatures<'g, T>> {
    let cfg = p.config;
    let s = x.shape();
    if s.len() != 4 || s[1] != cfg.in_channels {
        return Err(Error::Shape(format!(
            "encoder input must be [B, {}, H, W], got {s:?}",
            cfg.in_channels
        )));
    }
    if s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(Error::Resolution {
            what: "encoder input".into(),
            expected: cfg.image_size,
            got_h: s[2],
            got_w: s[3],
        });
    }
    ensure_finite(&x, "encoder input")?;
    let mut h = x;
    let mut skips = Vec::with_capacity(cfg.depth());
    for layer in cfg.encoder_layers() {
        h = activate(layer.forward(p, h), cfg, &format!("encoder.{}", layer.name))?;
        skips.push(h);
    }
    Ok(LatentFeatures { bottleneck: h, skips })
}

/// Decodes `z` into frontal images at the three output scales.
pub fn decoder_forward<'g, T: Float>(
    z: &LatentFeatures<'g, T>,
    p: &Bound<'_, 'g, GeneratorConfig, T>,
) -> Result<Synthesis<'g, T>> {
    let cfg = p.config;
    let d = cfg.depth();
    let batch = z.bottleneck.shape()[0];
    if z.skips.len() != d {
        return Err(Error::Shape(format!(
            "decoder expects {d} skip tensors, got {}",
            z.skips.len()
        )));
    }
    for (i, skip) in z.skips.iter().enumerate() {
        let size = cfg.image_size >> (i + 1);
        let expected = vec![batch, cfg.encoder_channels[i], size, size];
        let got = skip.shape();
        if got != expected {
            return Err(Error::SkipMismatch {
                stage: i,
                expected,
                got,
            });
        }
    }
    if z.bottleneck.shape() != z.skips[d - 1].shape() {
        return Err(Error::Shape("bottleneck does not match the last encoder stage".into()));
    }

    let mut h = z.bottleneck;
    if cfg.self_attention {
        h = self_attention(h, p)?.output;
    }
    let heads = cfg.side_heads();
    let mut side = Vec::with_capacity(2);
    for (j, layer) in cfg.decoder_layers().into_iter().enumerate() {
        h = activate(layer.forward(p, h), cfg, &format!("decoder.{}", layer.name))?;
        if let Some(s) = cfg.skip_for(j) {
            h = Var::concat(&[h, z.skips[s]], 1);
        }
        if let Some((_, head)) = heads.iter().find(|(stage, _)| *stage == j) {
            side.push(head.forward(p, h).sigmoid());
        }
    }
    let full = cfg.output_conv().forward(p, h).sigmoid();
    ensure_finite(&full, "decoder output")?;
    Ok(Synthesis {
        scales: [side[0], side[1], full],
    })
}
