use autograd::{Conv2dSpec, Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Maps images `[B, C, S, S]` to feature rows `[B, D]`, differentiably.
pub trait Embedder<T: Float> {
    fn dim(&self) -> usize;
    fn embed<'g>(&self, graph: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>>;
}

/// Mean over all pixels and channels: a one-dimensional embedding.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanPixelEmbedder;

impl<T: Float> Embedder<T> for MeanPixelEmbedder {
    fn dim(&self) -> usize {
        1
    }

    fn embed<'g>(&self, _graph: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(Error::Shape(format!("embedder input must be batched, got {s:?}")));
        }
        let per: usize = s[1..].iter().product();
        Ok(x.reshape(&[s[0], per]).mean_axis(1).reshape(&[s[0], 1]))
    }
}

/// Per-channel means: `[B, C, H, W] -> [B, C]`.
#[derive(Clone, Copy, Debug)]
pub struct ChannelMeanEmbedder {
    pub channels: usize,
}

impl<T: Float> Embedder<T> for ChannelMeanEmbedder {
    fn dim(&self) -> usize {
        self.channels
    }

    fn embed<'g>(&self, _graph: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!(
                "channel-mean embedder expects [B, {}, H, W], got {s:?}",
                self.channels
            )));
        }
        Ok(x.reshape(&[s[0], s[1], s[2] * s[3]])
            .mean_axis(2)
            .reshape(&[s[0], s[1]]))
    }
}

/// Seed used for the frozen measurement embedder.
pub const EMBEDDER_SEED: u64 = 0x005e_ed0f_face;

/// Frozen random convolutional feature extractor.
///
/// Four stride-2 3x3 convolutions with leaky rectifiers, followed by average
/// pooling to an (at most) 4x4 grid, so the embedding keeps coarse spatial layout.
/// Outputs are divided by `sqrt(dim)`, making Euclidean distances RMS-sized.
#[derive(Clone, Debug)]
pub struct ConvEmbedder<T> {
    image_size: usize,
    channels: Vec<usize>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

const EMBED_CHANNELS: [usize; 5] = [3, 16, 32, 64, 64];
const POOLED: usize = 4;

fn pooled_side(image_size: usize) -> usize {
    (image_size >> 4).clamp(1, POOLED)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl<T: Float> ConvEmbedder<T> {
    pub fn new(image_size: usize, seed: u64) -> Result<Self> {
        let reduced = image_size >> 4;
        if !image_size.is_multiple_of(16) || reduced == 0 || !reduced.is_multiple_of(pooled_side(image_size)) {
            return Err(Error::InvalidArgument(format!(
                "embedder needs an image size that is a multiple of 16 and reduces evenly to a {POOLED}x{POOLED} grid, got {image_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in EMBED_CHANNELS.windows(2) {
            let (cin, cout) = (w[0], w[1]);
            let fan_in = (cin * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let data: Vec<f64> = (0..cout * cin * 9).map(|_| std * normal(&mut rng)).collect();
            weights.push(Tensor::from_f64(&[cout, cin, 3, 3], &data));
            let b: Vec<f64> = (0..cout).map(|_| 0.1 * normal(&mut rng)).collect();
            biases.push(Tensor::from_f64(&[cout], &b));
        }
        Ok(Self {
            image_size,
            channels: EMBED_CHANNELS.to_vec(),
            weights,
            biases,
        })
    }

    /// The standard instrument for `image_size` inputs.
    pub fn standard(image_size: usize) -> Result<Self> {
        Self::new(image_size, EMBEDDER_SEED)
    }

    pub fn cast<U: Float>(&self) -> ConvEmbedder<U> {
        ConvEmbedder {
            image_size: self.image_size,
            channels: self.channels.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
            biases: self.biases.iter().map(Tensor::cast).collect(),
        }
    }
}

impl<T: Float> Embedder<T> for ConvEmbedder<T> {
    fn dim(&self) -> usize {
        let p = pooled_side(self.image_size);
        self.channels[self.channels.len() - 1] * p * p
    }

    fn embed<'g>(&self, graph: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels[0] || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Shape(format!(
                "embedder expects [B, {}, {}, {}], got {s:?}",
                self.channels[0], self.image_size, self.image_size
            )));
        }
        let spec = Conv2dSpec::new(2, 1);
        let mut h = x;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let w = graph.constant(w.clone());
            let b = graph.constant(b.clone());
            h = h.conv2d(w, spec).add_channel_bias(b).leaky_relu(0.2);
        }
        let (batch, c, side) = (s[0], *self.channels.last().expect("channels"), self.image_size >> 4);
        let p = pooled_side(self.image_size);
        let k = side / p;
        // Split each spatial axis into (p, k) and average over the k parts.
        let pooled = h
            .reshape(&[batch * c * p, k, p, k])
            .mean_axis(3)
            .mean_axis(1)
            .reshape(&[batch, c * p * p]);
        Ok(pooled.scale(1.0 / ((c * p * p) as f64).sqrt()))
    }
}
