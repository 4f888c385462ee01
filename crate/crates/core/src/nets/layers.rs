//! Layer descriptors with runtime weight scaling.
//!
//! Weights are stored as unit normal draws and multiplied by a He constant on
//! every forward pass, so an adaptive optimizer sees the same relative step
//! size in every layer regardless of fan-in.

use autograd::{Conv2dSpec, Float, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Bound, ParamStore};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
pub(crate) const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

fn normal_tensor<T: Float>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data)
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
    pub gain: f64,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            spec: Conv2dSpec::new(stride, kernel / 2),
            gain: RELU_GAIN,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel, self.kernel]
    }

    pub fn num_scalars(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.cout
    }

    fn scale(&self) -> f64 {
        self.gain / ((self.cin * self.kernel * self.kernel) as f64).sqrt()
    }

    pub fn init<T: Float>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.insert(self.weight_name(), normal_tensor(&self.weight_shape(), rng));
        store.insert(self.bias_name(), Tensor::zeros(&[self.cout]));
    }

    pub fn forward<'g, C, T: Float>(&self, p: &Bound<'_, 'g, C, T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = p.get(&self.weight_name()).scale(self.scale());
        x.conv2d(w, self.spec).add_channel_bias(p.get(&self.bias_name()))
    }
}

/// Stride-2 transposed convolution that doubles the spatial size.
#[derive(Clone, Debug)]
pub(crate) struct UpConv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
}

impl UpConv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel: 3,
            spec: Conv2dSpec::new(2, 1),
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Laid out as the adjoint forward conv: `[cin, cout, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cin, self.cout, self.kernel, self.kernel]
    }

    pub fn num_scalars(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.cout
    }

    fn scale(&self) -> f64 {
        // each output pixel sees roughly (k/stride)^2 input taps per channel
        let taps = (self.kernel * self.kernel) as f64 / (self.spec.stride * self.spec.stride) as f64;
        RELU_GAIN / (self.cin as f64 * taps).sqrt()
    }

    pub fn init<T: Float>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.insert(self.weight_name(), normal_tensor(&self.weight_shape(), rng));
        store.insert(self.bias_name(), Tensor::zeros(&[self.cout]));
    }

    pub fn forward<'g, C, T: Float>(&self, p: &Bound<'_, 'g, C, T>, x: Var<'g, T>) -> Var<'g, T> {
        let s = x.shape();
        let out_hw = (s[2] * 2, s[3] * 2);
        let w = p.get(&self.weight_name()).scale(self.scale());
        x.conv2d_input_grad(w, self.spec, out_hw)
            .add_channel_bias(p.get(&self.bias_name()))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub gain: f64,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            gain: RELU_GAIN,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn num_scalars(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn init<T: Float>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.insert(self.weight_name(), normal_tensor(&[self.fan_in, self.fan_out], rng));
        store.insert(self.bias_name(), Tensor::zeros(&[self.fan_out]));
    }

    /// `x: [B, fan_in] -> [B, fan_out]`
    pub fn forward<'g, C, T: Float>(&self, p: &Bound<'_, 'g, C, T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = p
            .get(&self.weight_name())
            .scale(self.gain / (self.fan_in as f64).sqrt());
        x.matmul(w).add_channel_bias(p.get(&self.bias_name()))
    }
}
