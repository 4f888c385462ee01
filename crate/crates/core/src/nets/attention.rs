use autograd::{Float, Tensor, Var};
use rand::Rng;

use super::layers::Conv;
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};

pub(crate) const GAMMA: &str = "attn.gamma";

/// Query/key/value projections for a `channels`-wide feature map.
pub(crate) fn projections(channels: usize) -> [Conv; 3] {
    let inner = (channels / 8).max(1);
    [
        Conv::new("attn.query", channels, inner, 1, 1).with_gain(1.0),
        Conv::new("attn.key", channels, inner, 1, 1).with_gain(1.0),
        Conv::new("attn.value", channels, channels, 1, 1).with_gain(1.0),
    ]
}

pub(crate) fn init<T: Float>(channels: usize, store: &mut ParamStore<T>, rng: &mut impl Rng) {
    for p in projections(channels) {
        p.init(store, rng);
    }
    store.insert(GAMMA, Tensor::zeros(&[1]));
}

pub(crate) fn num_scalars(channels: usize) -> usize {
    projections(channels).iter().map(Conv::num_scalars).sum::<usize>() + 1
}

pub struct AttentionOutput<'g, T> {
    pub output: Var<'g, T>,
    /// Row-stochastic map `[B, N, N]`, `N = H * W`; row `i` weights the positions attended from `i`.
    pub attention: Var<'g, T>,
}

/// `out = x + gamma * (V A^T)` with `A = softmax(Q^T K)` over spatial positions.
pub fn self_attention<'g, C, T: Float>(x: Var<'g, T>, p: &Bound<'_, 'g, C, T>) -> Result<AttentionOutput<'g, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("self-attention expects [B,C,H,W], got {s:?}")));
    }
    let (b, c, n) = (s[0], s[1], s[2] * s[3]);
    let [q, k, v] = projections(c);
    let inner = q.cout;
    let q = q.forward(p, x).reshape(&[b, inner, n]);
    let k = k.forward(p, x).reshape(&[b, inner, n]);
    let v = v.forward(p, x).reshape(&[b, c, n]);
    let attention = q.matmul_t(k, true, false).softmax();
    let mixed = v.matmul_t(attention, false, true).reshape(&s);
    let gamma = p
        .get(GAMMA)
        .reshape(&[1, 1])
        .expand_axis(0, b)
        .expand_axis(1, c * n)
        .reshape(&s);
    Ok(AttentionOutput {
        output: x.add(mixed.mul(gamma)),
        attention,
    })
}
