use autograd::{Float, Tensor};

use super::config::{OptimizerConfig, OptimizerKind};
use crate::nets::ParamStore;

/// First-order optimizer with per-parameter state for one parameter group.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Float> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grads` (one entry per parameter, in store order).
    ///
    /// A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.t += 1;
        let lr = T::from_f64(lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                            *w = *w - lr * d;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::from_f64(self.config.beta1);
                let b2 = T::from_f64(self.config.beta2);
                let eps = T::from_f64(self.config.eps);
                let one = T::one();
                let c1 = one - T::from_f64(self.config.beta1.powi(self.t as i32));
                let c2 = one - T::from_f64(self.config.beta2.powi(self.t as i32));
                for (i, p) in params.tensors_mut().iter_mut().enumerate() {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    let g = grads[i].as_ref();
                    for (k, w) in p.data_mut().iter_mut().enumerate() {
                        let gk = g.map_or(T::zero(), |g| g.data()[k]);
                        m[k] = b1 * m[k] + (one - b1) * gk;
                        v[k] = b2 * v[k] + (one - b2) * gk * gk;
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        *w = *w - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}
