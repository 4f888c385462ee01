use autograd::{Float, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature vector equalization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualizationConfig {
    pub eps: f64,
}

impl Default for EqualizationConfig {
    fn default() -> Self {
        Self { eps: 1e-8 }
    }
}

/// Rejects tensors holding NaN or infinity, naming the producer.
pub fn ensure_finite<T: Float>(v: &Var<'_, T>, layer: &str) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

/// Normalizes the channel vector at every spatial location to unit RMS:
/// `b = a / sqrt(mean_c(a^2) + eps)`.
///
/// Works on any `[B, C, ...]` tensor, so it also serves fully connected
/// features `[B, F]`. `layer` names the producer of `a` for error reports.
pub fn equalize_features<'g, T: Float>(a: Var<'g, T>, cfg: &EqualizationConfig, layer: &str) -> Result<Var<'g, T>> {
    ensure_finite(&a, layer)?;
    let shape = a.shape();
    if shape.len() < 2 || shape[1] == 0 {
        return Err(Error::Shape(format!(
            "{layer}: equalization needs a channel axis, got {shape:?}"
        )));
    }
    let inv_rms = a.square().mean_axis(1).add_scalar(cfg.eps).powf(-0.5);
    Ok(a.mul_bcast(inv_rms, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::{Graph, Tensor};

    #[test]
    fn zero_input_stays_zero() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        let b = equalize_features(a, &EqualizationConfig::default(), "test").unwrap();
        assert!(b.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_four_pixel() {
        // channel vector (3, 4): mean square 12.5
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[1, 2, 1, 1], &[3.0, 4.0]));
        let b = equalize_features(a, &EqualizationConfig::default(), "test").unwrap();
        let d = (12.5f64 + 1e-8).sqrt();
        let out = b.value();
        assert!((out.data()[0] - 3.0 / d).abs() < 1e-12);
        assert!((out.data()[1] - 4.0 / d).abs() < 1e-12);
        assert!((out.data()[0] - 0.848528).abs() < 1e-6);
        assert!((out.data()[1] - 1.131371).abs() < 1e-6);
    }

    #[test]
    fn nan_is_rejected_with_layer_name() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[1, 2, 1, 1], &[f64::NAN, 1.0]));
        let err = equalize_features(a, &EqualizationConfig::default(), "encoder.stage2").unwrap_err();
        assert!(err.to_string().contains("encoder.stage2"));
    }
}
