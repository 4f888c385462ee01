//! Scalar training objectives.
//!
//! Adversarial terms are written in descent form: the critics maximize the
//! real/fake score gap, so their loss is its negation, and one minimizing
//! optimizer serves every parameter group.

use autograd::{Float, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Embedder;

/// Loss weights and constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_adv: f64,
    pub lambda_contrastive: f64,
    pub lambda_tv: f64,
    pub lambda_gp: f64,
    pub lambda_local: f64,
    pub lambda_grl: f64,
    pub lambda_cls: f64,
    pub margin: f64,
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_id: 10.0,
            lambda_adv: 1.0,
            lambda_contrastive: 0.01,
            lambda_tv: 1e-4,
            lambda_gp: 10.0,
            lambda_local: 0.1,
            lambda_grl: 0.01,
            lambda_cls: 1.0,
            margin: 1.2,
            eps: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_id", self.lambda_id),
            ("lambda_adv", self.lambda_adv),
            ("lambda_contrastive", self.lambda_contrastive),
            ("lambda_tv", self.lambda_tv),
            ("lambda_gp", self.lambda_gp),
            ("lambda_local", self.lambda_local),
            ("lambda_grl", self.lambda_grl),
            ("lambda_cls", self.lambda_cls),
            ("eps", self.eps),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss.{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "loss.margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Per-step loss values, one JSON line in the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub pixel: f64,
    pub id: f64,
    pub adv_g: f64,
    pub adv_l: f64,
    pub tv: f64,
    pub cls: f64,
    pub contrastive: f64,
    pub gp: f64,
    pub total: f64,
}

impl LossRecord {
    /// First term holding NaN or infinity, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("pixel", self.pixel),
            ("id", self.id),
            ("adv_g", self.adv_g),
            ("adv_l", self.adv_l),
            ("tv", self.tv),
            ("cls", self.cls),
            ("contrastive", self.contrastive),
            ("gp", self.gp),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn same_shape<T: Float>(a: &Var<'_, T>, b: &Var<'_, T>, what: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Sum over scales of the mean absolute difference at each scale.
pub fn multiscale_pixel_loss<'g, T: Float>(pred: &[Var<'g, T>], target: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "pixel loss needs matching scale lists, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (p, t) in pred.iter().zip(target) {
        let scale = p.shape().last().copied().unwrap_or(0);
        same_shape(p, t, &format!("pixel loss at scale {scale}"))?;
        let term = p.sub(*t).abs().mean();
        total = Some(match total {
            Some(acc) => acc.add(term),
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

/// Batch mean of the L2 distance between embeddings of `pred` and `target`.
pub fn identity_loss<'g, T: Float>(
    pred: Var<'g, T>,
    target: Var<'g, T>,
    embedder: &dyn Embedder<T>,
) -> Result<Var<'g, T>> {
    same_shape(&pred, &target, "identity loss")?;
    let g = pred.graph();
    let (ep, et) = (embedder.embed(g, pred)?, embedder.embed(g, target)?);
    let batch = pred.shape()[0];
    for e in [&ep, &et] {
        if e.shape() != [batch, embedder.dim()] {
            return Err(Error::Shape(format!(
                "embedder returned {:?}, expected [{batch}, {}]",
                e.shape(),
                embedder.dim()
            )));
        }
    }
    Ok(row_norms(ep.sub(et)).mean())
}

/// L2 norm of each row of `[B, D]`, shape `[B]`; zero rows get a zero subgradient.
pub(crate) fn row_norms<'g, T: Float>(x: Var<'g, T>) -> Var<'g, T> {
    let b = x.shape()[0];
    x.square().sum_axis(1).reshape(&[b]).safe_sqrt()
}

/// Mean squared horizontal plus mean squared vertical neighbour difference.
pub fn total_variation_loss<'g, T: Float>(img: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = img.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        return Err(Error::Shape(format!(
            "total variation needs [B,C,H>=2,W>=2], got {s:?}"
        )));
    }
    let (h, w) = (s[2], s[3]);
    let dh = img.narrow(3, 1, w - 1).sub(img.narrow(3, 0, w - 1));
    let dv = img.narrow(2, 1, h - 1).sub(img.narrow(2, 0, h - 1));
    Ok(dh.square().mean().add(dv.square().mean()))
}

fn per_element_scores<'g, T: Float>(scores: Var<'g, T>, batch: usize) -> Result<Var<'g, T>> {
    if scores.shape() != [batch] {
        return Err(Error::Shape(format!(
            "critic must return one score per element, got {:?} for batch {batch}",
            scores.shape()
        )));
    }
    Ok(scores)
}

/// `E[(||grad D(y*)||_2 - 1)^2]` with `y* = u real + (1-u) fake`, `u ~ U(0,1)` per element.
///
/// The result is differentiable with respect to the critic's parameters.
pub fn gradient_penalty<'g, T, F>(
    graph: &'g Graph<T>,
    critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut impl Rng,
) -> Result<Var<'g, T>>
where
    T: Float,
    F: Fn(Var<'g, T>) -> Result<Var<'g, T>>,
{
    if real.shape() != fake.shape() || real.rank() == 0 {
        return Err(Error::Shape(format!(
            "gradient penalty: real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let batch = real.shape()[0];
    let per = real.numel() / batch.max(1);
    let mut mixed = fake.clone();
    for b in 0..batch {
        let u = T::from_f64(rng.random::<f64>());
        let range = b * per..(b + 1) * per;
        for (m, &r) in mixed.data_mut()[range.clone()].iter_mut().zip(&real.data()[range]) {
            *m = u * r + (T::one() - u) * *m;
        }
    }
    let y_star = graph.param(mixed);
    let scores = per_element_scores(critic(y_star)?, batch)?;
    let grad = graph.grad(scores.sum(), &[y_star], true)[0];
    let grad = match grad {
        Some(g) => g,
        None => graph.constant(Tensor::zeros(real.shape())),
    };
    if !grad.value().all_finite() {
        return Err(Error::NonFinite {
            layer: "critic input gradient".into(),
        });
    }
    let norms = row_norms(grad.reshape(&[batch, per]));
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Critic objective terms.
pub struct CriticLoss<'g, T> {
    pub total: Var<'g, T>,
    pub gradient_penalty: Var<'g, T>,
    /// `E[D(real)] - E[D(fake)]`
    pub gap: Var<'g, T>,
}

/// `-E[D(real)] + E[D(fake)] + lambda_gp * GP`.
///
/// `real` and `fake` are plain tensors, so the generator is detached by construction.
pub fn critic_loss<'g, T, F>(
    graph: &'g Graph<T>,
    critic: F,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda_gp: f64,
    rng: &mut impl Rng,
) -> Result<CriticLoss<'g, T>>
where
    T: Float,
    F: Fn(Var<'g, T>) -> Result<Var<'g, T>>,
{
    let batch = real.shape().first().copied().unwrap_or(0);
    let real_scores = per_element_scores(critic(graph.constant(real.clone()))?, batch)?;
    let fake_scores = per_element_scores(critic(graph.constant(fake.clone()))?, batch)?;
    let gp = gradient_penalty(graph, &critic, real, fake, rng)?;
    let gap = real_scores.mean().sub(fake_scores.mean());
    Ok(CriticLoss {
        total: gap.scale(-1.0).add(gp.scale(lambda_gp)),
        gradient_penalty: gp,
        gap,
    })
}

/// Generator-side adversarial terms.
pub struct AdversarialLoss<'g, T> {
    pub total: Var<'g, T>,
    /// `-E[D_g(y_hat)]`
    pub global: Var<'g, T>,
    /// `-E[D_l(M * y_hat)]`
    pub local: Var<'g, T>,
}

/// `-E[D_g(y_hat)] + lambda_l * (-E[D_l(M * y_hat)])`; `masked` is `M * y_hat`.
pub fn generator_adversarial_loss<'g, T, G, L>(
    global_critic: G,
    local_critic: L,
    pred: Var<'g, T>,
    masked: Var<'g, T>,
    lambda_local: f64,
) -> Result<AdversarialLoss<'g, T>>
where
    T: Float,
    G: Fn(Var<'g, T>) -> Result<Var<'g, T>>,
    L: Fn(Var<'g, T>) -> Result<Var<'g, T>>,
{
    same_shape(&pred, &masked, "adversarial loss")?;
    let batch = pred.shape()[0];
    let global = per_element_scores(global_critic(pred)?, batch)?.mean().scale(-1.0);
    let local = per_element_scores(local_critic(masked)?, batch)?.mean().scale(-1.0);
    Ok(AdversarialLoss {
        total: global.add(local.scale(lambda_local)),
        global,
        local,
    })
}

/// Smallest distance from 0 and 1 allowed inside the logarithms.
fn log_guard<T: Float>() -> f64 {
    1e-12f64.max(T::epsilon().as_f64())
}

/// Mean binary cross-entropy of domain probabilities `p` against labels `k`
/// (`1` = visible, `0` = thermal).
pub fn domain_classification_loss<'g, T: Float>(p: Var<'g, T>, k: &[f64]) -> Result<Var<'g, T>> {
    let b = k.len();
    if p.shape() != [b] {
        return Err(Error::Shape(format!("classifier output {:?} vs {b} labels", p.shape())));
    }
    if k.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("domain labels must be 0 or 1".into()));
    }
    if p.value().data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::InvalidArgument("domain probabilities must lie in [0, 1]".into()));
    }
    let guard = log_guard::<T>();
    let p = p.clamp(guard, 1.0 - guard);
    let labels = Tensor::from_f64(&[b], k);
    let one_minus = Tensor::from_f64(&[b], &k.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
    let pos = p.ln().mul_const(labels);
    let neg = p.scale(-1.0).add_scalar(1.0).ln().mul_const(one_minus);
    Ok(pos.add(neg).mean().scale(-1.0))
}

/// RMS distance per pair: `||z1 - z2||_2 / sqrt(dim)`, shape `[B]`.
pub fn rms_distance<'g, T: Float>(z1: Var<'g, T>, z2: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(&z1, &z2, "contrastive loss")?;
    let s = z1.shape();
    let b = s[0];
    let dim: usize = s[1..].iter().product();
    if dim == 0 {
        return Err(Error::Shape("contrastive loss on empty features".into()));
    }
    Ok(row_norms(z1.sub(z2).reshape(&[b, dim])).scale(1.0 / (dim as f64).sqrt()))
}

/// `l d + (1 - l) max(0, m - d)` averaged over the batch, `d` the RMS distance.
pub fn contrastive_loss<'g, T: Float>(z1: Var<'g, T>, z2: Var<'g, T>, same: &[f64], margin: f64) -> Result<Var<'g, T>> {
    let d = rms_distance(z1, z2)?;
    let b = d.shape()[0];
    if same.len() != b {
        return Err(Error::Shape(format!("{} pair labels for batch {b}", same.len())));
    }
    let l = Tensor::from_f64(&[b], same);
    let not_l = Tensor::from_f64(&[b], &same.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
    let pull = d.mul_const(l);
    let push = d.scale(-1.0).add_scalar(margin).relu().mul_const(not_l);
    Ok(pull.add(push).mean())
}

/// Component terms of the frontalization objective.
pub struct FrontalizationTerms<'g, T> {
    pub pixel: Var<'g, T>,
    pub id: Var<'g, T>,
    pub adv: Var<'g, T>,
    pub tv: Var<'g, T>,
}

/// `L_pixel + lambda_id L_id + lambda_adv L_adv + lambda_tv L_tv`.
pub fn frontalization_total<'g, T: Float>(t: &FrontalizationTerms<'g, T>, w: &LossWeights) -> Var<'g, T> {
    t.pixel
        .add(t.id.scale(w.lambda_id))
        .add(t.adv.scale(w.lambda_adv))
        .add(t.tv.scale(w.lambda_tv))
}

/// `L_front + lambda_c L_contrastive + lambda_cls L_cls`.
pub fn total_objective<'g, T: Float>(
    front: Var<'g, T>,
    contrastive: Var<'g, T>,
    cls: Var<'g, T>,
    w: &LossWeights,
) -> Var<'g, T> {
    front
        .add(contrastive.scale(w.lambda_contrastive))
        .add(cls.scale(w.lambda_cls))
}
