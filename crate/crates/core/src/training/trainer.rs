use autograd::{Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::Optimizer;
use crate::data::{sample_dual_path_batch, Dataset, PairBatch};
use crate::error::{Error, Result};
use crate::eval::ConvEmbedder;
use crate::losses::{
    contrastive_loss, critic_loss, domain_classification_loss, frontalization_total, identity_loss,
    multiscale_pixel_loss, total_objective, total_variation_loss, FrontalizationTerms, LossRecord,
};
use crate::masks::apply_mask_var;
use crate::nets::{
    critic_forward, decoder_forward, domain_classifier_forward, encoder_forward, gradient_reversal, CriticParams,
    DomainClassifierParams, GeneratorParams, LatentFeatures, Synthesis,
};

/// RNG streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const PENALTY_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Parameter counts per network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParameterCounts {
    pub generator: usize,
    pub global_critic: usize,
    pub local_critic: usize,
    pub classifier: usize,
}

impl ParameterCounts {
    pub fn total(&self) -> usize {
        self.generator + self.global_critic + self.local_critic + self.classifier
    }
}

/// Point inside [`TrainerState::train_step_observed`] at which the observer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// After both critics were updated, before the generator update.
    Critic,
    /// After the generator and classifier update.
    Generator,
}

/// All mutable training state. The generator is a single store read by both paths.
#[derive(Clone, Debug)]
pub struct TrainerState<T = f32> {
    pub config: TrainConfig,
    pub generator: GeneratorParams<T>,
    pub global_critic: CriticParams<T>,
    pub local_critic: CriticParams<T>,
    pub classifier: DomainClassifierParams<T>,
    pub embedder: ConvEmbedder<T>,
    pub step: u64,
    opt_generator: Optimizer<T>,
    opt_global: Optimizer<T>,
    opt_local: Optimizer<T>,
    opt_classifier: Optimizer<T>,
    batch_rng: ChaCha8Rng,
    penalty_rng: ChaCha8Rng,
}

/// Initializes every network and optimizer from `config.seed`.
pub fn init_trainer<T: Float>(config: TrainConfig) -> Result<TrainerState<T>> {
    config.validate()?;
    let mut rng = stream(config.seed, INIT_STREAM);
    let generator = GeneratorParams::init(config.generator_config(), &mut rng)?;
    let global_critic = CriticParams::init(config.critic_config(), &mut rng)?;
    let local_critic = CriticParams::init(config.critic_config(), &mut rng)?;
    let classifier = DomainClassifierParams::init(config.classifier_config(), &mut rng);
    let embedder = ConvEmbedder::standard(config.model.image_size)?;
    let opt = &config.optimizer;
    Ok(TrainerState {
        opt_generator: Optimizer::new(opt.clone(), &generator.params),
        opt_global: Optimizer::new(opt.clone(), &global_critic.params),
        opt_local: Optimizer::new(opt.clone(), &local_critic.params),
        opt_classifier: Optimizer::new(opt.clone(), &classifier.params),
        batch_rng: stream(config.seed, BATCH_STREAM),
        penalty_rng: stream(config.seed, PENALTY_STREAM),
        generator,
        global_critic,
        local_critic,
        classifier,
        embedder,
        step: 0,
        config,
    })
}

/// Area-average downsampling of `[B, C, H, W]` by an integer factor.
pub fn downsample_area<T: Float>(t: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = t.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / factor, w / factor);
    let norm = T::from_f64(1.0 / (factor * factor) as f64);
    let d = t.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &d[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for r in 0..oh * factor {
            for col in 0..ow * factor {
                let o = &mut dst[(r / factor) * ow + col / factor];
                *o = *o + src[r * w + col] * norm;
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

struct Path<'g, T> {
    latent: LatentFeatures<'g, T>,
    synthesis: Synthesis<'g, T>,
}

fn scalar<'g, T: Float>(g: &'g Graph<T>, v: f64) -> Var<'g, T> {
    g.constant(Tensor::scalar(T::from_f64(v)))
}

fn grads_of<'g, T: Float>(g: &'g Graph<T>, loss: Var<'g, T>, wrt: &[Var<'g, T>]) -> Vec<Option<Tensor<T>>> {
    g.grad(loss, wrt, false)
        .into_iter()
        .map(|v| v.map(|v| (*v.value()).clone()))
        .collect()
}

/// One critic descent step; returns (critic loss, gradient penalty).
fn critic_update<T: Float>(
    critic: &mut CriticParams<T>,
    opt: &mut Optimizer<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda_gp: f64,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let g = Graph::new();
    let p = critic.bind(&g, true);
    let loss = critic_loss(&g, |v| critic_forward(v, &p), real, fake, lambda_gp, rng)?;
    let (total, gp) = (
        loss.total.value().item().as_f64(),
        loss.gradient_penalty.value().item().as_f64(),
    );
    if !total.is_finite() || !gp.is_finite() {
        return Ok((total, gp));
    }
    let grads = grads_of(&g, loss.total, p.vars());
    drop(p);
    opt.step(&mut critic.params, &grads, lr);
    Ok((total, gp))
}

impl<T: Float> TrainerState<T> {
    pub fn parameter_counts(&self) -> ParameterCounts {
        ParameterCounts {
            generator: self.generator.params.num_scalars(),
            global_critic: self.global_critic.params.num_scalars(),
            local_critic: self.local_critic.params.num_scalars(),
            classifier: self.classifier.params.num_scalars(),
        }
    }

    /// Learning rate for the next step.
    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate * self.config.lr_decay.powf(self.step as f64)
    }

    /// Draws the next batch from the run's sampling stream.
    pub fn sample_batch(&mut self, ds: &Dataset) -> Result<PairBatch> {
        sample_dual_path_batch(
            ds,
            self.config.pairs_per_batch(),
            self.config.same_id_fraction,
            &mut self.batch_rng,
        )
    }

    /// Runs `x1` and `x2` through the shared generator as two separate paths.
    pub fn dual_path_forward(&self, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let g = Graph::new();
        let p = self.generator.bind(&g, false);
        let mut out = Vec::with_capacity(2);
        for x in [x1, x2] {
            let z = encoder_forward(g.constant(x.clone()), &p)?;
            out.push((*decoder_forward(&z, &p)?.image().value()).clone());
        }
        let b = out.pop().expect("two paths");
        Ok((out.pop().expect("two paths"), b))
    }

    pub fn train_step(&mut self, batch: &PairBatch) -> Result<LossRecord> {
        self.train_step_observed(batch, &mut |_, _| {})
    }

    /// [`train_step`](Self::train_step) with a callback after each phase.
    pub fn train_step_observed(
        &mut self,
        batch: &PairBatch,
        observe: &mut dyn FnMut(Phase, &Self),
    ) -> Result<LossRecord> {
        let step = self.step + 1;
        let w = self.config.loss.clone();
        let flags = self.config.ablation.clone();
        let lr = self.learning_rate();
        let x = [batch.x1.cast::<T>(), batch.x2.cast::<T>()];
        let y = [batch.y1.cast::<T>(), batch.y2.cast::<T>()];
        let gates = [batch.m1.cast::<T>(), batch.m2.cast::<T>()];
        let adversarial = w.lambda_adv > 0.0;
        let local = adversarial && flags.local_critic;
        let non_finite = |term: &str| Error::NonFiniteLoss {
            term: term.to_string(),
            step,
        };

        let graph = Graph::new();
        let generator = self.generator.clone();
        let gen = generator.bind(&graph, true);
        let mut paths = Vec::with_capacity(2);
        for xi in &x {
            let latent = encoder_forward(graph.constant(xi.clone()), &gen)?;
            let synthesis = decoder_forward(&latent, &gen)?;
            paths.push(Path { latent, synthesis });
        }

        // Critic phase: the generator output enters as plain tensors.
        let mut penalty = 0.0;
        if adversarial {
            let fake = Tensor::cat0(&[
                (*paths[0].synthesis.image().value()).clone(),
                (*paths[1].synthesis.image().value()).clone(),
            ]);
            let real = Tensor::cat0(&[y[0].clone(), y[1].clone()]);
            let gate = Tensor::cat0(&[gates[0].clone(), gates[1].clone()]);
            let masked = |t: &Tensor<T>| t.zip_map(&gate, |a, m| a * m);
            let (masked_real, masked_fake) = (masked(&real), masked(&fake));
            for _ in 0..self.config.critic_steps {
                let (loss, gp_g) = critic_update(
                    &mut self.global_critic,
                    &mut self.opt_global,
                    &real,
                    &fake,
                    w.lambda_gp,
                    lr,
                    &mut self.penalty_rng,
                )?;
                if !loss.is_finite() || !gp_g.is_finite() {
                    return Err(non_finite(if gp_g.is_finite() { "critic_global" } else { "gp" }));
                }
                penalty = gp_g;
                if local {
                    let (loss, gp_l) = critic_update(
                        &mut self.local_critic,
                        &mut self.opt_local,
                        &masked_real,
                        &masked_fake,
                        w.lambda_gp,
                        lr,
                        &mut self.penalty_rng,
                    )?;
                    if !loss.is_finite() || !gp_l.is_finite() {
                        return Err(non_finite(if gp_l.is_finite() { "critic_local" } else { "gp" }));
                    }
                    penalty = (gp_g + gp_l) / 2.0;
                }
            }
        }
        observe(Phase::Critic, self);

        // Generator phase.
        let dg = self.global_critic.bind(&graph, false);
        let dl = self.local_critic.bind(&graph, false);
        let cls = self.classifier.bind(&graph, true);
        let zero = || scalar(&graph, 0.0);
        let size = self.config.model.image_size;
        let scales = self.generator.config.output_scales();
        let mut fronts = Vec::with_capacity(2);
        let mut rec = LossRecord {
            step,
            gp: penalty,
            ..Default::default()
        };
        for (i, path) in paths.iter().enumerate() {
            let img = path.synthesis.image();
            let target = graph.constant(y[i].clone());
            let pixel = if !flags.pixel {
                zero()
            } else if flags.multiscale_pixel {
                let targets: Vec<Var<'_, T>> = scales
                    .iter()
                    .map(|&s| graph.constant(downsample_area(&y[i], size / s)))
                    .collect();
                multiscale_pixel_loss(&path.synthesis.scales, &targets)?
            } else {
                multiscale_pixel_loss(&[img], &[target])?
            };
            let id = if flags.identity_loss && w.lambda_id > 0.0 {
                identity_loss(img, target, &self.embedder)?
            } else {
                zero()
            };
            let (adv_g, adv_l) = if adversarial {
                let g = critic_forward(img, &dg)?.mean().scale(-1.0);
                let l = if local {
                    critic_forward(apply_mask_var(&gates[i], img)?, &dl)?.mean().scale(-1.0)
                } else {
                    zero()
                };
                (g, l)
            } else {
                (zero(), zero())
            };
            let adv = adv_g.add(adv_l.scale(if local { w.lambda_local } else { 0.0 }));
            let tv = if w.lambda_tv > 0.0 {
                total_variation_loss(img)?
            } else {
                zero()
            };
            let terms = FrontalizationTerms { pixel, id, adv, tv };
            fronts.push(frontalization_total(&terms, &w));
            let val = |v: Var<'_, T>| v.value().item().as_f64() / 2.0;
            rec.pixel += val(terms.pixel);
            rec.id += val(terms.id);
            rec.adv_g += val(adv_g);
            rec.adv_l += val(adv_l);
            rec.tv += val(terms.tv);
        }
        let front = fronts[0].add(fronts[1]).scale(0.5);

        let contrastive = if flags.contrastive_loss {
            contrastive_loss(
                paths[0].latent.bottleneck,
                paths[1].latent.bottleneck,
                &batch.same,
                w.margin,
            )?
        } else {
            zero()
        };

        let l_cls = if flags.cls_loss {
            let mut latents = vec![paths[0].latent.bottleneck, paths[1].latent.bottleneck];
            let mut labels = vec![0.0; 2 * batch.len()];
            for yi in &y {
                latents.push(encoder_forward(graph.constant(yi.clone()), &gen)?.bottleneck);
            }
            labels.extend(std::iter::repeat_n(1.0, 2 * batch.len()));
            let z = Var::concat(&latents, 0);
            let p = domain_classifier_forward(gradient_reversal(z, w.lambda_grl), &cls)?;
            Some(domain_classification_loss(p, &labels)?)
        } else {
            None
        };
        let total = total_objective(front, contrastive, l_cls.unwrap_or_else(zero), &w);

        rec.contrastive = contrastive.value().item().as_f64();
        rec.cls = l_cls.map_or(0.0, |l| l.value().item().as_f64());
        rec.total = total.value().item().as_f64();
        if let Some(term) = rec.non_finite_term() {
            return Err(non_finite(term));
        }

        let g_grads = grads_of(&graph, total, gen.vars());
        let c_grads = l_cls.map(|l| grads_of(&graph, l, cls.vars()));
        drop((gen, dg, dl, cls));
        self.opt_generator.step(&mut self.generator.params, &g_grads, lr);
        if let Some(c_grads) = c_grads {
            self.opt_classifier.step(&mut self.classifier.params, &c_grads, lr);
        }
        self.step = step;
        observe(Phase::Generator, self);
        Ok(rec)
    }
}
