use std::collections::BTreeSet;

use autograd::{Float, Graph, Tensor};

use super::embedder::Embedder;
use super::metrics::{roc_metrics, ScoreEntry, ScoreSet, VerificationReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{decoder_forward, encoder_forward, GeneratorParams};

/// Images per forward pass during scoring.
const CHUNK: usize = 8;

/// An image with its identity label; `image` is `[C, S, S]`.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub identity: String,
    pub image: Tensor<f32>,
}

/// Maps probe images `[B, C, S, S]` to frontal visible estimates of the same shape.
pub trait Frontalizer {
    fn frontalize(&self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl Frontalizer for Passthrough {
    fn frontalize(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(images.clone())
    }
}

impl Frontalizer for GeneratorParams<f32> {
    fn frontalize(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let g = Graph::new();
        let p = self.bind(&g, false);
        let z = encoder_forward(g.constant(images.clone()), &p)?;
        let out = decoder_forward(&z, &p)?.image().value();
        Ok((*out).clone())
    }
}

fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Unit-norm embeddings of a batch `[B, C, S, S]`, one row per image.
pub fn extract_embeddings<T: Float>(images: &Tensor<T>, embedder: &dyn Embedder<T>) -> Result<Vec<Vec<f64>>> {
    if images.rank() != 4 {
        return Err(Error::Shape(format!("expected [B, C, H, W], got {:?}", images.shape())));
    }
    let g = Graph::new();
    let e = embedder.embed(&g, g.constant(images.clone()))?.value();
    let (b, d) = (images.shape()[0], embedder.dim());
    if e.shape() != [b, d] {
        return Err(Error::Shape(format!(
            "embedder returned {:?}, expected [{b}, {d}]",
            e.shape()
        )));
    }
    let flat = e.to_f64_vec();
    Ok(flat.chunks(d).map(l2_normalize).collect())
}

/// Unit-norm embedding of one image `[C, S, S]`.
pub fn extract_embedding<T: Float>(image: &Tensor<T>, embedder: &dyn Embedder<T>) -> Result<Vec<f64>> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(&shape);
    Ok(extract_embeddings(&batch, embedder)?.remove(0))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn embed_all(
    images: &[LabeledImage],
    frontalizer: Option<&dyn Frontalizer>,
    embedder: &dyn Embedder<f32>,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let items: Vec<Tensor<f32>> = chunk.iter().map(|l| l.image.clone()).collect();
        let mut batch = Tensor::stack(&items);
        if let Some(f) = frontalizer {
            batch = f.frontalize(&batch)?;
        }
        out.extend(extract_embeddings(&batch, embedder)?);
    }
    Ok(out)
}

/// Cosine similarity of every gallery-probe pair.
///
/// With a frontalizer, probes are synthesized to frontal visible images before
/// embedding; without one, raw probes are embedded.
pub fn score_protocol(
    gallery: &[LabeledImage],
    probes: &[LabeledImage],
    frontalizer: Option<&dyn Frontalizer>,
    embedder: &dyn Embedder<f32>,
) -> Result<ScoreSet> {
    let known: BTreeSet<&str> = gallery.iter().map(|g| g.identity.as_str()).collect();
    if let Some(p) = probes.iter().find(|p| !known.contains(p.identity.as_str())) {
        return Err(Error::UnknownProbeIdentity(p.identity.clone()));
    }
    let gallery_emb = embed_all(gallery, None, embedder)?;
    let probe_emb = embed_all(probes, frontalizer, embedder)?;

    let mut set = ScoreSet::default();
    for (pi, (p, pe)) in probes.iter().zip(&probe_emb).enumerate() {
        for (g, ge) in gallery.iter().zip(&gallery_emb) {
            let score = cosine_similarity(ge, pe);
            let genuine = g.identity == p.identity;
            if genuine {
                set.genuine.push(score);
            } else {
                set.imposter.push(score);
            }
            set.entries.push(ScoreEntry {
                gallery: g.identity.clone(),
                probe: p.identity.clone(),
                probe_index: pi,
                score,
                genuine,
            });
        }
    }
    Ok(set)
}

/// Gallery (visible frontal per identity) and probes (thermal profiles) of a split.
pub fn protocol_images(ds: &Dataset) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for e in ds.identities() {
        gallery.push(LabeledImage {
            identity: e.name.clone(),
            image: ds.image(e.frontal).clone(),
        });
        for &p in &e.probes {
            probes.push(LabeledImage {
                identity: e.name.clone(),
                image: ds.image(p).clone(),
            });
        }
    }
    (gallery, probes)
}

/// Scores a split's protocol, frontalizing probes when a generator is given.
pub fn score_split(
    ds: &Dataset,
    frontalizer: Option<&dyn Frontalizer>,
    embedder: &dyn Embedder<f32>,
) -> Result<ScoreSet> {
    let (gallery, probes) = protocol_images(ds);
    score_protocol(&gallery, &probes, frontalizer, embedder)
}

/// [`score_split`] followed by [`roc_metrics`].
pub fn evaluate_split(
    ds: &Dataset,
    generator: Option<&GeneratorParams<f32>>,
    embedder: &dyn Embedder<f32>,
) -> Result<VerificationReport> {
    let f = generator.map(|g| g as &dyn Frontalizer);
    roc_metrics(&score_split(ds, f, embedder)?)
}
