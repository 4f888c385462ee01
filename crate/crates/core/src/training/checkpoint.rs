//! Versioned binary checkpoints: magic, format version, a JSON header
//! describing the architectures, then little-endian `f32` parameter data.

use std::io::Write;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::TrainerState;
use crate::error::{Error, Result};
use crate::nets::{
    CriticConfig, CriticParams, DomainClassifierConfig, DomainClassifierParams, GeneratorConfig, GeneratorParams,
    Network, ParamStore, StoreLayout,
};

const MAGIC: &[u8; 8] = b"TFRONTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    config: TrainConfig,
    generator: GeneratorConfig,
    critic: CriticConfig,
    classifier: DomainClassifierConfig,
    /// Generator, global critic, local critic, classifier.
    stores: Vec<StoreLayout>,
}

/// Networks restored from a checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub config: TrainConfig,
    pub generator: GeneratorParams<f32>,
    pub global_critic: CriticParams<f32>,
    pub local_critic: CriticParams<f32>,
    pub classifier: DomainClassifierParams<f32>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `state` to `path` atomically (temporary file, then rename).
pub fn save_checkpoint(path: &Path, state: &TrainerState<f32>) -> Result<()> {
    let stores = [
        &state.generator.params,
        &state.global_critic.params,
        &state.local_critic.params,
        &state.classifier.params,
    ];
    let header = Header {
        version: CHECKPOINT_VERSION,
        step: state.step,
        config: state.config.clone(),
        generator: state.generator.config.clone(),
        critic: state.global_critic.config.clone(),
        classifier: state.classifier.config.clone(),
        stores: stores.iter().map(|s| s.layout()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 4 * stores.iter().map(|s| s.num_scalars()).sum::<usize>() + 20);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for s in stores {
        for t in s.tensors() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_store(path: &Path, layout: &StoreLayout, data: &mut &[u8]) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::default();
    for (name, shape) in layout.names.iter().zip(&layout.shapes) {
        let n: usize = shape.iter().product();
        if data.len() < 4 * n {
            return Err(corrupt(path, format!("truncated while reading `{name}`")));
        }
        let (head, rest) = data.split_at(4 * n);
        let values = head
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(name.clone(), Tensor::new(shape, values));
        *data = rest;
    }
    Ok(store)
}

fn check_layout<C>(path: &Path, what: &str, net: &Network<C, f32>, expected: &StoreLayout) -> Result<()> {
    let got = net.params.layout();
    if got.names != expected.names || got.shapes != expected.shapes {
        return Err(corrupt(
            path,
            format!("{what} parameters do not match its architecture"),
        ));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| corrupt(path, e.to_string()))?;
    if header.stores.len() != 4 {
        return Err(corrupt(path, "expected four parameter stores"));
    }
    let mut data = &body[len..];
    let mut stores = Vec::with_capacity(4);
    for layout in &header.stores {
        stores.push(read_store(path, layout, &mut data)?);
    }
    if !data.is_empty() {
        return Err(corrupt(path, format!("{} trailing bytes", data.len())));
    }
    let mut it = stores.into_iter();
    let mut next = || it.next().expect("four stores");
    let generator = Network {
        config: header.generator,
        params: next(),
    };
    let global_critic = Network {
        config: header.critic.clone(),
        params: next(),
    };
    let local_critic = Network {
        config: header.critic,
        params: next(),
    };
    let classifier = Network {
        config: header.classifier,
        params: next(),
    };
    // A fresh initialization of each architecture has the layout its forward pass expects.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fresh = GeneratorParams::<f32>::init(generator.config.clone(), &mut rng)?;
    check_layout(path, "generator", &generator, &fresh.params.layout())?;
    let fresh = CriticParams::<f32>::init(global_critic.config.clone(), &mut rng)?;
    check_layout(path, "global critic", &global_critic, &fresh.params.layout())?;
    check_layout(path, "local critic", &local_critic, &fresh.params.layout())?;
    let fresh = DomainClassifierParams::<f32>::init(classifier.config.clone(), &mut rng);
    check_layout(path, "classifier", &classifier, &fresh.params.layout())?;
    Ok(Checkpoint {
        step: header.step,
        config: header.config,
        generator,
        global_critic,
        local_critic,
        classifier,
    })
}

/// Path of the checkpoint written after `step` steps inside `dir`.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}
