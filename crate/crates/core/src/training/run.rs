use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{checkpoint_path, save_checkpoint};
use super::config::TrainConfig;
use super::trainer::{init_trainer, TrainerState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossRecord;

pub const LOG_NAME: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Result of a finished run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// The last checkpoint written.
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<LossRecord>,
    pub state: TrainerState<f32>,
}

/// Trains for `config.steps` steps, writing checkpoints and a JSON-lines loss log under `out_dir`.
pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, out_dir, &mut |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    progress: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    let mut state = init_trainer::<f32>(config.clone())?;
    if dataset.num_identities() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 identities, got {}",
            dataset.num_identities()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    let log = out_dir.join(LOG_NAME);
    let file = File::create(&log).map_err(|e| Error::io(&log, e))?;
    let mut writer = BufWriter::new(file);

    let mut checkpoint = checkpoint_path(&ckpt_dir, 0);
    save_checkpoint(&checkpoint, &state)?;
    let mut records = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        let batch = state.sample_batch(dataset)?;
        let rec = state.train_step(&batch)?;
        serde_json::to_writer(&mut writer, &rec)?;
        writer
            .write_all(b"\n")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(&log, e))?;
        progress(&rec);
        records.push(rec);
        let every = config.checkpoint_every;
        if state.step == config.steps || (every > 0 && state.step % every == 0) {
            checkpoint = checkpoint_path(&ckpt_dir, state.step);
            save_checkpoint(&checkpoint, &state)?;
        }
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        records,
        state,
    })
}

/// Reads a JSON-lines loss log.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
