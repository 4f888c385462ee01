//! Dual-path adversarial training: critic updates, the generator/classifier
//! update through the gradient-reversal layer, checkpoints and loss logs.

mod ablation;
mod checkpoint;
mod config;
mod optim;
mod run;
mod trainer;

pub use ablation::{ablation_ladder, run_ablation, write_ablation_csv, AblationRung, RungResult, LADDER};
pub use checkpoint::{checkpoint_path, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{AblationFlags, ModelConfig, OptimizerConfig, OptimizerKind, TrainConfig};
pub use optim::Optimizer;
pub use run::{read_loss_log, train, train_with_progress, TrainOutcome, CHECKPOINT_DIR, LOG_NAME};
pub use trainer::{downsample_area, init_trainer, ParameterCounts, Phase, TrainerState};
