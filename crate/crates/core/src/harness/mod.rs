//! Training, checkpointing, evaluation and the ablation runner.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod optim;
pub mod train;

pub use ablation::{render_table, run_ablation, write_ablation_csv, AblationResult, AblationRow};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_checkpoint, export_attention, predict};
pub use optim::{lr_at_epoch, Adam};
pub use train::{train, train_model, write_train_log, LogRow, TrainOutcome};
