//! Experiment plumbing: configuration, datasets, training, evaluation,
//! ablation, checkpoints, gradient-check suite and CSV reports.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod gradcheck;
pub mod model;
pub mod report;
pub mod train;

pub use ablate::{ablate, run_single_source, Ablation, TableRow, TABLE_VARIANTS};
pub use checkpoint::Checkpoint;
pub use config::{DataConfig, DataSource, EvalConfig, ExperimentConfig, ModelConfig, TrainConfig};
pub use dataset::{Dataset, Sample};
pub use evaluate::{evaluate, mean_psnr, EvalRow};
pub use gradcheck::{gradcheck_all, GradCheckReport};
pub use model::{Forward, Model, ModelDims};
pub use train::{smoothed_losses, train, LogRow, TrainRun};
