//! Experiment orchestration: synthetic data, training strategies, grid
//! evaluation and reports.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod report;
pub mod shapes;
pub mod train;

use thiserror::Error;

use crate::degrade::DegradeError;
use crate::denoise::DenoiseError;
use crate::image::ImageError;
use crate::kv::KvError;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::NnError;

pub use config::{ExperimentConfig, Strategy, TrainConfig, Variant};
pub use dataset::{gen_synthetic_dataset, images_to_tensor, Dataset, GenConfig, Sample, Split};
pub use eval::{evaluate, evaluate_many, Cell, EvalReport};
pub use shapes::RenderParams;
pub use report::{write_report, ReportFiles};
pub use train::{run_training, train_baseline, train_from_body, TrainLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged in {phase} epoch {epoch}: loss is {loss}")]
    Divergence { phase: &'static str, epoch: usize, loss: f32 },
    #[error("reports do not share one distortion grid: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
