//! Experiment harness for `prseg-core`: synthetic data, SGD training,
//! mIoU evaluation, ablation sweeps and receptive-field probes.

pub mod ablate;
pub mod config;
pub mod data;
pub mod erf;
pub mod metrics;
pub mod optim;
pub mod train;

pub use ablate::{run_ablation, AblationRow, Axis};
pub use config::ExperimentConfig;
pub use data::{generate_dataset, Dataset, ShapeFamily, SyntheticTask};
pub use erf::{erf_probe, HeatMap};
pub use metrics::{compute_miou, MiouReport};
pub use optim::{sgd_step, SgdConfig, TrainState};
pub use train::{run_eval, run_train, Experiment, MetricsRecord, Summary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("center ({row}, {col}) lies outside the {height}x{width} output")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("metric: {0}")]
    Metric(String),
    #[error(transparent)]
    Core(#[from] prseg_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
