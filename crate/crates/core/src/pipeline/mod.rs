//! Dataset files, configuration, run orchestration, and evaluation.

pub mod config;
pub mod dataset;
pub mod run;
pub mod trajectory;

pub use config::{Config, InitMode, SimConfig};
pub use dataset::{load_dataset, simulate_dataset, write_dataset, Dataset, DatasetMeta};
pub use run::{run, sweep_eta, write_outputs, RunMetrics, RunOutput, ScanRecord, SweepRow, ETA_MULTIPLIERS};
pub use trajectory::{evaluate_ate, load_trajectory, write_trajectory, AteResult, Pose, Trajectory};
