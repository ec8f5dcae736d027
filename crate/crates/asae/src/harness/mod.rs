//! Experiment orchestration: configuration, metrics, checkpoints, plots,
//! invariant suites, and the training/evaluation entry points.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod oracle;
pub mod plot;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, parse_config, Algorithm, EnvConfig, ExperimentConfig, TrainConfig};
pub use metrics::{MetricsFile, MetricsRow, MetricsWriter};
pub use oracle::{run_suite, OracleReport, PropertyResult};
pub use plot::emit_plot;
pub use run::{build_env, run_eval, run_training, SeedTrainer, TrainArtifacts};
