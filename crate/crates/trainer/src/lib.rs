//! Training, evaluation and sweeps for adversarial supervised contrastive learning.

pub mod config;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod run;
pub mod stats;
pub mod sweep;

pub use config::{DataSource, OptimizerConfig, RunConfig, KEYS};
pub use error::{Result, TrainError};
pub use metrics::{read_metrics, write_metrics, MetricsRow, MetricsWriter, COLUMNS, SCHEMA_LINE};
pub use optim::Optimizer;
pub use run::{evaluate, train, train_on, train_step, RunOutput, RunSummary, StepStats};
pub use stats::{synthetic_selection_stats, SyntheticStats};
pub use sweep::{seed_mean, sweep, sweep_on, write_sweep_summary, CellMetrics, GridCell, SweepOutcome};
