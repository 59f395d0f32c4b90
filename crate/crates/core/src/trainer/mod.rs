//! Alternating generator/discriminator optimization for the source-only,
//! plain adversarial and category-level adversarial methods.

mod config;
mod record;
mod run;
mod step;
pub mod sweep;

pub use config::{from_value, is_toml, parse_value, Effective, Method, TrainConfig};
pub use record::{DStat, EvalSnapshot, Event, IterationRecord, RunRecord};
pub use run::{evaluate, train, train_from_dir, train_with, Evaluation, TrainOutput};
pub use step::{train_iteration, SourceBatch, StepOutput, TargetBatch, TrainState};
pub use sweep::{paper_grid, run_sweep, run_sweep_with, write_sweep_csv, SweepAxis, SweepPoint, SweepRow};
