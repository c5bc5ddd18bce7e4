//! Optimization loop and its supporting machinery.

mod config;
pub mod optim;
mod run;
pub mod welford;

pub use config::{CurriculumConfig, TrainConfig, TrainMode};
pub use optim::{adam_update, AdamConfig, AdamState, EmaState};
pub use run::{train, MetricsRow, TrainReport};
pub use welford::Welford;
