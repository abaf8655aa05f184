//! Scenario files, bundled presets, accuracy metrics and the Monte Carlo
//! runner.

pub mod config;
pub mod metrics;
pub mod presets;
pub mod runner;

pub use config::{Scenario, ScenarioConfig, SweepAxis, SweepPoint};
pub use metrics::{crb_summary, resolution_percentage, rmse};
pub use runner::{run_monte_carlo, to_csv, RunOptions, RunRecord, CSV_HEADER};
