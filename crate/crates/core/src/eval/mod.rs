//! Metrics, baseline forecasters and grid experiments.

pub mod baselines;
pub mod grid;
pub mod metrics;
pub mod report;

pub use baselines::{Climatology, Forecaster, LinearBaseline, Persistence};
pub use grid::{cell_windows, run_grid, GridSpec};
pub use report::{EvalReport, ReportRow};
