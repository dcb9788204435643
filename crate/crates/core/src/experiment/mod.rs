//! Experiment driver: configuration files, sweeps, rate fits, plots and
//! oracle check suites.

pub mod check;
pub mod config;
pub mod fit;
pub mod plot;
pub mod sweep;

pub use check::{run_check, CheckReport, Suite};
pub use config::{ExperimentConfig, MetricKind, OutputPaths};
pub use fit::{fit_rate, Curve, CurveRow, RateFit};
pub use plot::render_svg;
pub use sweep::{run_experiment, Setup, SweepResult};
