//! Experiment configuration, Monte Carlo execution, metrics, timing and
//! file output.

pub mod benchmark;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod monte_carlo;
pub mod output;

pub use benchmark::{benchmark, BenchmarkTable};
pub use config::{Algorithm, Experiment, ExperimentConfig, Grid};
pub use monte_carlo::{monte_carlo, McReport, MetricsRecord};
