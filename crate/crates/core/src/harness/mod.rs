//! Reproducibility harness: configured sweeps over sample sizes or horizons,
//! exact-oracle error measurement, CSV output and rate fitting.

mod config;
mod slope;
mod sweep;

pub use config::{Algorithm, ExperimentConfig};
pub use slope::{fit_loglog_slope, median, Aggregate};
pub use sweep::{derive_seed, read_records_csv, sweep, write_records_csv, RunRecord, CSV_HEADER};
