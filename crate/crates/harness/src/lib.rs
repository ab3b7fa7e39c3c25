//! Experiment harness: config files, seed derivation, datasets, sweep
//! execution, and the `depthlab` command-line front end.
//!
//! The harness owns reproducibility. Every run is described by a
//! [`SweepConfig`]; every random draw descends from one master seed through
//! the published mixing in [`seeds`]; every output directory carries a
//! [`RunManifest`] that echoes the config, the derived seeds, and the
//! artifact version. Re-running a manifest's config with the same binary
//! version reproduces the run bit for bit, independent of thread count.

mod config;
mod data;
mod idx;
pub mod seeds;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{
    DatasetSpec, ExperimentKind, NetSettings, OptimizerSettings, Overrides, SweepConfig, Task,
};
pub use data::{load_dataset, synth_dataset, Dataset};
pub use idx::{load_idx, read_idx_file, scalar_projection, IdxFile, IdxPair};
pub use sweep::{
    run_sweep, write_sweep_csv, RunManifest, SweepOutcome, SweepRow, SWEEP_CSV_HEADER,
    SWEEP_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Malformed or inconsistent configuration.
    #[error("config: {0}")]
    Config(String),
    /// Structural damage in an idx-format file, located by byte offset.
    #[error("idx file {path}: {msg} (byte offset {offset})")]
    Idx { path: PathBuf, offset: u64, msg: String },
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Sim(#[from] resnet_sim::SimError),
    #[error(transparent)]
    Limit(#[from] tp_linear_limit::LimitError),
    #[error(transparent)]
    Nonlinear(#[from] tp_nonlinear_limit::NonlinearError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
