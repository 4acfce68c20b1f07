//! Command-line harness around the `shakegen` library: experiment
//! configuration, batch sampling, XYZ output, metrics and validation.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod xyz;

pub use commands::{
    cmd_gradcheck, cmd_ring_demo, cmd_sample, cmd_validate, gradcheck, run_batch, Fault,
    GlobalOptions, RingDemo,
};
pub use config::{Experiment, ExperimentConfig};
pub use error::{exit, HarnessError};
