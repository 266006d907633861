//! Simulation of federated SGD over an analog (over-the-air) uplink, with
//! gradient-norm importance sampling, adaptive on-device sensing, and
//! latency/energy budget accounting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod batch;
pub mod budget;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod fedloop;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod sensing;
pub mod theory;

pub use config::{ExperimentConfig, Scheme, SensingMode};
pub use error::{Error, Result};
pub use exec::Exec;
pub use fedloop::{run_experiment, ExperimentOutput, RunOutput, Simulation};
pub use metrics::MetricsRecord;
