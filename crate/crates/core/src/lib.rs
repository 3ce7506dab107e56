//! Deterministic single-process simulator for distributed GAN training.
//!
//! Three protocols share one generator/discriminator stack and one scheduler:
//! a standalone baseline, FL-GAN (periodic averaging of full GANs) and
//! MD-GAN (one server generator, one discriminator per worker, discriminator
//! swapping). The simulated network counts every payload byte so that the
//! ledger can be checked exactly against the analytic cost model in [`cost`].

pub mod adam;
pub mod cluster;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod idx;
pub mod metrics;
pub mod nn;
pub mod protocols;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use cluster::{run_global_iterations, CrashSchedule, LinkClass, Network, NodeId, Protocol, RunOutcome, TrafficLedger};
pub use config::ExperimentConfig;
pub use cost::{analytic_costs, CostModelInput, CostReport, ProtocolKind};
pub use data::{make_ring, shard_iid, Dataset, GaussianRingSpec};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_protocol, RunArtifacts};
pub use gan::{Discriminator, GanArchitecture, Generator};
pub use metrics::{MetricsRow, Scorer};
pub use nn::{Activation, Mlp};
pub use tensor::Tensor;
