//! Simulation, filtering and statistical analysis of continuously monitored
//! superconducting qubits.
//!
//! The crate generates synthetic heterodyne weak-measurement records (with
//! and without resonator memory), reconstructs quantum trajectories with
//! Bayesian filters and a trainable recurrent filter, and extracts drift,
//! diffusion, measurement-axis tilt, measurement rate and efficiency from
//! trajectory statistics.

pub mod analysis;
pub mod bayes;
pub mod io;
pub mod linalg;
pub mod lstm;
pub mod model;
pub mod rng;
pub mod sim;

pub use model::{
    averaging_efficiency, derive_rates, tilt_angle, BlochState, DerivedRates, DriveSpec,
    PhysicalParams, RegimeKind, TomoAxis, Trajectory, VoltageRecord,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("Fock truncation insufficient: {0}")]
    Truncation(String),
    #[error("filter error: {0}")]
    Filter(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrajError>;
