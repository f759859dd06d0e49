//! Blind channel estimation for an amplify-and-forward two-way relay
//! network with M-PSK sources.
//!
//! The relay broadcasts an amplified superposition of both users' symbols,
//! its own channel-shaped noise, and receiver noise.  Under channel
//! reciprocity the self-interference coefficient is `a = h^2` and the
//! cross coefficient is `b = g h`.  This crate provides:
//!
//! * the simulation model ([`model`]),
//! * two estimators of `a` that need no pilots for the magnitude part —
//!   one maximum-likelihood, one minimizing the sample variance of the
//!   residual envelopes ([`estimators`]),
//! * the line-search solver and grid fallback they share ([`optimize`]),
//! * the deterministic large-sample limits of both objectives, used to
//!   explain the estimators' bias and convergence behavior ([`analysis`]),
//! * Cramer-Rao and modified Cramer-Rao lower bounds ([`bounds`]),
//! * reproducible Monte Carlo experiments ([`experiments`]).

pub mod analysis;
pub mod bounds;
mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod optimize;
pub mod specialfn;

pub use analysis::{AsymptoticContext, ProbeRow};
pub use bounds::{BoundReport, FimBlocks};
pub use error::{Error, ErrorClass, Result};
pub use estimators::{EstimateReport, Method, ResidualView};
pub use experiments::{
    ExperimentResult, ExperimentSidecar, ExperimentSpec, IterationRow, ResultRow, Sweep,
};
pub use model::{BatchEnvelope, ChannelState, ObservationBatch, Stream, SystemConfig};
pub use num_complex::Complex64;
pub use optimize::{GridSpec, Initializer, SolverConfig, SolverStats};
