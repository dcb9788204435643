//! Continuous-time policy evaluation by temporal-difference learning with
//! vanishing time steps.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`] and [`torus`]: deterministic random streams, noise laws and
//!   arithmetic on the periodic state space.
//! - [`model`]: the diffusion and reward description, its generator and the
//!   one-dimensional closed-form benchmark.
//! - [`features`]: linear value parametrisations with analytic spatial
//!   derivatives.
//! - [`observe`]: observation quadruples from a simulator or from
//!   sub-discretised "real-world" trajectories, and stationary sampling.
//! - [`td`]: standard and stochastic temporal differences and their
//!   multi-step / mini-batch aggregates.
//! - [`learn`]: TD(0), regularised TD(0), Polyak averaging and the
//!   residual-gradient family.
//! - [`oracle`]: Monte-Carlo estimates of the limits the learners converge to.
//! - [`experiment`]: configuration, multi-seed sweeps, rate fitting, plots and
//!   diagnostic check suites.

pub mod error;
pub mod experiment;
pub mod features;
pub mod learn;
pub mod model;
pub mod observe;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod td;
pub mod torus;

pub use error::{Error, Result};
pub use features::{FeatureFamily, FeatureMap, Theta, TrigFeatures};
pub use model::{BenchmarkModel, ModelSpec};
pub use observe::{Observation, ObservationMode, Schedule, StationarySampler};
pub use rng::RngStream;
pub use td::TdValue;
pub use torus::TorusPoint;
