//! Latent jump ODE models for marked temporal point processes.
//!
//! The library trains a latent-state hybrid system (continuous flow plus
//! event-triggered jumps) by maximum likelihood, computing exact gradients
//! with a backward adjoint pass that lifts the adjoint variables across
//! each jump. Classical point-process generators and MLE baselines are
//! included for corpus generation and validation.

pub mod adjoint;
pub mod classical;
pub mod config;
pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar for file formats, the trainer, and the CLI.
pub type Scalar = f64;

pub type ParamVector = nn::ParamVector<Scalar>;
pub type SolverConfig = ode::SolverConfig<Scalar>;
pub type Model = dynamics::Model<Scalar>;
pub type EventSequence = classical::EventSequence<Scalar>;
pub type LatentState = dynamics::LatentState<Scalar>;
