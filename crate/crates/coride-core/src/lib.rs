//! Hexagonal-grid ride-hailing market simulator plus a hierarchical
//! multi-agent reinforcement-learning stack that jointly handles order
//! dispatching and fleet management by ranking real and fake (repositioning)
//! orders, trained with a deterministic-policy-gradient scheme.

pub mod agents;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hexgrid;
pub mod nn;
pub mod ranking;
pub mod sim;
pub mod training;

pub use error::CoreError;
