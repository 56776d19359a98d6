//! Extremum seeking control for fully actuated mechanical systems on Lie
//! groups without dissipation.
//!
//! The crate covers the plant models (Euler–Poincaré dynamics, a planar
//! double integrator and a rigid body in an ideal fluid), the output-feedback
//! extremum seeking law with its phase-lead compensator and high-pass filter,
//! the averaged system and its energy function, and a fixed-step geometric
//! integrator used to compare the two.

pub mod analysis;
pub mod averaging;
pub mod cli;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod objective;
pub mod output;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod signals;

pub use error::{EscError, Result};
