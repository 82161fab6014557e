//! Non-collocated vibration absorption with a delayed resonator.
//!
//! A harmonic force acts on one stage of a mass-spring-damper chain. An
//! active absorber attached to a different stage applies delayed position
//! feedback `u(t) = g x_a(t - tau)` so that a third stage stays at rest.

pub mod error;
pub mod fixtures;
mod linalg;
pub mod model;
pub mod optimizer;
pub mod phasor;
pub mod ddae;
pub mod design;
pub mod simulation;
pub mod spectrum;
pub mod tuning;

pub use error::{Error, Result};
