//! Travelling-pulse wave speeds for a neural field model with synaptic
//! depression.
//!
//! The crate walks the whole chain from the model definition to speeds:
//! equilibrium landscape analysis, linearization and unstable directions,
//! event-detecting adaptive integration, trajectory classification with
//! speed bisection (front speed, fast pulse, slow pulse), the frozen-
//! depression singular skeleton, and direct simulation of the original
//! integro-differential field equation for cross-validation.

pub mod error;
pub mod model;
pub mod spectral;
pub mod integrate;
pub mod shoot;

pub use error::{Error, Result};
pub use model::{FiringRate, Landscape, ModelParams, State3, State4};
