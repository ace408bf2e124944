//! Simulation of an optomechanical quantum Otto engine.
//!
//! Units: ħ = ω_m = 1 unless a function says otherwise. Two-mode states are
//! ordered optical ⊗ mechanical.

pub mod error;
pub mod fock;
pub mod linalg;
pub mod model;
pub mod dynamics;
pub mod normal_modes;
pub mod otto;
pub mod squeezed_bath;

pub use error::{Error, Result};
