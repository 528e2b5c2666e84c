//! Qubit dephasing from thermal and coherent resonator photons under CPMG
//! dynamical decoupling: closed-form rates, a stochastic trajectory
//! simulator, a truncated-Fock master-equation solver and a fitting engine.

pub mod analytic;
pub mod cli;
pub mod decay;
pub mod error;
pub mod fitting;
pub mod io;
pub mod lindblad;
pub mod model;
pub mod quad;
pub mod trajectory;
pub mod units;

pub use error::{Error, Result};
