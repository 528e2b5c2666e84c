//! Unit conventions and elementary conversions.
//!
//! Every rate inside the crate is an angular rate in rad/s and every time is
//! in seconds. Conversions to MHz (cyclic), μs⁻¹ and ns happen only at I/O
//! boundaries through the helpers below.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;

/// Cyclic frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz * 1e6
}

pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

/// Rate in μs⁻¹ to s⁻¹.
pub fn per_us_to_per_s(rate: f64) -> f64 {
    rate * 1e6
}

pub fn per_s_to_per_us(rate: f64) -> f64 {
    rate * 1e-6
}

pub fn ns_to_s(t: f64) -> f64 {
    t * 1e-9
}

pub fn s_to_ns(t: f64) -> f64 {
    t * 1e9
}

/// CPMG sequence frequency f_s = 1/(2Δt), in Hz.
pub fn sequence_frequency(dt: f64) -> f64 {
    0.5 / dt
}

/// Interpulse period Δt for a CPMG sequence frequency f_s in Hz.
pub fn interpulse_period(f_s: f64) -> f64 {
    0.5 / f_s
}

/// Bose-Einstein occupation of a mode at `omega_res` (rad/s) and `temperature` (K).
pub fn thermal_occupation(omega_res: f64, temperature: f64) -> Result<f64> {
    if !(omega_res > 0.0) || !omega_res.is_finite() {
        return Err(Error::domain(format!(
            "resonator frequency must be positive, got {omega_res}"
        )));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let x = HBAR * omega_res / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}
