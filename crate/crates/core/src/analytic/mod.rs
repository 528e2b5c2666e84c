//! Closed-form dephasing rates for photon shot noise under CPMG.
//!
//! Rates are pure-dephasing rates Γ_φ in s⁻¹. The exact non-Gaussian rates
//! hold for any 2χ/κ; the filter-function rates are the Gaussian baseline,
//! valid only when |2χ| ≪ κ.

mod coherent;
mod filter;
mod moderate;
mod thermal;

pub use coherent::{
    gamma_coherent, gamma_coherent_detuned, gamma_coherent_lowfreq, reduction_factor_coherent,
    reduction_factor_coherent_detuned,
};
pub use filter::{
    filter_function, filter_function_integral, gamma_filterfunction,
    gamma_filterfunction_harmonic_sum, gamma_filterfunction_modified, spectral_density,
    FilterFunctionSpec, NoiseKind, SequenceKind,
};
pub use moderate::{gamma_thermal_moderate, ModerateThermalSolution};
pub use thermal::{
    correlator_steady_state, gamma_lowfreq_thermal, gamma_lowfreq_thermal_exact, gamma_thermal,
    reduction_factor_thermal, CorrelatorSolution,
};

use num_complex::Complex64;

/// (cosh a − cos θ)/sinh a for a > 0 without overflow or cancellation.
pub(crate) fn hyperbolic_ratio(a: f64, theta: f64) -> f64 {
    let e = (-a).exp();
    let s = (0.5 * theta).sin();
    let em1 = (-a).exp_m1();
    (em1 * em1 + 4.0 * e * s * s) / -(-2.0 * a).exp_m1()
}

/// sin θ / sinh a for a > 0.
pub(crate) fn sin_over_sinh(theta: f64, a: f64) -> f64 {
    theta.sin() * 2.0 * (-a).exp() / -(-2.0 * a).exp_m1()
}

/// 1 − e^(−z) for complex z, accurate for small |z|.
pub(crate) fn one_minus_exp_neg(z: Complex64) -> Complex64 {
    // e^(−z) − 1 = expm1(−x)·cos y + (cos y − 1) − i e^(−x) sin y, z = x + iy
    let (x, y) = (z.re, z.im);
    let half = (0.5 * y).sin();
    let re = (-x).exp_m1() * y.cos() - 2.0 * half * half;
    let im = -(-x).exp() * y.sin();
    -Complex64::new(re, im)
}
