use num_complex::Complex64;

use super::{hyperbolic_ratio, one_minus_exp_neg, sin_over_sinh};
use crate::error::{Error, Result};
use crate::model::{coherent_population, ResonatorQubitParams};

/// CPMG reduction factor R_coh(Δt) for a resonant coherent drive.
///
/// Unlike R_th this can exceed 1 when 2χ/κ > 1.393 and (2χ/2π)Δt is near an
/// odd integer.
pub fn reduction_factor_coherent(dt: f64, params: &ResonatorQubitParams) -> f64 {
    let b = 0.5 * params.kappa * dt;
    let x = params.chi / params.kappa;
    let ratio = hyperbolic_ratio(b, params.chi * dt);
    let bracket = 1.0 + x * sin_over_sinh(params.chi * dt, b) - 2.0 * x * x;
    1.0 - ratio / (0.5 * b * params.suppression()) * bracket
}

/// Δt → ∞ coherent rate 8χ²n̄_coh/(κ[1 + (2χ/κ)²]).
pub fn gamma_coherent_lowfreq(n_coh: f64, params: &ResonatorQubitParams) -> f64 {
    8.0 * params.chi * params.chi * n_coh / (params.kappa * params.suppression())
}

/// Coherent-photon CPMG dephasing rate at zero drive detuning.
///
/// Meaningful while the result stays well below min(1/Δt, κ). Nonzero
/// detuning is rejected; use [`gamma_coherent_detuned`].
pub fn gamma_coherent(dt: f64, n_coh: f64, params: &ResonatorQubitParams) -> Result<f64> {
    if params.delta_omega_d != 0.0 {
        return Err(Error::domain(
            "gamma_coherent requires zero drive detuning; use gamma_coherent_detuned",
        ));
    }
    Ok(gamma_coherent_lowfreq(n_coh, params) * reduction_factor_coherent(dt, params))
}

/// R_coh(Δt, δω_d) for a detuned coherent drive.
pub fn reduction_factor_coherent_detuned(dt: f64, delta_omega_d: f64, params: &ResonatorQubitParams) -> f64 {
    let p = params.with_detuning(delta_omega_d);
    let g0 = p.branch_decay(0, 1.0);
    let g1 = p.branch_decay(1, 1.0);
    let one = |z: Complex64| one_minus_exp_neg(z * dt);

    let b_sum = one(g0) * one(g1) * one(g0.conj() + g1.conj()) / (g1 * dt)
        + one(g0.conj()) * one(g1.conj()) * one(g0 + g1) / (g0.conj() * dt)
        - one(g0) * one(g1.conj()) * one(g0.conj() + g1) / ((g0.conj() + g1) * dt);
    let big_b = b_sum.re;

    let kdt = params.kappa * dt;
    let e1 = (-0.5 * kdt).exp();
    let e2 = (-kdt).exp();
    // (1 + e^(−κΔt)) − 2cos χΔt cos δΔt e^(−κΔt/2), free of cancellation at small Δt
    let sa = (0.5 * params.chi * dt).sin();
    let sb = (0.5 * delta_omega_d * dt).sin();
    let one_minus_cc = 2.0 * sa * sa + (params.chi * dt).cos() * 2.0 * sb * sb;
    let h = (-0.5 * kdt).exp_m1();
    let edge = -(-kdt).exp_m1() * (h * h + 2.0 * e1 * one_minus_cc) / kdt;
    // (1 + e^(−2κΔt))/2 − cos(2δΔt)e^(−κΔt), written to keep the δ → 0, Δt → 0 limit accurate
    let em1 = (-kdt).exp_m1();
    let sd = (delta_omega_d * dt).sin();
    let denom = 0.5 * em1 * em1 + 2.0 * sd * sd * e2;
    1.0 - (big_b - edge) / denom
}

/// Coherent-photon CPMG rate at arbitrary drive detuning δω_d.
pub fn gamma_coherent_detuned(dt: f64, f_dc: Complex64, delta_omega_d: f64, params: &ResonatorQubitParams) -> f64 {
    let p = params.with_detuning(delta_omega_d);
    let pop = coherent_population(&p, f_dc);
    if pop.n_max == 0.0 {
        return 0.0;
    }
    let pref = 8.0 * p.chi * p.chi * pop.n0 * pop.n1 / (p.kappa * pop.n_max);
    pref * reduction_factor_coherent_detuned(dt, delta_omega_d, params)
}
