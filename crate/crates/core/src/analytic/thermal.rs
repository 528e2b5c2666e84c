use num_complex::Complex64;

use super::{hyperbolic_ratio, one_minus_exp_neg};
use crate::model::ResonatorQubitParams;

/// CPMG reduction factor R_th(Δt) for thermal photons, in [0, 1].
pub fn reduction_factor_thermal(dt: f64, params: &ResonatorQubitParams) -> f64 {
    let a = params.kappa * dt;
    let ratio = hyperbolic_ratio(a, 2.0 * params.chi * dt);
    1.0 - ratio / (0.5 * a * params.suppression())
}

/// Δt → ∞ thermal rate to first order in n̄_th: 4χ²n̄/(κ[1 + (2χ/κ)²]).
pub fn gamma_lowfreq_thermal(n_th: f64, params: &ResonatorQubitParams) -> f64 {
    4.0 * params.chi * params.chi * n_th / (params.kappa * params.suppression())
}

/// Thermal-photon CPMG dephasing rate for n̄_th ≪ 1, any 2χ/κ.
pub fn gamma_thermal(dt: f64, n_th: f64, params: &ResonatorQubitParams) -> f64 {
    gamma_lowfreq_thermal(n_th, params) * reduction_factor_thermal(dt, params)
}

/// Ramsey-limit thermal rate valid for all n̄_th:
/// (κ/2)·Re[√((1 − 2iχ/κ)² − 8iχn̄/κ) − 1].
pub fn gamma_lowfreq_thermal_exact(n_th: f64, params: &ResonatorQubitParams) -> f64 {
    let r = params.chi_ratio();
    let root0 = Complex64::new(1.0, -r);
    let eps = Complex64::new(0.0, -4.0 * r * n_th);
    let root = (root0 * root0 + eps).sqrt();
    // Re(root0) = 1, so Re[root − 1] = Re[root − root0] = Re[ε/(root + root0)]
    0.5 * params.kappa * (eps / (root + root0)).re
}

/// Quasi-steady correlator 𝒜(t) = ⟨α₀α₁*⟩ on [t_p, t_p + Δt] where χ̃ = +χ.
#[derive(Debug, Clone, Copy)]
pub struct CorrelatorSolution {
    /// 𝒜(t_p) immediately after a π-pulse.
    pub a_tp: Complex64,
    /// κn̄/κ₋, the value 𝒜 relaxes towards.
    pub stationary: Complex64,
    /// κ₋ = κ − 2iχ.
    pub kappa_minus: Complex64,
    pub dt: f64,
    pub chi: f64,
}

impl CorrelatorSolution {
    /// 𝒜(t_p + s) for 0 ≤ s ≤ Δt.
    pub fn at(&self, s: f64) -> Complex64 {
        (-self.kappa_minus * s).exp() * (self.a_tp - self.stationary) + self.stationary
    }

    /// ∫₀^Δt 𝒜(t_p + s) ds.
    pub fn integral(&self) -> Complex64 {
        (self.a_tp - self.stationary) * one_minus_exp_neg(self.kappa_minus * self.dt) / self.kappa_minus
            + self.stationary * self.dt
    }

    /// −Re[∫ 2iχ̃ 𝒜 dt]/Δt over one interpulse interval.
    pub fn rate(&self) -> f64 {
        -(Complex64::new(0.0, 2.0 * self.chi) * self.integral()).re / self.dt
    }
}

/// Solves d𝒜/dt = −κ₋𝒜 + κn̄ with 𝒜(t_p + Δt) = 𝒜(t_p)*.
pub fn correlator_steady_state(dt: f64, n_th: f64, params: &ResonatorQubitParams) -> CorrelatorSolution {
    let kappa = params.kappa;
    let km = Complex64::new(kappa, -2.0 * params.chi);
    let stationary = kappa * n_th / km;
    let inv_im = (1.0 / km).im;
    // sinh(κΔt)·e^(−κΔt) = (1 − e^(−2κΔt))/2
    let denom = -0.5 * (-2.0 * kappa * dt).exp_m1();
    let a_tp = stationary
        - Complex64::new(0.0, kappa * n_th * inv_im) * one_minus_exp_neg(km * dt).conj() / denom;
    CorrelatorSolution {
        a_tp,
        stationary,
        kappa_minus: km,
        dt,
        chi: params.chi,
    }
}
