use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::thermal::correlator_steady_state;
use crate::error::{Error, Result};
use crate::model::ResonatorQubitParams;

const MAX_DAMPED: usize = 2000;
const MAX_NEWTON: usize = 60;
const TOL: f64 = 1e-12;

/// Gaussian-ansatz solution for thermal dephasing at arbitrary n̄_th.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModerateThermalSolution {
    /// Wigner variance V(t_p) right after a π-pulse.
    pub v_tp: Complex64,
    pub vartheta: Complex64,
    pub zeta: Complex64,
    /// Γ_φ in s⁻¹.
    pub gamma: f64,
    /// Relative residual |V* − V(t_p + Δt)|/|V| at the returned V.
    pub residual: f64,
}

/// Map V(t_p) ↦ V(t_p + Δt) written as a Möbius transform.
struct Propagator {
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
    e: Complex64,
}

impl Propagator {
    fn new(kappa: f64, chi: f64, vartheta: Complex64, dt: f64) -> Self {
        let x = (-2.0 * vartheta * dt).exp();
        let t = (1.0 - x) / (1.0 + x);
        let p = kappa / (2.0 * vartheta);
        let q = Complex64::new(0.0, -2.0 * chi) / vartheta;
        Self {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 1.0) * vartheta / (2.0 * chi) * (t + p),
            c: q * t,
            d: 1.0 + p * t,
            e: Complex64::new(0.0, kappa / (4.0 * chi)),
        }
    }

    fn apply(&self, w: Complex64) -> Complex64 {
        (self.a * w + self.b) / (self.c * w + self.d) - self.e
    }

    fn derivative(&self, w: Complex64) -> Complex64 {
        let den = self.c * w + self.d;
        (self.a * self.d - self.b * self.c) / (den * den)
    }

    fn residual(&self, v: Complex64) -> Complex64 {
        v.conj() - self.apply(v)
    }
}

fn rel_residual(prop: &Propagator, v: Complex64) -> f64 {
    prop.residual(v).norm() / v.norm().max(1e-300)
}

/// Γ_φ^th for moderate n̄_th from the Gaussian Wigner ansatz.
///
/// Solves V(t_p)* = V(t_p + Δt) by damped fixed-point iteration seeded from
/// the small-n̄ correlator, then polishes with Newton on (Re V, Im V).
pub fn gamma_thermal_moderate(dt: f64, n_th: f64, params: &ResonatorQubitParams) -> Result<ModerateThermalSolution> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::domain(format!("n_th must be non-negative, got {n_th}")));
    }
    let kappa = params.kappa;
    let chi = params.chi;
    let disc = Complex64::new(kappa * kappa - 4.0 * chi * chi, -4.0 * chi * kappa * (2.0 * n_th + 1.0));
    let mut vartheta = 0.5 * disc.sqrt();
    if vartheta.re < 0.0 {
        vartheta = -vartheta;
    }
    assert!(vartheta.re > 0.0, "Re ϑ must be positive");
    if chi == 0.0 || n_th == 0.0 {
        let v = Complex64::new(n_th + 0.5, 0.0);
        let zeta = (kappa - Complex64::new(0.0, 4.0 * chi) * v) / (2.0 * vartheta);
        return Ok(ModerateThermalSolution { v_tp: v, vartheta, zeta, gamma: 0.0, residual: 0.0 });
    }

    let prop = Propagator::new(kappa, chi, vartheta, dt);
    let mut v = 0.5 + correlator_steady_state(dt, n_th, params).a_tp;
    let mut best = (rel_residual(&prop, v), v);
    for _ in 0..MAX_DAMPED {
        let next = 0.5 * (v + prop.apply(v).conj());
        if !next.re.is_finite() || !next.im.is_finite() {
            break;
        }
        v = next;
        let r = rel_residual(&prop, v);
        if r < best.0 {
            best = (r, v);
        }
        if r < 1e-8 {
            break;
        }
    }
    v = best.1;

    for _ in 0..MAX_NEWTON {
        let r = prop.residual(v);
        if r.norm() / v.norm() < TOL {
            break;
        }
        let m = prop.derivative(v);
        let jx = 1.0 - m;
        let jy = Complex64::new(0.0, -1.0) - Complex64::new(0.0, 1.0) * m;
        let det = jx.re * jy.im - jy.re * jx.im;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = (r.re * jy.im - jy.re * r.im) / det;
        let dy = (jx.re * r.im - r.re * jx.im) / det;
        let cand = v - Complex64::new(dx, dy);
        if rel_residual(&prop, cand) >= rel_residual(&prop, v) {
            break;
        }
        v = cand;
    }

    let residual = rel_residual(&prop, v);
    if !(residual < 1e-10) {
        return Err(Error::Solver { iterations: MAX_DAMPED + MAX_NEWTON, residual });
    }

    let zeta = (kappa - Complex64::new(0.0, 4.0 * chi) * v) / (2.0 * vartheta);
    // cosh ϑΔt + ζ sinh ϑΔt = e^(ϑΔt)·[(1 + ζ) + (1 − ζ)e^(−2ϑΔt)]/2
    let arg = 0.5 * ((1.0 + zeta) + (1.0 - zeta) * (-2.0 * vartheta * dt).exp());
    assert!(arg.norm() > 0.0, "log argument vanished");
    let theta0 = Complex64::new(kappa, -2.0 * chi) / 2.0;
    // ϑ − ϑ₀ without cancellation at small n̄
    let shift = Complex64::new(0.0, -2.0 * chi * kappa * n_th) / (vartheta + theta0);
    let gamma = shift.re + arg.norm().ln() / dt;
    Ok(ModerateThermalSolution { v_tp: v, vartheta, zeta, gamma, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{gamma_lowfreq_thermal_exact, gamma_thermal};
    use crate::units::{mhz_to_angular, sequence_frequency};

    fn baseline_19ns() -> ResonatorQubitParams {
        ResonatorQubitParams::resonant(1.0 / 19e-9, 0.5 * mhz_to_angular(5.7)).unwrap()
    }

    fn dt_for(f_s: f64) -> f64 {
        0.5 / f_s
    }

    #[test]
    fn vacuum_has_no_dephasing() {
        let s = gamma_thermal_moderate(1e-7, 0.0, &baseline_19ns()).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert!((s.v_tp - 0.5).norm() < 1e-15);
        assert!((s.zeta - 1.0).norm() < 1e-12);
    }

    /// Direct RK4 integration of the variance equation over one interval
    /// must close on V(t_p)*.
    #[test]
    fn fixed_point_closes_under_direct_integration() {
        let p = baseline_19ns();
        let n = 0.1;
        let dt = 200e-9;
        let s = gamma_thermal_moderate(dt, n, &p).unwrap();
        let i = Complex64::new(0.0, 1.0);
        let f = |v: Complex64| -p.kappa * v + 2.0 * i * p.chi * v * v + 0.5 * (p.kappa * (2.0 * n + 1.0) - i * p.chi);
        let steps = 20_000;
        let h = dt / steps as f64;
        let mut v = s.v_tp;
        let mut int_v = Complex64::new(0.0, 0.0);
        for _ in 0..steps {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            let next = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            int_v += 0.5 * h * (v + next);
            v = next;
        }
        assert!((v - s.v_tp.conj()).norm() < 1e-9 * s.v_tp.norm());
        // rate from dA/dt = −2iχV + iχ
        let rate = -(2.0 * i * p.chi * int_v).re / dt;
        assert!(((rate - s.gamma) / s.gamma).abs() < 1e-4, "{rate} vs {}", s.gamma);
    }

    #[test]
    fn small_population_matches_linear_formula() {
        let p = baseline_19ns();
        for k in 0..=20 {
            let f_s = 0.1e6 * (125.0f64).powf(k as f64 / 20.0);
            let dt = dt_for(f_s);
            let m = gamma_thermal_moderate(dt, 1e-3, &p).unwrap().gamma;
            let l = gamma_thermal(dt, 1e-3, &p);
            assert!(((m - l) / l).abs() < 0.01, "f_s={f_s}: {m} vs {l}");
        }
    }

    #[test]
    fn long_interval_matches_exact_lowfreq() {
        let p = baseline_19ns();
        let s = gamma_thermal_moderate(1e4 / p.kappa, 0.1, &p).unwrap();
        let exact = gamma_lowfreq_thermal_exact(0.1, &p);
        assert!(((s.gamma - exact) / exact).abs() < 1e-3, "{} vs {exact}", s.gamma);
    }

    #[test]
    fn branch_is_continuous_over_population_sweep() {
        let p = baseline_19ns();
        let dt = dt_for(1e6);
        let ns: Vec<f64> = (0..=200).map(|k| 0.2 * k as f64 / 200.0).collect();
        let g: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let s = gamma_thermal_moderate(dt, n, &p).unwrap();
                assert!(s.vartheta.re > 0.0);
                s.gamma
            })
            .collect();
        for k in 1..g.len() - 1 {
            let slope = (g[k + 1] - g[k - 1]).abs() / 2.0;
            assert!((g[k + 1] - g[k]).abs() <= 10.0 * slope.max(1e-12 * g[k].abs()));
        }
        assert!(sequence_frequency(dt) > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(gamma_thermal_moderate(0.0, 0.1, &baseline_19ns()).is_err());
        assert!(gamma_thermal_moderate(1e-7, -0.1, &baseline_19ns()).is_err());
    }
}
