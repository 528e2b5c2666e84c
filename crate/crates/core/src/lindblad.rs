//! Qubit–resonator master equation in a truncated Fock space.
//!
//! Basis index is q·n_fock + k for qubit state q (σ_z = +1 for q = 0) and
//! photon number k. Frame and Hamiltonian:
//! H = −(χσ_z + δω_d)n̂ + i√κ(F a† − F* a) + g(t)σ_x,
//! with damping κ(n̄+1)D[a] and heating κn̄D[a†].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decay::{extract_rate, RateEstimate};
use crate::error::{Error, Result};
use crate::model::{CoherencePoint, CoherenceTrace, CpmgSchedule, DriveSpec, PulseShape, ResonatorQubitParams, Route};
use crate::trajectory::default_n_list;

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const LEAKAGE_LIMIT: f64 = 1e-6;
pub const TRACE_TOL: f64 = 1e-8;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockConfig {
    pub n_fock: usize,
    /// Fixed RK4 step; `None` picks one from the fastest time scale.
    pub integrator_step: Option<f64>,
    /// Pre-sequence relaxation time; `None` means 100/κ.
    pub thermalization_time: Option<f64>,
    /// Check trace, Hermiticity and positivity at every sample.
    pub check_invariants: bool,
}

impl Default for FockConfig {
    fn default() -> Self {
        Self { n_fock: 5, integrator_step: None, thermalization_time: None, check_invariants: true }
    }
}

impl FockConfig {
    pub fn with_n_fock(mut self, n_fock: usize) -> Self {
        self.n_fock = n_fock;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fock < 2 {
            return Err(Error::config(format!("n_fock must be at least 2, got {}", self.n_fock)));
        }
        if let Some(h) = self.integrator_step {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::config(format!("integrator step must be positive, got {h}")));
            }
        }
        if let Some(t) = self.thermalization_time {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::config(format!("thermalization time must be non-negative, got {t}")));
            }
        }
        Ok(())
    }

    /// Default step: a twentieth of the shortest of 1/κ, the dispersive and
    /// detuning periods and, for shaped pulses, τ.
    pub fn step_for(&self, params: &ResonatorQubitParams, pulse_duration: f64) -> f64 {
        if let Some(h) = self.integrator_step {
            return h;
        }
        let rot = 2.0 * params.chi.abs() + params.delta_omega_d.abs();
        let mut t = 1.0 / params.kappa;
        if rot > 0.0 {
            t = t.min(2.0 * PI / rot);
        }
        if pulse_duration > 0.0 {
            // 2π/g_max = 2τ for the raised cosine
            t = t.min(pulse_duration);
        }
        t / 20.0
    }
}

/// Density operator of qubit ⊗ resonator.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub rho: CMat,
    pub n_fock: usize,
}

impl SystemState {
    /// Qubit in |0⟩, resonator in vacuum.
    pub fn ground(n_fock: usize) -> Self {
        let d = 2 * n_fock;
        let mut rho = CMat::zeros(d, d);
        rho[(0, 0)] = ONE;
        Self { rho, n_fock }
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// 2|Tr_res ⟨0|ρ|1⟩|.
    pub fn coherence(&self) -> f64 {
        2.0 * self.off_diagonal().norm()
    }

    fn off_diagonal(&self) -> Complex64 {
        let nf = self.n_fock;
        (0..nf).map(|k| self.rho[(k, nf + k)]).sum()
    }

    /// Probability of the qubit being in |1⟩.
    pub fn qubit_excited(&self) -> f64 {
        let nf = self.n_fock;
        (0..nf).map(|k| self.rho[(nf + k, nf + k)].re).sum()
    }

    /// Photon-number distribution traced over the qubit.
    pub fn photon_distribution(&self) -> Vec<f64> {
        let nf = self.n_fock;
        (0..nf).map(|k| self.rho[(k, k)].re + self.rho[(nf + k, nf + k)].re).collect()
    }

    pub fn mean_photons(&self) -> f64 {
        self.photon_distribution().iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// Population of the highest retained Fock level.
    pub fn top_level_population(&self) -> f64 {
        *self.photon_distribution().last().expect("n_fock ≥ 2")
    }

    fn apply_unitary(&mut self, u: &CMat) {
        self.rho = u * &self.rho * u.adjoint();
    }

    /// Coherence from populations after a final π/2-pulse at six equidistant
    /// phases, fitted to a + b cos φ + c sin φ.
    pub fn coherence_phase_scan(&self) -> f64 {
        let nf = self.n_fock;
        let mut sums = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for j in 0..6 {
            let phi = 2.0 * PI * j as f64 / 6.0;
            let mut s = self.clone();
            s.apply_unitary(&qubit_gate(nf, half_pi_about(phi)));
            let p = s.qubit_excited();
            let basis = [1.0, phi.cos(), phi.sin()];
            for a in 0..3 {
                rhs[a] += basis[a] * p;
                for b in 0..3 {
                    sums[a][b] += basis[a] * basis[b];
                }
            }
        }
        // six equidistant phases make the normal matrix diagonal: diag(6, 3, 3)
        let b = rhs[1] / sums[1][1];
        let c = rhs[2] / sums[2][2];
        2.0 * (b * b + c * c).sqrt()
    }

    /// Fails if trace, Hermiticity or positivity drifted beyond tolerance.
    pub fn check(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::config(format!("trace drifted to {tr}; reduce the integrator step")));
        }
        let h = self.hermiticity_error();
        if h > HERMITICITY_TOL {
            return Err(Error::config(format!("Hermiticity error {h:e}; reduce the integrator step")));
        }
        let m = self.min_eigenvalue();
        if m < -POSITIVITY_TOL {
            return Err(Error::config(format!("negative eigenvalue {m:e}; reduce the integrator step")));
        }
        Ok(())
    }

    fn check_leakage(&self) -> Result<()> {
        let leak = self.top_level_population() / self.trace().re;
        if leak > LEAKAGE_LIMIT {
            return Err(Error::Leakage { n_fock: self.n_fock, leakage: leak });
        }
        Ok(())
    }
}

/// 2×2 qubit operator lifted to the full space.
fn qubit_gate(nf: usize, g: [[Complex64; 2]; 2]) -> CMat {
    let mut m = CMat::zeros(2 * nf, 2 * nf);
    for q in 0..2 {
        for p in 0..2 {
            for k in 0..nf {
                m[(q * nf + k, p * nf + k)] = g[q][p];
            }
        }
    }
    m
}

/// exp(−i(π/4)(cos φ σ_x + sin φ σ_y)); φ = π/2 gives R_y(π/2).
fn half_pi_about(phi: f64) -> [[Complex64; 2]; 2] {
    let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let s = -I * std::f64::consts::FRAC_1_SQRT_2;
    let e_minus = Complex64::from_polar(1.0, -phi);
    let e_plus = Complex64::from_polar(1.0, phi);
    [[c, s * e_minus], [s * e_plus, c]]
}

/// −iσ_x, the instantaneous π-pulse.
fn pi_pulse() -> [[Complex64; 2]; 2] {
    [[ZERO, -I], [-I, ZERO]]
}

/// Raised-cosine envelope π[1 + cos(2πs/τ)]/(2τ) for |s| < τ/2.
pub fn raised_cosine(s: f64, tau: f64) -> f64 {
    if s.abs() < 0.5 * tau {
        PI * (1.0 + (2.0 * PI * s / tau).cos()) / (2.0 * tau)
    } else {
        0.0
    }
}

/// Operators entering the right-hand side.
struct Generator {
    /// Non-Hermitian effective Hamiltonian without the pulse term.
    k0: CMat,
    sx: CMat,
    jumps: Vec<CMat>,
}

impl Generator {
    fn new(params: &ResonatorQubitParams, drive: &DriveSpec, nf: usize) -> Self {
        let d = 2 * nf;
        let mut a = CMat::zeros(d, d);
        for q in 0..2 {
            for k in 1..nf {
                a[(q * nf + k - 1, q * nf + k)] = Complex64::new((k as f64).sqrt(), 0.0);
            }
        }
        let ad = a.adjoint();
        let num = &ad * &a;
        let mut sz = CMat::zeros(d, d);
        for k in 0..nf {
            sz[(k, k)] = ONE;
            sz[(nf + k, nf + k)] = -ONE;
        }
        let f = drive.f_dc();
        let sk = params.kappa.sqrt();
        let h = -(&sz * &num) * Complex64::new(params.chi, 0.0) - &num * Complex64::new(params.delta_omega_d, 0.0)
            + (&ad * (f * sk) - &a * (f.conj() * sk)) * I;
        let n = drive.n_th();
        let mut jumps = Vec::new();
        let mut damp = CMat::zeros(d, d);
        let down = params.kappa * (n + 1.0);
        jumps.push(&a * Complex64::new(down.sqrt(), 0.0));
        damp += &num * Complex64::new(down, 0.0);
        if n > 0.0 {
            let up = params.kappa * n;
            jumps.push(&ad * Complex64::new(up.sqrt(), 0.0));
            damp += (&a * &ad) * Complex64::new(up, 0.0);
        }
        let k0 = h - damp * Complex64::new(0.0, 0.5);
        let sx = qubit_gate(nf, [[ZERO, ONE], [ONE, ZERO]]);
        Self { k0, sx, jumps }
    }

    fn rhs(&self, rho: &CMat, g: f64) -> CMat {
        let mut x = &self.k0 * rho;
        if g != 0.0 {
            x += (&self.sx * rho) * Complex64::new(g, 0.0);
        }
        x *= -I;
        let mut out = &x + x.adjoint();
        for l in &self.jumps {
            out += l * rho * l.adjoint();
        }
        out
    }

    /// Fixed-step RK4 over [t0, t0 + duration] with pulse envelope `g`.
    fn evolve(&self, rho: &mut CMat, t0: f64, duration: f64, h_max: f64, g: &dyn Fn(f64) -> f64) {
        if duration <= 0.0 {
            return;
        }
        let n = (duration / h_max).ceil().max(1.0) as usize;
        let h = duration / n as f64;
        let hc = Complex64::new(h, 0.0);
        for i in 0..n {
            let t = t0 + i as f64 * h;
            let (g0, g1, g2) = (g(t), g(t + 0.5 * h), g(t + h));
            let k1 = self.rhs(rho, g0);
            let k2 = self.rhs(&(&*rho + &k1 * (hc * 0.5)), g1);
            let k3 = self.rhs(&(&*rho + &k2 * (hc * 0.5)), g1);
            let k4 = self.rhs(&(&*rho + &k3 * hc), g2);
            *rho += (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * (hc / 6.0);
        }
    }
}

/// Evolves `state` for `duration` starting at time `t0` under pulse envelope g(t).
pub fn evolve(
    state: &SystemState,
    params: &ResonatorQubitParams,
    drive: &DriveSpec,
    envelope: &dyn Fn(f64) -> f64,
    t0: f64,
    duration: f64,
    step: f64,
) -> Result<SystemState> {
    params.validate()?;
    if !(step > 0.0) {
        return Err(Error::config("integrator step must be positive"));
    }
    let gen = Generator::new(params, drive, state.n_fock);
    let mut out = state.clone();
    gen.evolve(&mut out.rho, t0, duration, step, envelope);
    out.check_leakage()?;
    Ok(out)
}

/// Relaxes |0⟩ ⊗ |vac⟩ under the drive with no pulses.
pub fn thermalize(params: &ResonatorQubitParams, drive: &DriveSpec, fock: &FockConfig) -> Result<SystemState> {
    fock.validate()?;
    let t = fock.thermalization_time.unwrap_or(100.0 / params.kappa);
    let step = fock.step_for(params, 0.0);
    evolve(&SystemState::ground(fock.n_fock), params, drive, &|_| 0.0, 0.0, t, step)
}

/// C(NΔt) for each N in `n_list`: thermalize, π/2 about y, then the CPMG train.
pub fn cpmg_experiment(
    params: &ResonatorQubitParams,
    drive: &DriveSpec,
    schedule: &CpmgSchedule,
    n_list: &[usize],
    fock: &FockConfig,
) -> Result<CoherenceTrace> {
    schedule.validate()?;
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let n_max = *ns.last().ok_or_else(|| Error::config("empty N list"))?;
    if ns[0] == 0 {
        return Err(Error::config("N must be at least 1"));
    }
    let mut state = thermalize(params, drive, fock)?;
    let nf = fock.n_fock;
    state.apply_unitary(&qubit_gate(nf, half_pi_about(PI / 2.0)));

    let gen = Generator::new(params, drive, nf);
    let tau = schedule.pulse_duration;
    let step = fock.step_for(params, tau);
    let dt = schedule.dt;
    let centers = schedule.with_pulses(n_max).pulse_centers();
    let pi = qubit_gate(nf, pi_pulse());
    let shaped = schedule.pulse_shape == PulseShape::RaisedCosine;

    let mut points = Vec::with_capacity(ns.len());
    let mut t = 0.0;
    let mut next = 0;
    for (p, &c) in centers.iter().enumerate() {
        if shaped {
            gen.evolve(&mut state.rho, t, c - 0.5 * tau - t, step, &|_| 0.0);
            gen.evolve(&mut state.rho, c - 0.5 * tau, tau, step, &|s| raised_cosine(s - c, tau));
            t = c + 0.5 * tau;
        } else {
            gen.evolve(&mut state.rho, t, c - t, step, &|_| 0.0);
            state.apply_unitary(&pi);
            t = c;
        }
        let t_end = (p + 1) as f64 * dt;
        gen.evolve(&mut state.rho, t, t_end - t, step, &|_| 0.0);
        t = t_end;
        if next < ns.len() && ns[next] == p + 1 {
            state.check_leakage()?;
            if fock.check_invariants {
                state.check()?;
            }
            points.push(CoherencePoint { t_cpmg: t_end, coherence: state.coherence(), std_err: 0.0 });
            next += 1;
        }
    }
    Ok(CoherenceTrace { points, route: Route::Lindblad, dt, params: *params, seed: None })
}

/// Γ from an exponential fit of C(NΔt); `n_list` defaults to κNΔt ∈ [4, 12].
pub fn rate_from_lindblad(
    params: &ResonatorQubitParams,
    drive: &DriveSpec,
    schedule: &CpmgSchedule,
    n_list: Option<&[usize]>,
    fock: &FockConfig,
) -> Result<RateEstimate> {
    let default;
    let ns = match n_list {
        Some(l) => l,
        None => {
            default = default_n_list(params.kappa, schedule.dt);
            &default
        }
    };
    let trace = cpmg_experiment(params, drive, schedule, ns, fock)?;
    extract_rate(&trace, Some(0.0))
}
