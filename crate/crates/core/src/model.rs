//! Domain types shared by the analytic, trajectory, master-equation and
//! fitting routes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::sequence_frequency;

/// Dispersive resonator-qubit constants, all in rad/s.
///
/// `chi` is half the dispersive shift: one photon moves the qubit frequency
/// by 2χ. `delta_omega_d` is the drive detuning ω_d − ω_res, where ω_res is
/// the mean of the two qubit-state-dependent resonator frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorQubitParams {
    pub kappa: f64,
    pub chi: f64,
    pub delta_omega_d: f64,
}

impl ResonatorQubitParams {
    pub fn new(kappa: f64, chi: f64, delta_omega_d: f64) -> Result<Self> {
        let p = Self {
            kappa,
            chi,
            delta_omega_d,
        };
        p.validate()?;
        Ok(p)
    }

    /// Resonant drive (or no drive).
    pub fn resonant(kappa: f64, chi: f64) -> Result<Self> {
        Self::new(kappa, chi, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::domain(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !self.chi.is_finite() || !self.delta_omega_d.is_finite() {
            return Err(Error::domain("chi and detuning must be finite"));
        }
        Ok(())
    }

    /// The dimensionless ratio 2χ/κ.
    pub fn chi_ratio(&self) -> f64 {
        2.0 * self.chi / self.kappa
    }

    /// 1 + (2χ/κ)², the non-Gaussian suppression of the low-frequency rate.
    pub fn suppression(&self) -> f64 {
        let r = self.chi_ratio();
        1.0 + r * r
    }

    pub fn with_chi(&self, chi: f64) -> Self {
        Self { chi, ..*self }
    }

    pub fn with_detuning(&self, delta_omega_d: f64) -> Self {
        Self {
            delta_omega_d,
            ..*self
        }
    }

    /// Complex decay factor γ̃_q = κ/2 − i[δω_d + (−1)^q χ̃] for qubit branch
    /// `q` while the sign of χ̃ is `chi_sign`.
    pub fn branch_decay(&self, q: usize, chi_sign: f64) -> Complex64 {
        let s = if q == 0 { 1.0 } else { -1.0 };
        Complex64::new(
            0.5 * self.kappa,
            -(self.delta_omega_d + s * chi_sign * self.chi),
        )
    }
}

/// Photon source driving the resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriveSpec {
    None,
    /// White-noise drive producing a thermal population `n_th`.
    Thermal { n_th: f64 },
    /// Constant coherent drive with amplitude F_dc in s^(-1/2).
    Coherent { f_dc: Complex64 },
}

impl DriveSpec {
    pub fn thermal(n_th: f64) -> Result<Self> {
        if !(n_th >= 0.0) || !n_th.is_finite() {
            return Err(Error::domain(format!("n_th must be non-negative, got {n_th}")));
        }
        Ok(DriveSpec::Thermal { n_th })
    }

    /// Coherent drive whose resonant-equivalent population
    /// κ|F|²/[(κ/2)² + χ²] equals `n_coh`. The amplitude is taken real.
    pub fn coherent_with_population(params: &ResonatorQubitParams, n_coh: f64) -> Result<Self> {
        let amp = drive_amplitude_for_population(params, n_coh)?;
        Ok(DriveSpec::Coherent {
            f_dc: Complex64::new(amp, 0.0),
        })
    }

    pub fn n_th(&self) -> f64 {
        match self {
            DriveSpec::Thermal { n_th } => *n_th,
            _ => 0.0,
        }
    }

    pub fn f_dc(&self) -> Complex64 {
        match self {
            DriveSpec::Coherent { f_dc } => *f_dc,
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// True when the resonator dynamics carry no noise term.
    pub fn is_deterministic(&self) -> bool {
        self.n_th() == 0.0
    }
}

/// Steady-state coherent populations without CPMG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentPopulation {
    /// Population with the qubit in |0⟩.
    pub n0: f64,
    /// Population with the qubit in |1⟩.
    pub n1: f64,
    /// κ|F|²/(κ/2)², the largest population reachable at this drive power.
    pub n_max: f64,
    /// κ|F|²/[(κ/2)² + χ²], the common population at zero detuning.
    pub n_coh: f64,
}

pub fn coherent_population(params: &ResonatorQubitParams, f_dc: Complex64) -> CoherentPopulation {
    let k2 = 0.25 * params.kappa * params.kappa;
    let p = params.kappa * f_dc.norm_sqr();
    let d0 = params.delta_omega_d + params.chi;
    let d1 = params.delta_omega_d - params.chi;
    CoherentPopulation {
        n0: p / (k2 + d0 * d0),
        n1: p / (k2 + d1 * d1),
        n_max: p / k2,
        n_coh: p / (k2 + params.chi * params.chi),
    }
}

/// |F_dc| giving resonant-equivalent population `n_coh`.
pub fn drive_amplitude_for_population(params: &ResonatorQubitParams, n_coh: f64) -> Result<f64> {
    if !(n_coh >= 0.0) || !n_coh.is_finite() {
        return Err(Error::domain(format!("population must be non-negative, got {n_coh}")));
    }
    let k2 = 0.25 * params.kappa * params.kappa;
    Ok((n_coh * (k2 + params.chi * params.chi) / params.kappa).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Instantaneous,
    /// g(t) = π[1 + cos(2πt/τ)]/(2τ) on (−τ/2, τ/2).
    RaisedCosine,
}

/// Periodic CPMG sequence: π/2, N π-pulses centred at (k + 1/2)Δt, π/2 at NΔt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpmgSchedule {
    pub n_pulses: usize,
    pub dt: f64,
    pub pulse_duration: f64,
    pub pulse_shape: PulseShape,
}

impl CpmgSchedule {
    pub fn instantaneous(n_pulses: usize, dt: f64) -> Result<Self> {
        let s = Self {
            n_pulses,
            dt,
            pulse_duration: 0.0,
            pulse_shape: PulseShape::Instantaneous,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn raised_cosine(n_pulses: usize, dt: f64, pulse_duration: f64) -> Result<Self> {
        let s = Self {
            n_pulses,
            dt,
            pulse_duration,
            pulse_shape: PulseShape::RaisedCosine,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return Err(Error::config("CPMG schedule needs at least one π-pulse"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("interpulse period must be positive, got {}", self.dt)));
        }
        match self.pulse_shape {
            PulseShape::Instantaneous => {
                if self.pulse_duration != 0.0 {
                    return Err(Error::config("instantaneous pulses must have zero duration"));
                }
            }
            PulseShape::RaisedCosine => {
                if !(self.pulse_duration > 0.0) {
                    return Err(Error::config("shaped pulses need a positive duration"));
                }
                if self.pulse_duration >= self.dt {
                    return Err(Error::config(format!(
                        "pulse duration {:.3e} s must be shorter than the interpulse period {:.3e} s",
                        self.pulse_duration, self.dt
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_pulses(&self, n_pulses: usize) -> Self {
        Self { n_pulses, ..*self }
    }

    pub fn total_duration(&self) -> f64 {
        self.n_pulses as f64 * self.dt
    }

    pub fn sequence_frequency(&self) -> f64 {
        sequence_frequency(self.dt)
    }

    pub fn pulse_centers(&self) -> Vec<f64> {
        (0..self.n_pulses)
            .map(|k| (k as f64 + 0.5) * self.dt)
            .collect()
    }

    /// Sign of χ̃(t) in the instantaneous-pulse model: +1 at t = 0, flipping
    /// at every pulse centre.
    pub fn chi_sign(&self, t: f64) -> f64 {
        let flips = self.pulse_centers().iter().filter(|&&c| c <= t).count();
        if flips % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Analytic,
    Trajectory,
    Lindblad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherencePoint {
    pub t_cpmg: f64,
    pub coherence: f64,
    pub std_err: f64,
}

/// Sampled coherence C(NΔt) from one route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrace {
    pub points: Vec<CoherencePoint>,
    pub route: Route,
    pub dt: f64,
    pub params: ResonatorQubitParams,
    pub seed: Option<u64>,
}

impl CoherenceTrace {
    /// Headroom above unit coherence tolerated for deterministic routes.
    pub const DETERMINISTIC_SLACK: f64 = 1e-9;

    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[1].t_cpmg > w[0].t_cpmg) {
                return Err(Error::Input("trace times must be strictly increasing".into()));
            }
        }
        for p in &self.points {
            if !p.coherence.is_finite() || p.coherence < 0.0 {
                return Err(Error::Input(format!(
                    "coherence must be finite and non-negative, got {}",
                    p.coherence
                )));
            }
            if !(p.std_err >= 0.0) {
                return Err(Error::Input("standard error must be non-negative".into()));
            }
            let limit = 1.0 + 5.0 * p.std_err + Self::DETERMINISTIC_SLACK;
            if p.coherence > limit {
                return Err(Error::Input(format!(
                    "coherence {} exceeds 1 by more than 5 standard errors",
                    p.coherence
                )));
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t_cpmg).collect()
    }

    pub fn coherences(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coherence).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// CPMG sequence frequency 1/(2Δt), Hz.
    pub f_s: f64,
    /// Dephasing rate, s⁻¹.
    pub gamma2: f64,
    /// One-sigma uncertainty of `gamma2`, s⁻¹; zero when unknown.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub points: Vec<RatePoint>,
    pub label: String,
}

impl RateCurve {
    pub fn new(label: impl Into<String>, points: Vec<RatePoint>) -> Result<Self> {
        let c = Self {
            points,
            label: label.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.f_s > 0.0) || !p.f_s.is_finite() {
                return Err(Error::Input(format!("f_s must be positive, got {}", p.f_s)));
            }
            if !p.gamma2.is_finite() {
                return Err(Error::Input("rate must be finite".into()));
            }
            if !(p.sigma >= 0.0) || !p.sigma.is_finite() {
                return Err(Error::Input(format!("sigma must be non-negative, got {}", p.sigma)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point carries a positive uncertainty.
    pub fn has_sigmas(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.sigma > 0.0)
    }
}
