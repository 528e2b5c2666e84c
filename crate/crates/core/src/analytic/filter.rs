use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResonatorQubitParams;
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    CpmgEven,
    CpmgOdd,
    Echo,
    Ramsey,
}

/// Pulse sequence for which a filter function is evaluated.
///
/// For `Ramsey`, `dt` holds the total free-evolution time and `n_pulses` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterFunctionSpec {
    pub sequence_kind: SequenceKind,
    pub n_pulses: usize,
    pub dt: f64,
}

impl FilterFunctionSpec {
    /// CPMG with `n_pulses` π-pulses; N = 1 yields the echo sequence.
    pub fn cpmg(n_pulses: usize, dt: f64) -> Result<Self> {
        let sequence_kind = match n_pulses {
            0 => return Err(Error::domain("CPMG needs at least one pulse")),
            1 => SequenceKind::Echo,
            n if n % 2 == 0 => SequenceKind::CpmgEven,
            _ => SequenceKind::CpmgOdd,
        };
        let s = Self { sequence_kind, n_pulses, dt };
        s.validate()?;
        Ok(s)
    }

    pub fn echo(dt: f64) -> Result<Self> {
        Self::cpmg(1, dt)
    }

    pub fn ramsey(total_time: f64) -> Result<Self> {
        let s = Self { sequence_kind: SequenceKind::Ramsey, n_pulses: 0, dt: total_time };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::domain(format!("dt must be positive, got {}", self.dt)));
        }
        let ok = match self.sequence_kind {
            SequenceKind::CpmgEven => self.n_pulses >= 2 && self.n_pulses % 2 == 0,
            SequenceKind::CpmgOdd => self.n_pulses >= 3 && self.n_pulses % 2 == 1,
            SequenceKind::Echo => self.n_pulses == 1,
            SequenceKind::Ramsey => self.n_pulses == 0,
        };
        if !ok {
            return Err(Error::domain(format!(
                "{:?} is inconsistent with N = {}",
                self.sequence_kind, self.n_pulses
            )));
        }
        Ok(())
    }

    /// Total sequence duration T.
    pub fn total_time(&self) -> f64 {
        match self.sequence_kind {
            SequenceKind::Ramsey => self.dt,
            _ => self.n_pulses as f64 * self.dt,
        }
    }

    /// Period of ω²F(ω) in ω.
    fn period(&self) -> f64 {
        match self.sequence_kind {
            SequenceKind::Ramsey => 2.0 * PI / self.dt,
            _ => 4.0 * PI / self.dt,
        }
    }

    /// Number of smooth lobes of ω²F(ω) within one period.
    fn lobes_per_period(&self) -> usize {
        match self.sequence_kind {
            SequenceKind::Ramsey => 1,
            _ => 2 * self.n_pulses,
        }
    }
}

/// ω²F(ω), periodic in ω.
fn scaled_filter(spec: &FilterFunctionSpec, omega: f64) -> f64 {
    match spec.sequence_kind {
        SequenceKind::Ramsey => {
            let s = (0.5 * omega * spec.dt).sin();
            2.0 * s * s
        }
        _ => {
            let x = 0.5 * omega * spec.dt;
            let q = (0.5 * x).sin();
            // cos x vanishes at x₀ = (k + ½)π; with y = x − x₀ both parities reduce
            // to (sin Ny / sin y)²
            let x0 = ((x / PI - 0.5).round() + 0.5) * PI;
            let y = x - x0;
            let n = spec.n_pulses as f64;
            let sy = y.sin();
            let ratio = if sy == 0.0 { n } else { (n * y).sin() / sy };
            8.0 * q * q * q * q * ratio * ratio
        }
    }
}

/// Filter function F(ω) in s², normalised so that ∫₀^∞ F dω/2π = T/4.
pub fn filter_function(spec: &FilterFunctionSpec, omega: f64) -> f64 {
    assert!(omega > 0.0, "omega must be positive");
    scaled_filter(spec, omega) / (omega * omega)
}

/// ∫ F(ω) dω/2π over [omega_lo, omega_hi]; `omega_hi` may be infinite.
///
/// Integrates lobe by lobe. Beyond `TAIL_PERIODS` periods the remainder is
/// replaced by Ḡ/ω_cut, with Ḡ the period average of ω²F.
pub fn filter_function_integral(spec: &FilterFunctionSpec, omega_lo: f64, omega_hi: f64) -> f64 {
    const TAIL_PERIODS: f64 = 400.0;
    assert!(omega_lo >= 0.0 && omega_hi > omega_lo);
    let period = spec.period();
    let width = period / spec.lobes_per_period() as f64;
    let cut = omega_hi.min(TAIL_PERIODS * period);

    let f = |w: f64| if w == 0.0 { 0.0 } else { filter_function(spec, w) };
    let abs_tol = 1e-13 * spec.total_time();
    let lobe_sum = |a: f64, b: f64, g: &dyn Fn(f64) -> f64| {
        let mut total = 0.0;
        let mut j = (a / width).floor() as u64 + 1;
        let mut lo = a;
        while lo < b {
            let hi = (j as f64 * width).min(b);
            if hi > lo {
                total += quad::integrate(g, lo, hi, abs_tol, 1e-10).0;
            }
            lo = hi;
            j += 1;
        }
        total
    };

    let mut total = if omega_lo < cut { lobe_sum(omega_lo, cut, &f) } else { 0.0 };
    if omega_hi > cut {
        let g_mean = lobe_sum(0.0, period, &|w| scaled_filter(spec, w) * spec.dt * spec.dt) / period / (spec.dt * spec.dt);
        let lo = omega_lo.max(cut);
        let tail = g_mean * (1.0 / lo - if omega_hi.is_finite() { 1.0 / omega_hi } else { 0.0 });
        total += tail;
    }
    total / (2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Thermal,
    CoherentResonant,
}

/// Single-sided spectral density of the qubit frequency noise, S(ω) in s⁻¹.
pub fn spectral_density(omega: f64, population: f64, params: &ResonatorQubitParams, kind: NoiseKind) -> f64 {
    let k = params.kappa;
    let c2 = params.chi * params.chi;
    match kind {
        NoiseKind::Thermal => 16.0 * c2 * k * population / (k * k + omega * omega),
        NoiseKind::CoherentResonant => 8.0 * c2 * k * population / (0.25 * k * k + omega * omega),
    }
}

/// 1 − tanh(a)/a, with a series for small a.
fn one_minus_tanhc(a: f64) -> f64 {
    if a < 1e-3 {
        let a2 = a * a;
        a2 * (1.0 / 3.0 - a2 * (2.0 / 15.0 - a2 * 17.0 / 315.0))
    } else {
        1.0 - a.tanh() / a
    }
}

/// Gaussian (filter-function) CPMG dephasing rate in the N ≫ 1 limit.
///
/// Valid only for |2χ| ≪ κ; at low frequency it lacks the [1 + (2χ/κ)²]⁻¹
/// suppression of the exact rates.
pub fn gamma_filterfunction(dt: f64, population: f64, params: &ResonatorQubitParams, kind: NoiseKind) -> f64 {
    let c2 = params.chi * params.chi;
    let k = params.kappa;
    match kind {
        NoiseKind::Thermal => 4.0 * c2 * population / k * one_minus_tanhc(0.5 * k * dt),
        NoiseKind::CoherentResonant => 8.0 * c2 * population / k * one_minus_tanhc(0.25 * k * dt),
    }
}

/// Same rate as [`gamma_filterfunction`] from the odd-harmonic sum
/// (2/π²)Σ S(2π(2m+1)f_s)/(2m+1)².
pub fn gamma_filterfunction_harmonic_sum(dt: f64, population: f64, params: &ResonatorQubitParams, kind: NoiseKind) -> f64 {
    let f_s = 0.5 / dt;
    let mut total = 0.0;
    for m in 0..10_000_000u64 {
        let k = (2 * m + 1) as f64;
        let term = spectral_density(2.0 * PI * k * f_s, population, params, kind) / (k * k);
        total += term;
        if term <= 1e-12 * total.abs() || total == 0.0 {
            break;
        }
    }
    2.0 / (PI * PI) * total
}

/// Filter-function rate times the phenomenological [1 + (2χ/κ)²]⁻¹.
pub fn gamma_filterfunction_modified(dt: f64, population: f64, params: &ResonatorQubitParams, kind: NoiseKind) -> f64 {
    gamma_filterfunction(dt, population, params, kind) / params.suppression()
}
