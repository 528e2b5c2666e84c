//! Decay-rate extraction from sampled coherence traces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CoherenceTrace;

/// Slope of −ln C versus t_cpmg with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Γ in s⁻¹; negative if the trace grows.
    pub gamma: f64,
    pub sigma: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    Exponential,
    ExpTimesGaussian,
}

/// Parameters of C = a·exp(−Γt − (t/T_g)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub gamma: f64,
    pub gamma_sigma: f64,
    /// Gaussian curvature 1/T_g²; zero for the pure exponential form.
    pub gaussian_rate: f64,
    pub gaussian_rate_sigma: f64,
    pub n_points: usize,
}

impl DecayFit {
    /// T_g, or `None` when the fitted curvature is not positive.
    pub fn t_gauss(&self) -> Option<f64> {
        (self.gaussian_rate > 0.0).then(|| 1.0 / self.gaussian_rate.sqrt())
    }
}

struct LinearFit {
    coef: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Weighted polynomial fit of y against t; `sigma` of `None` means unit weights
/// with the residual variance used for the covariance.
fn poly_fit(t: &[f64], y: &[f64], sigma: Option<&[f64]>, degree: usize) -> Result<LinearFit> {
    let n = t.len();
    let p = degree + 1;
    // centre and scale t so the normal matrix stays well conditioned
    let t0 = t.iter().sum::<f64>() / n as f64;
    let scale = t.iter().map(|v| (v - t0).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let w = sigma.map_or(1.0, |s| 1.0 / s[i]);
        let u = (t[i] - t0) / scale;
        for j in 0..p {
            x[(i, j)] = w * u.powi(j as i32);
        }
        b[i] = w * y[i];
    }
    let xtx = x.transpose() * &x;
    let inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("decay fit needs distinct sample times".into()))?;
    let c = &inv * (x.transpose() * &b);
    let resid = &b - &x * &c;
    let s2 = if sigma.is_some() { 1.0 } else { resid.norm_squared() / (n - p) as f64 };
    let cov_u = inv * s2;

    // map coefficients of u = (t − t0)/scale back to powers of t
    let mut m = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        // u^j = Σ_k C(j,k) t^k (−t0)^(j−k) / scale^j
        for k in 0..=j {
            let binom = (0..k).fold(1.0, |acc, i| acc * (j - i) as f64 / (i + 1) as f64);
            m[(k, j)] = binom * (-t0).powi((j - k) as i32) / scale.powi(j as i32);
        }
    }
    let coef = &m * c;
    let cov = &m * cov_u * m.transpose();
    Ok(LinearFit { coef, cov })
}

/// Points with C > 0 and t ≥ t_min, as (t, ln C, σ_lnC).
fn usable(trace: &CoherenceTrace, t_min: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for p in &trace.points {
        if p.t_cpmg < t_min {
            continue;
        }
        if !(p.coherence > 0.0) {
            log::warn!("dropping non-positive coherence {} at t = {:e}", p.coherence, p.t_cpmg);
            continue;
        }
        t.push(p.t_cpmg);
        y.push(p.coherence.ln());
        s.push(p.std_err / p.coherence);
    }
    (t, y, s)
}

/// Γ from a weighted linear fit of ln C against t_cpmg over t ≥ t_min.
///
/// `t_min` defaults to 4/κ. Points carry inverse-variance weights when every
/// standard error is positive, unit weights otherwise.
pub fn extract_rate(trace: &CoherenceTrace, t_min: Option<f64>) -> Result<RateEstimate> {
    let t_min = t_min.unwrap_or(4.0 / trace.params.kappa);
    let (t, y, s) = usable(trace, t_min);
    if t.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 positive points with t ≥ {t_min:e}, have {}",
            t.len()
        )));
    }
    let weighted = s.iter().all(|&v| v > 0.0);
    let fit = poly_fit(&t, &y, weighted.then_some(&s[..]), 1)?;
    Ok(RateEstimate {
        gamma: -fit.coef[1],
        sigma: fit.cov[(1, 1)].max(0.0).sqrt(),
        n_points: t.len(),
    })
}

/// Fits ln C = ln a − Γt [− t²/T_g²] over every positive point.
pub fn fit_coherence_decay(trace: &CoherenceTrace, form: DecayForm) -> Result<DecayFit> {
    let (t, y, s) = usable(trace, f64::NEG_INFINITY);
    let (degree, need) = match form {
        DecayForm::Exponential => (1, 3),
        DecayForm::ExpTimesGaussian => (2, 4),
    };
    if t.len() < need {
        return Err(Error::InsufficientData(format!(
            "{form:?} fit needs at least {need} positive points, have {}",
            t.len()
        )));
    }
    let weighted = s.iter().all(|&v| v > 0.0);
    let fit = poly_fit(&t, &y, weighted.then_some(&s[..]), degree)?;
    let sd = |i: usize| fit.cov[(i, i)].max(0.0).sqrt();
    let amplitude = fit.coef[0].exp();
    let (gaussian_rate, gaussian_rate_sigma) = if degree == 2 { (-fit.coef[2], sd(2)) } else { (0.0, 0.0) };
    Ok(DecayFit {
        amplitude,
        amplitude_sigma: amplitude * sd(0),
        gamma: -fit.coef[1],
        gamma_sigma: sd(1),
        gaussian_rate,
        gaussian_rate_sigma,
        n_points: t.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoherencePoint, ResonatorQubitParams, Route};

    fn trace(f: impl Fn(f64) -> f64, ts: &[f64], err: f64) -> CoherenceTrace {
        CoherenceTrace {
            points: ts
                .iter()
                .map(|&t| CoherencePoint { t_cpmg: t, coherence: f(t), std_err: err })
                .collect(),
            route: Route::Analytic,
            dt: 1e-7,
            params: ResonatorQubitParams::resonant(1.0 / 19.4e-9, 1e8).unwrap(),
            seed: None,
        }
    }

    #[test]
    fn exact_exponential() {
        let ts = [1e-6, 3e-6, 5e-6, 7e-6, 9e-6];
        let tr = trace(|t| (-t / 10e-6).exp(), &ts, 0.0);
        let r = extract_rate(&tr, None).unwrap();
        assert!((r.gamma - 1e5).abs() < 1e-9 * 1e5);
        assert!(r.sigma < 1e-6);
        assert_eq!(r.n_points, 5);
    }

    #[test]
    fn constant_trace_has_zero_rate() {
        let ts = [1e-6, 2e-6, 3e-6, 4e-6];
        let r = extract_rate(&trace(|_| 1.0, &ts, 0.0), None).unwrap();
        assert!(r.gamma.abs() < 1e-9);
    }

    #[test]
    fn insufficient_and_nonpositive_points() {
        let ts = [1e-6, 2e-6, 3e-6, 4e-6];
        let tr = trace(|t| if t > 2.5e-6 { 0.0 } else { 0.5 }, &ts, 0.0);
        assert!(matches!(extract_rate(&tr, None), Err(Error::InsufficientData(_))));
        // t_min removes early points
        let tr = trace(|t| (-t * 1e5).exp(), &ts, 0.0);
        assert!(extract_rate(&tr, Some(2.5e-6)).is_err());
        assert!(extract_rate(&tr, Some(1.5e-6)).is_ok());
    }

    #[test]
    fn weighted_sigma_matches_textbook() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let tr = trace(|t| (-0.2 * t).exp(), &ts, 0.0);
        let mut tr_w = tr.clone();
        for p in &mut tr_w.points {
            p.std_err = 0.01 * p.coherence;
        }
        let r = extract_rate(&tr_w, Some(0.0)).unwrap();
        // σ_slope = σ/√Σ(t − t̄)² with σ = 0.01 and Σ(t − t̄)² = 5
        assert!((r.sigma - 0.01 / 5f64.sqrt()).abs() < 1e-12);
        assert!((r.gamma - 0.2).abs() < 1e-12);
    }

    #[test]
    fn exponential_form_equals_extract_rate() {
        let ts: Vec<f64> = (1..=8).map(|k| k as f64 * 1e-6).collect();
        let tr = trace(|t| 0.97 * (-t * 3e4).exp() * (1.0 + 0.01 * (t * 1e6).sin()), &ts, 0.0);
        let a = extract_rate(&tr, Some(0.0)).unwrap();
        let b = fit_coherence_decay(&tr, DecayForm::Exponential).unwrap();
        assert!((a.gamma - b.gamma).abs() < 1e-12 * a.gamma.abs());
        assert!((a.sigma - b.gamma_sigma).abs() < 1e-9 * a.sigma);
    }

    #[test]
    fn gaussian_and_exponential_shapes() {
        let ts: Vec<f64> = (0..10).map(|k| k as f64 * 2e-6).collect();
        let g = fit_coherence_decay(&trace(|t| (-(t / 10e-6).powi(2)).exp(), &ts, 0.0), DecayForm::ExpTimesGaussian)
            .unwrap();
        assert!(g.gamma.abs() < 1e-6);
        assert!((g.t_gauss().unwrap() - 10e-6).abs() < 1e-12);
        assert!((g.amplitude - 1.0).abs() < 1e-12);

        let e = fit_coherence_decay(&trace(|t| 0.9 * (-t * 5e4).exp(), &ts, 0.0), DecayForm::ExpTimesGaussian)
            .unwrap();
        assert!(e.gaussian_rate.abs() < 1e-3);
        assert!((e.gamma - 5e4).abs() < 1e-6 * 5e4);
        let few = trace(|t| (-t).exp(), &ts[..3], 0.0);
        assert!(fit_coherence_decay(&few, DecayForm::ExpTimesGaussian).is_err());
    }
}
