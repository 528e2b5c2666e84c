//! Global fits of CPMG rate curves, echo-rate power calibration and
//! synthetic datasets for closed-loop checks.
//!
//! Every rate model here is linear in its photon population, so each point
//! carries a precomputed unit-population response and the optimizer only
//! ever evaluates cheap affine combinations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{gamma_coherent, gamma_coherent_detuned, gamma_coherent_lowfreq, gamma_lowfreq_thermal, gamma_thermal};
use crate::error::{Error, Result};
use crate::model::{drive_amplitude_for_population, RateCurve, RatePoint, ResonatorQubitParams};
use crate::units::interpulse_period;

pub const FIT_SCHEMA_VERSION: u32 = 1;
pub const BOOTSTRAP_RESAMPLES: usize = 500;
pub const JACOBIAN_RELATIVE_STEP: f64 = 1e-6;

/// Log-spaced starting populations used by the multi-start search.
pub const POPULATION_SEEDS: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Thermal,
    Coherent,
    /// Coherent drive at `fixed_params.delta_omega_d`. The fitted population
    /// is the one the same drive amplitude would produce on resonance.
    CoherentDetuned,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Inverse-variance weights when every point has σ > 0, unit weights otherwise.
    #[default]
    Auto,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitModelSpec {
    pub kind: ModelKind,
    pub shared_pedestal: bool,
    pub fixed_params: ResonatorQubitParams,
    /// Pedestal held at this value (s⁻¹) instead of fitted.
    #[serde(default)]
    pub fixed_pedestal: Option<f64>,
    /// Adds a common ambient thermal population on top of coherent datasets.
    #[serde(default)]
    pub fit_ambient: bool,
    #[serde(default)]
    pub weighting: Weighting,
}

impl FitModelSpec {
    pub fn new(kind: ModelKind, fixed_params: ResonatorQubitParams) -> Self {
        Self {
            kind,
            shared_pedestal: true,
            fixed_params,
            fixed_pedestal: None,
            fit_ambient: false,
            weighting: Weighting::Auto,
        }
    }

    pub fn with_shared_pedestal(mut self, shared: bool) -> Self {
        self.shared_pedestal = shared;
        self
    }

    pub fn with_fixed_pedestal(mut self, pedestal: f64) -> Self {
        self.fixed_pedestal = Some(pedestal);
        self
    }

    pub fn with_ambient(mut self) -> Self {
        self.fit_ambient = true;
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.fixed_params.validate()?;
        if self.kind == ModelKind::Coherent && self.fixed_params.delta_omega_d != 0.0 {
            return Err(Error::config("coherent model needs zero detuning; use coherent_detuned"));
        }
        if self.fit_ambient && self.kind == ModelKind::Thermal {
            return Err(Error::config(
                "an ambient population cannot be separated from a thermal population",
            ));
        }
        if let Some(p) = self.fixed_pedestal {
            if !p.is_finite() {
                return Err(Error::config("fixed pedestal must be finite"));
            }
        }
        Ok(())
    }
}

/// Rate per unit population at sequence frequency `f_s` for the given model.
pub fn unit_response(kind: ModelKind, params: &ResonatorQubitParams, f_s: f64) -> Result<f64> {
    let dt = interpulse_period(f_s);
    match kind {
        ModelKind::Thermal => Ok(gamma_thermal(dt, 1.0, params)),
        ModelKind::Coherent => gamma_coherent(dt, 1.0, params),
        ModelKind::CoherentDetuned => {
            let base = params.with_detuning(0.0);
            let f = drive_amplitude_for_population(&base, 1.0)?;
            Ok(gamma_coherent_detuned(dt, f.into(), params.delta_omega_d, &base))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEstimate {
    pub label: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub dataset: String,
    pub f_s_hz: f64,
    pub observed: f64,
    pub fitted: f64,
    pub residual: f64,
    /// Residual divided by σ under inverse-variance weighting, else equal to `residual`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInfo {
    pub iterations: usize,
    /// Largest cosine between the weighted residual vector and a free Jacobian column.
    pub gradient_norm: f64,
    /// Index into [`POPULATION_SEEDS`] of the winning start.
    pub start_index: usize,
    pub converged_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub populations: Vec<LabeledEstimate>,
    /// One shared entry, one entry per dataset, or the fixed value with σ = 0.
    pub pedestal: Vec<LabeledEstimate>,
    pub ambient: Option<Estimate>,
    pub residuals: Vec<ResidualPoint>,
    pub chi_square_reduced: f64,
    pub convergence: ConvergenceInfo,
    pub parameter_names: Vec<String>,
    pub parameters: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub weighting: Weighting,
    pub n_points: usize,
}

impl FitReport {
    pub fn n_parameters(&self) -> usize {
        self.parameters.len()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.parameters.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum PedestalLayout {
    Fixed(f64),
    Shared,
    PerDataset,
}

#[derive(Debug, Clone)]
struct Row {
    dataset: usize,
    f_s: f64,
    y: f64,
    w: f64,
    g: f64,
    g_amb: f64,
}

#[derive(Debug, Clone)]
struct Problem {
    rows: Vec<Row>,
    n_datasets: usize,
    pedestal: PedestalLayout,
    ambient: bool,
    inverse_variance: bool,
}

impl Problem {
    fn build(datasets: &[RateCurve], spec: &FitModelSpec) -> Result<Self> {
        spec.validate()?;
        if datasets.is_empty() {
            return Err(Error::InsufficientData("no datasets".into()));
        }
        for d in datasets {
            d.validate()?;
            if d.len() < 3 {
                return Err(Error::InsufficientData(format!(
                    "dataset '{}' has {} points, need at least 3",
                    d.label,
                    d.len()
                )));
            }
        }
        let inverse_variance = spec.weighting == Weighting::Auto && datasets.iter().all(|d| d.has_sigmas());
        let mut rows = Vec::new();
        for (k, d) in datasets.iter().enumerate() {
            for p in &d.points {
                let g = unit_response(spec.kind, &spec.fixed_params, p.f_s)?;
                let g_amb = if spec.fit_ambient {
                    gamma_thermal(interpulse_period(p.f_s), 1.0, &spec.fixed_params.with_detuning(0.0))
                } else {
                    0.0
                };
                rows.push(Row {
                    dataset: k,
                    f_s: p.f_s,
                    y: p.gamma2,
                    w: if inverse_variance { 1.0 / p.sigma } else { 1.0 },
                    g,
                    g_amb,
                });
            }
        }
        let pedestal = match (spec.fixed_pedestal, spec.shared_pedestal) {
            (Some(v), _) => PedestalLayout::Fixed(v),
            (None, true) => PedestalLayout::Shared,
            (None, false) => PedestalLayout::PerDataset,
        };
        Ok(Self {
            rows,
            n_datasets: datasets.len(),
            pedestal,
            ambient: spec.fit_ambient,
            inverse_variance,
        })
    }

    fn n_pedestals(&self) -> usize {
        match self.pedestal {
            PedestalLayout::Fixed(_) => 0,
            PedestalLayout::Shared => 1,
            PedestalLayout::PerDataset => self.n_datasets,
        }
    }

    fn n_params(&self) -> usize {
        self.n_datasets + self.n_pedestals() + usize::from(self.ambient)
    }

    fn ambient_index(&self) -> usize {
        self.n_datasets + self.n_pedestals()
    }

    fn lower_bounds(&self) -> Vec<f64> {
        let mut lo = vec![0.0; self.n_datasets];
        lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, self.n_pedestals()));
        if self.ambient {
            lo.push(0.0);
        }
        lo
    }

    fn predict(&self, p: &[f64], row: &Row) -> f64 {
        let ped = match self.pedestal {
            PedestalLayout::Fixed(v) => v,
            PedestalLayout::Shared => p[self.n_datasets],
            PedestalLayout::PerDataset => p[self.n_datasets + row.dataset],
        };
        let amb = if self.ambient { p[self.ambient_index()] * row.g_amb } else { 0.0 };
        p[row.dataset] * row.g + ped + amb
    }

    /// Weighted residuals (observed − model)·w.
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| (r.y - self.predict(p, r)) * r.w))
    }

    /// Central-difference Jacobian of the weighted residuals.
    fn jacobian(&self, p: &[f64], scales: &[f64]) -> DMatrix<f64> {
        let m = self.rows.len();
        let n = p.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut work = p.to_vec();
        for j in 0..n {
            let h = JACOBIAN_RELATIVE_STEP * p[j].abs().max(scales[j]);
            work[j] = p[j] + h;
            let plus = self.residuals(&work);
            work[j] = p[j] - h;
            let minus = self.residuals(&work);
            work[j] = p[j];
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        jac
    }

    /// Magnitudes used for finite-difference steps and the rank test.
    fn scales(&self) -> Vec<f64> {
        let y_scale = self.rows.iter().map(|r| r.y.abs()).fold(0.0, f64::max).max(1.0);
        let mut s = Vec::with_capacity(self.n_params());
        for k in 0..self.n_datasets {
            let g = self.rows.iter().filter(|r| r.dataset == k).map(|r| r.g.abs()).fold(0.0, f64::max);
            s.push(if g > 0.0 { y_scale / g } else { 1.0 });
        }
        s.extend(std::iter::repeat_n(y_scale, self.n_pedestals()));
        if self.ambient {
            let g = self.rows.iter().map(|r| r.g_amb.abs()).fold(0.0, f64::max);
            s.push(if g > 0.0 { y_scale / g } else { 1.0 });
        }
        s
    }

    /// Start point with every population at `n0` and pedestals set to the
    /// weighted mean of what the populations leave unexplained.
    fn start(&self, n0: f64) -> Vec<f64> {
        let mut p = vec![n0; self.n_datasets];
        p.extend(std::iter::repeat_n(0.0, self.n_pedestals()));
        if self.ambient {
            p.push(n0);
        }
        let excess = |r: &Row| r.y - n0 * r.g - if self.ambient { n0 * r.g_amb } else { 0.0 };
        let mean = |rows: &mut dyn Iterator<Item = &Row>| {
            let (s, w) = rows.fold((0.0, 0.0), |(s, w), r| (s + r.w * r.w * excess(r), w + r.w * r.w));
            if w > 0.0 {
                s / w
            } else {
                0.0
            }
        };
        match self.pedestal {
            PedestalLayout::Fixed(_) => {}
            PedestalLayout::Shared => p[self.n_datasets] = mean(&mut self.rows.iter()),
            PedestalLayout::PerDataset => {
                for k in 0..self.n_datasets {
                    p[self.n_datasets + k] = mean(&mut self.rows.iter().filter(|r| r.dataset == k));
                }
            }
        }
        p
    }

    fn check_rank(&self, scales: &[f64]) -> Result<()> {
        let p = self.start(1e-3);
        let jac = self.jacobian(&p, scales);
        let mut normed = jac.clone();
        for j in 0..jac.ncols() {
            let norm = jac.column(j).norm();
            if norm == 0.0 {
                return Err(Error::RankDeficient(format!(
                    "parameter {j} has no influence on any data point"
                )));
            }
            normed.column_mut(j).scale_mut(1.0 / norm);
        }
        let sv = normed.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 1e-9 * max {
            return Err(Error::RankDeficient(format!(
                "design matrix condition {:.1e}; populations and pedestal cannot be separated \
                 (data at too few distinct sequence frequencies?)",
                max / min.max(f64::MIN_POSITIVE)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step tolerance in scaled parameters.
    pub xtol: f64,
    /// Relative cost-reduction tolerance.
    pub ftol: f64,
    /// Orthogonality tolerance between residual and free Jacobian columns.
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-12,
            ftol: 1e-15,
            gtol: 1e-11,
        }
    }
}

#[derive(Debug, Clone)]
struct LmOutcome {
    p: Vec<f64>,
    cost: f64,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

fn orthogonality(jac: &DMatrix<f64>, r: &DVector<f64>, free: &[bool]) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    (0..jac.ncols())
        .filter(|&j| free[j])
        .map(|j| {
            let c = jac.column(j);
            let cn = c.norm();
            if cn == 0.0 {
                0.0
            } else {
                (c.dot(r) / (cn * rn)).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Bound-constrained Levenberg–Marquardt with an active-set projection:
/// parameters sitting on their lower bound with the gradient pushing outward
/// are frozen for the step.
fn levenberg_marquardt(problem: &Problem, p0: &[f64], scales: &[f64], opts: &LmOptions) -> LmOutcome {
    let n = p0.len();
    let lo = problem.lower_bounds();
    let mut p: Vec<f64> = p0.iter().zip(&lo).map(|(v, l)| v.max(*l)).collect();
    let mut r = problem.residuals(&p);
    let mut cost = 0.5 * r.norm_squared();
    let mut mu: Option<f64> = None;
    let mut nu = 2.0;
    let mut gradient_norm = f64::INFINITY;

    for iter in 1..=opts.max_iterations {
        let jac = problem.jacobian(&p, scales);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        // descent direction is −g; a bound is active when it would be crossed
        let free: Vec<bool> = (0..n).map(|j| !(p[j] <= lo[j] && g[j] > 0.0)).collect();
        gradient_norm = orthogonality(&jac, &r, &free);
        if gradient_norm <= opts.gtol || cost == 0.0 {
            return LmOutcome { p, cost, iterations: iter - 1, gradient_norm, converged: true };
        }
        let idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let k = idx.len();
        let a_f = DMatrix::from_fn(k, k, |i, j| a[(idx[i], idx[j])]);
        let g_f = DVector::from_fn(k, |i, _| g[idx[i]]);
        let diag: Vec<f64> = (0..k).map(|i| a_f[(i, i)].max(f64::MIN_POSITIVE)).collect();
        let mut damping = mu.unwrap_or(1e-3);

        loop {
            let mut sys = a_f.clone();
            for i in 0..k {
                sys[(i, i)] += damping * diag[i];
            }
            let Some(step_f) = sys.cholesky().map(|c| c.solve(&(-&g_f))) else {
                damping *= nu;
                nu *= 2.0;
                if damping > 1e300 {
                    return LmOutcome { p, cost, iterations: iter, gradient_norm, converged: false };
                }
                continue;
            };
            let mut trial = p.clone();
            for (i, &j) in idx.iter().enumerate() {
                trial[j] = (p[j] + step_f[i]).max(lo[j]);
            }
            let step = DVector::from_fn(n, |j, _| trial[j] - p[j]);
            let predicted = -(g.dot(&step) + 0.5 * step.dot(&(&a * &step)));
            let r_trial = problem.residuals(&trial);
            let cost_trial = 0.5 * r_trial.norm_squared();
            let actual = cost - cost_trial;
            let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };

            let step_scaled = (0..n).map(|j| (step[j] / scales[j]).powi(2)).sum::<f64>().sqrt();
            let p_scaled = (0..n).map(|j| (p[j] / scales[j]).powi(2)).sum::<f64>().sqrt();

            if rho > 0.0 {
                let small_step = step_scaled <= opts.xtol * (p_scaled + opts.xtol);
                let small_gain = actual <= opts.ftol * cost && predicted <= opts.ftol * cost;
                p = trial;
                r = r_trial;
                cost = cost_trial;
                damping *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                mu = Some(damping);
                if small_step || small_gain {
                    let jac = problem.jacobian(&p, scales);
                    let g = jac.transpose() * &r;
                    let free: Vec<bool> = (0..n).map(|j| !(p[j] <= lo[j] && g[j] > 0.0)).collect();
                    gradient_norm = orthogonality(&jac, &r, &free);
                    return LmOutcome { p, cost, iterations: iter, gradient_norm, converged: true };
                }
                break;
            }
            if step_scaled <= opts.xtol * (p_scaled + opts.xtol) {
                // no representable improvement left along the damped direction
                return LmOutcome { p, cost, iterations: iter, gradient_norm, converged: gradient_norm <= 1e-6 };
            }
            damping *= nu;
            nu *= 2.0;
            if damping > 1e300 {
                return LmOutcome { p, cost, iterations: iter, gradient_norm, converged: false };
            }
        }
    }
    LmOutcome {
        p,
        cost,
        iterations: opts.max_iterations,
        gradient_norm,
        converged: false,
    }
}

/// Weighted global fit of one or more rate curves to `Γ = n·g(f_s) + ΔΓ₂`.
///
/// Deterministic: all starts in [`POPULATION_SEEDS`] run (in parallel) and the
/// lowest cost wins, ties going to the earlier start.
pub fn fit_rate_curves(datasets: &[RateCurve], spec: &FitModelSpec) -> Result<FitReport> {
    fit_rate_curves_with(datasets, spec, &LmOptions::default())
}

pub fn fit_rate_curves_with(datasets: &[RateCurve], spec: &FitModelSpec, opts: &LmOptions) -> Result<FitReport> {
    let problem = Problem::build(datasets, spec)?;
    let n = problem.n_params();
    let m = problem.rows.len();
    if m <= n {
        return Err(Error::InsufficientData(format!(
            "{m} points cannot constrain {n} parameters with residual scatter"
        )));
    }
    let scales = problem.scales();
    problem.check_rank(&scales)?;

    let outcomes: Vec<LmOutcome> = POPULATION_SEEDS
        .par_iter()
        .map(|&n0| levenberg_marquardt(&problem, &problem.start(n0), &scales, opts))
        .collect();

    let pick = |only_converged: bool| {
        let mut best: Option<usize> = None;
        for (i, o) in outcomes.iter().enumerate() {
            if only_converged && !o.converged {
                continue;
            }
            if best.is_none_or(|b| o.cost < outcomes[b].cost) {
                best = Some(i);
            }
        }
        best
    };
    let Some(best) = pick(true) else {
        let b = pick(false).unwrap_or(0);
        return Err(Error::Convergence {
            iterations: outcomes[b].iterations,
            best_cost: outcomes[b].cost,
            best_params: outcomes[b].p.clone(),
        });
    };
    let out = &outcomes[best];
    let converged_starts = outcomes.iter().filter(|o| o.converged).count();

    let dof = (m - n) as f64;
    let chi2_red = 2.0 * out.cost / dof;
    let jac = problem.jacobian(&out.p, &scales);
    let info = jac.transpose() * &jac;
    let inv = info
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("singular curvature matrix at the optimum".into()))?;
    let cov = inv * chi2_red;

    Ok(assemble_report(datasets, spec, &problem, out, &cov, chi2_red, best, converged_starts))
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    datasets: &[RateCurve],
    spec: &FitModelSpec,
    problem: &Problem,
    out: &LmOutcome,
    cov: &DMatrix<f64>,
    chi2_red: f64,
    start_index: usize,
    converged_starts: usize,
) -> FitReport {
    let n = out.p.len();
    let sig = |j: usize| cov[(j, j)].max(0.0).sqrt();
    let nd = problem.n_datasets;

    let mut names: Vec<String> = datasets.iter().map(|d| format!("population[{}]", d.label)).collect();
    let populations = (0..nd)
        .map(|k| LabeledEstimate {
            label: datasets[k].label.clone(),
            value: out.p[k],
            sigma: sig(k),
        })
        .collect();
    let pedestal = match problem.pedestal {
        PedestalLayout::Fixed(v) => vec![LabeledEstimate {
            label: "fixed".into(),
            value: v,
            sigma: 0.0,
        }],
        PedestalLayout::Shared => {
            names.push("pedestal".into());
            vec![LabeledEstimate {
                label: "shared".into(),
                value: out.p[nd],
                sigma: sig(nd),
            }]
        }
        PedestalLayout::PerDataset => (0..nd)
            .map(|k| {
                names.push(format!("pedestal[{}]", datasets[k].label));
                LabeledEstimate {
                    label: datasets[k].label.clone(),
                    value: out.p[nd + k],
                    sigma: sig(nd + k),
                }
            })
            .collect(),
    };
    let ambient = problem.ambient.then(|| {
        names.push("ambient_population".into());
        let j = problem.ambient_index();
        Estimate {
            value: out.p[j],
            sigma: sig(j),
        }
    });
    let residuals = problem
        .rows
        .iter()
        .map(|row| {
            let fitted = problem.predict(&out.p, row);
            let residual = row.y - fitted;
            ResidualPoint {
                dataset: datasets[row.dataset].label.clone(),
                f_s_hz: row.f_s,
                observed: row.y,
                fitted,
                residual,
                normalized: if problem.inverse_variance { residual * row.w } else { residual },
            }
        })
        .collect();
    FitReport {
        schema_version: FIT_SCHEMA_VERSION,
        kind: spec.kind,
        populations,
        pedestal,
        ambient,
        residuals,
        chi_square_reduced: chi2_red,
        convergence: ConvergenceInfo {
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            start_index,
            converged_starts,
        },
        parameter_names: names,
        parameters: out.p.clone(),
        covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
        weighting: if problem.inverse_variance { Weighting::Auto } else { Weighting::Unit },
        n_points: problem.rows.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub parameter_names: Vec<String>,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub n_used: usize,
    pub n_failed: usize,
    pub seed: u64,
}

/// Case-resampling bootstrap: points are redrawn with replacement inside each
/// dataset and the fit repeated. Resamples whose fit fails are skipped.
pub fn bootstrap_uncertainties(
    datasets: &[RateCurve],
    spec: &FitModelSpec,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let reference = fit_rate_curves(datasets, spec)?;
    let fits: Vec<Option<Vec<f64>>> = (0..n_resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let resampled: Vec<RateCurve> = datasets
                .iter()
                .map(|d| {
                    let pts = (0..d.len())
                        .map(|_| d.points[rand::Rng::random_range(&mut rng, 0..d.len())])
                        .collect();
                    RateCurve {
                        points: pts,
                        label: d.label.clone(),
                    }
                })
                .collect();
            fit_rate_curves(&resampled, spec).ok().map(|r| r.parameters)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let n_used = ok.len();
    if n_used < 2 {
        return Err(Error::InsufficientData(format!(
            "only {n_used} of {n_resamples} bootstrap resamples could be fitted"
        )));
    }
    let n = reference.parameters.len();
    let means: Vec<f64> = (0..n).map(|j| ok.iter().map(|p| p[j]).sum::<f64>() / n_used as f64).collect();
    let sigmas = (0..n)
        .map(|j| (ok.iter().map(|p| (p[j] - means[j]).powi(2)).sum::<f64>() / (n_used - 1) as f64).sqrt())
        .collect();
    Ok(BootstrapResult {
        parameter_names: reference.parameter_names,
        means,
        sigmas,
        n_used,
        n_failed: n_resamples - n_used,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationKind {
    Thermal,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub schema_version: u32,
    pub kind: CalibrationKind,
    /// Population per unit drive power.
    pub slope: f64,
    /// Standard error; absent when the line passes through exactly two points.
    pub slope_sigma: Option<f64>,
    pub intercept: f64,
    pub intercept_sigma: Option<f64>,
    /// Populations inferred from each echo rate.
    pub populations: Vec<f64>,
    pub powers: Vec<f64>,
}

/// Converts long-Δt echo rates to populations and fits population = a·P + b
/// by ordinary least squares.
pub fn calibrate_population_vs_power(
    echo_rates: &[(f64, f64)],
    kind: CalibrationKind,
    params: &ResonatorQubitParams,
) -> Result<CalibrationResult> {
    params.validate()?;
    if echo_rates.iter().any(|(p, g)| !p.is_finite() || !g.is_finite()) {
        return Err(Error::Input("calibration data must be finite".into()));
    }
    let per_photon = match kind {
        CalibrationKind::Thermal => gamma_lowfreq_thermal(1.0, params),
        CalibrationKind::Coherent => gamma_coherent_lowfreq(1.0, params),
    };
    if per_photon == 0.0 {
        return Err(Error::domain("zero dispersive shift gives no population sensitivity"));
    }
    let x: Vec<f64> = echo_rates.iter().map(|e| e.0).collect();
    let y: Vec<f64> = echo_rates.iter().map(|e| e.1 / per_photon).collect();
    let m = x.len();
    if m < 2 {
        return Err(Error::InsufficientData("calibration needs at least two powers".into()));
    }
    let xm = x.iter().sum::<f64>() / m as f64;
    let ym = y.iter().sum::<f64>() / m as f64;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let scale: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 1e-24 * scale || sxx == 0.0 {
        return Err(Error::RankDeficient("all calibration powers are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let (slope_sigma, intercept_sigma) = if m > 2 {
        let ss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let s2 = ss / (m - 2) as f64;
        (Some((s2 / sxx).sqrt()), Some((s2 * (1.0 / m as f64 + xm * xm / sxx)).sqrt()))
    } else {
        (None, None)
    };
    Ok(CalibrationResult {
        schema_version: FIT_SCHEMA_VERSION,
        kind,
        slope,
        slope_sigma,
        intercept,
        intercept_sigma,
        populations: y,
        powers: x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Constant σ in s⁻¹.
    Absolute { sigma: f64 },
    /// σ proportional to the noiseless rate.
    Relative { fraction: f64 },
}

impl NoiseModel {
    fn sigma(&self, rate: f64) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Absolute { sigma } => sigma,
            NoiseModel::Relative { fraction } => fraction * rate.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub kind: ModelKind,
    pub population: f64,
    /// s⁻¹
    pub pedestal: f64,
    /// Thermal population added on top of a coherent one.
    #[serde(default)]
    pub ambient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub curve: RateCurve,
    pub truth: SyntheticTruth,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// Noiseless model rate for `truth` at each sequence frequency.
pub fn model_rates(truth: &SyntheticTruth, params: &ResonatorQubitParams, f_s_grid: &[f64]) -> Result<Vec<f64>> {
    f_s_grid
        .iter()
        .map(|&f| {
            let mut g = truth.population * unit_response(truth.kind, params, f)? + truth.pedestal;
            if truth.ambient != 0.0 {
                g += gamma_thermal(interpulse_period(f), truth.ambient, &params.with_detuning(0.0));
            }
            Ok(g)
        })
        .collect()
}

/// Model rates plus seeded Gaussian scatter; each point's σ records the noise level.
pub fn synthesize_rate_curve(
    label: &str,
    truth: &SyntheticTruth,
    params: &ResonatorQubitParams,
    f_s_grid: &[f64],
    noise: NoiseModel,
    seed: u64,
) -> Result<SyntheticDataset> {
    if f_s_grid.is_empty() {
        return Err(Error::Input("empty sequence-frequency grid".into()));
    }
    let exact = model_rates(truth, params, f_s_grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let points = f_s_grid
        .iter()
        .zip(&exact)
        .map(|(&f_s, &g)| {
            let sigma = noise.sigma(g);
            RatePoint {
                f_s,
                gamma2: g + sigma * std.sample(&mut rng),
                sigma,
            }
        })
        .collect();
    Ok(SyntheticDataset {
        curve: RateCurve::new(label, points)?,
        truth: *truth,
        noise,
        seed,
    })
}

/// 0.5 to 12.5 MHz in 0.5 MHz steps, in Hz.
pub fn standard_frequency_grid() -> Vec<f64> {
    (1..=25).map(|k| 0.5e6 * k as f64).collect()
}
