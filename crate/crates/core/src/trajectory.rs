//! Monte-Carlo evaluation of the coherence functional for instantaneous pulses.
//!
//! Each realization integrates the paired resonator amplitudes α₀, α₁ driven
//! by one shared thermal noise, accumulating Φ = ∫2iχ̃α₀α₁* dt. The coherence
//! is |⟨e^Φ⟩| over the ensemble.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decay::{extract_rate, RateEstimate};
use crate::error::{Error, Result};
use crate::model::{
    CoherencePoint, CoherenceTrace, CpmgSchedule, DriveSpec, PulseShape, ResonatorQubitParams, Route,
};

const I: Complex64 = Complex64::new(0.0, 1.0);
const DEFAULT_BATCHES: usize = 32;
/// Relative slack when matching pulse and sample times to the step grid.
const GRID_TOL: f64 = 1e-9;

/// Resonator state when the first π/2-pulse fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// α₀(0) = α₁(0) = 0.
    Vacuum,
    /// A draw from the stationary state with the qubit in |0⟩.
    #[default]
    Steady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub time_step: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    /// π-pulse times; any strictly increasing placement on the step grid.
    pub pulse_times: Vec<f64>,
    /// Times at which coherence and correlator are recorded.
    pub sample_times: Vec<f64>,
    #[serde(default)]
    pub initial: InitialState,
    /// Realizations are split into this many fixed batches for parallel
    /// reduction and jackknife errors.
    pub n_batches: usize,
}

impl TrajectoryConfig {
    /// Largest step Δt/(2m) resolving Δt, 1/κ and 1/|2χ| by at least 20 steps each
    /// and placing pulse centres on the grid.
    pub fn default_step(dt: f64, params: &ResonatorQubitParams) -> f64 {
        let fastest = params.kappa.max(2.0 * params.chi.abs()).max(1.0 / dt);
        let m = (20.0 * fastest * dt).ceil().max(20.0);
        dt / (2.0 * m)
    }

    /// CPMG with pulses at (k + ½)Δt and samples at NΔt for each N in `n_list`.
    pub fn cpmg(
        schedule: &CpmgSchedule,
        n_list: &[usize],
        params: &ResonatorQubitParams,
        ensemble_size: usize,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        if schedule.pulse_shape != PulseShape::Instantaneous {
            return Err(Error::config("the trajectory route supports instantaneous pulses only"));
        }
        let n_max = *n_list.iter().max().ok_or_else(|| Error::config("empty N list"))?;
        let full = schedule.with_pulses(n_max);
        let mut ns = n_list.to_vec();
        ns.sort_unstable();
        ns.dedup();
        Ok(Self {
            time_step: Self::default_step(schedule.dt, params),
            ensemble_size,
            seed,
            pulse_times: full.pulse_centers(),
            sample_times: ns.iter().map(|&n| n as f64 * schedule.dt).collect(),
            initial: InitialState::Steady,
            n_batches: DEFAULT_BATCHES,
        })
    }

    pub fn with_time_step(mut self, h: f64) -> Self {
        self.time_step = h;
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self, params: &ResonatorQubitParams) -> Result<()> {
        params.validate()?;
        let h = self.time_step;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config(format!("time step must be positive, got {h}")));
        }
        if self.ensemble_size == 0 || self.n_batches == 0 {
            return Err(Error::config("ensemble size and batch count must be positive"));
        }
        if self.sample_times.is_empty() {
            return Err(Error::config("no sample times"));
        }
        for (name, times) in [("pulse", &self.pulse_times), ("sample", &self.sample_times)] {
            if times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
                return Err(Error::config(format!("{name} times must be finite and non-negative")));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::config(format!("{name} times must be strictly increasing")));
            }
        }
        let mut limit = 1.0 / params.kappa;
        let mut prev = 0.0;
        for &t in &self.pulse_times {
            if t > prev {
                limit = limit.min(t - prev);
            }
            prev = t;
        }
        if h > limit / 20.0 * (1.0 + GRID_TOL) {
            return Err(Error::config(format!(
                "time step {h:e} exceeds min(pulse spacing, 1/κ)/20 = {:e}",
                limit / 20.0
            )));
        }
        Ok(())
    }
}

/// Exact one-step propagator for both branches at a fixed sign of χ̃.
#[derive(Debug, Clone, Copy)]
pub struct StepKernel {
    pub h: f64,
    pub gamma: [Complex64; 2],
    /// e^(−γ_q h).
    pub decay: [Complex64; 2],
    /// √κF(1 − e^(−γ_q h))/γ_q.
    pub drift: [Complex64; 2],
    kappa_n: f64,
    l00: f64,
    l10: Complex64,
    l11: f64,
}

impl StepKernel {
    pub fn new(params: &ResonatorQubitParams, drive: &DriveSpec, chi_sign: f64, h: f64) -> Self {
        let gamma = [params.branch_decay(0, chi_sign), params.branch_decay(1, chi_sign)];
        Self::from_gamma(gamma, params.kappa, drive, h)
    }

    fn from_gamma(gamma: [Complex64; 2], kappa: f64, drive: &DriveSpec, h: f64) -> Self {
        let src = kappa.sqrt() * drive.f_dc();
        let decay = [(-gamma[0] * h).exp(), (-gamma[1] * h).exp()];
        let drift = [
            src * crate::analytic::one_minus_exp_neg(gamma[0] * h) / gamma[0],
            src * crate::analytic::one_minus_exp_neg(gamma[1] * h) / gamma[1],
        ];
        let kappa_n = kappa * drive.n_th();
        // ⟨η_q η_p*⟩ = κn̄(1 − e^(−(γ_q + γ_p*)h))/(γ_q + γ_p*)
        let cov = |q: usize, p: usize| {
            let g = gamma[q] + gamma[p].conj();
            kappa_n * crate::analytic::one_minus_exp_neg(g * h) / g
        };
        let s00 = cov(0, 0).re;
        let s10 = cov(1, 0);
        let l00 = s00.sqrt();
        let l10 = if l00 > 0.0 { s10 / l00 } else { Complex64::new(0.0, 0.0) };
        let u = kappa * h;
        let w = (gamma[1].im - gamma[0].im) * h;
        let l11 = if kappa_n > 0.0 {
            (kappa_n * h * schur_factor(u, w) * u / -(-u).exp_m1()).max(0.0).sqrt()
        } else {
            0.0
        };
        Self { h, gamma, decay, drift, kappa_n, l00, l10, l11 }
    }

    /// Kernel for half the step with the same rates (Re γ = κ/2).
    pub fn halved(&self, drive: &DriveSpec) -> Self {
        Self::from_gamma(self.gamma, 2.0 * self.gamma[0].re, drive, 0.5 * self.h)
    }

    /// Maps unit circular Gaussians to the correlated increments (η₀, η₁).
    pub fn correlate(&self, z: [Complex64; 2]) -> [Complex64; 2] {
        [self.l00 * z[0], self.l10 * z[0] + self.l11 * z[1]]
    }

    pub fn is_noisy(&self) -> bool {
        self.kappa_n > 0.0
    }

    fn advance(&self, a: [Complex64; 2], eta: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.decay[0] * a[0] + self.drift[0] + eta[0],
            self.decay[1] * a[1] + self.drift[1] + eta[1],
        ]
    }
}

/// x² − 2(1 − cos x) for real x, without cancellation at small x.
fn quartic_cos(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x2 * x2 * (1.0 / 12.0 - x2 * (1.0 / 360.0 - x2 / 20160.0))
    } else {
        let s = (0.5 * x).sin();
        x * x - 4.0 * s * s
    }
}

/// 2(cosh x − 1) − x², without cancellation at small x.
fn quartic_cosh(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x2 * x2 * (1.0 / 12.0 + x2 * (1.0 / 360.0 + x2 / 20160.0))
    } else {
        let s = (0.5 * x).sinh();
        4.0 * s * s - x * x
    }
}

/// |φ(u)|² − |φ(u + iw)|² with φ(z) = (1 − e^(−z))/z.
///
/// This is the Schur complement of the step covariance in units of (κn̄h)²;
/// it vanishes as w² when both branches see nearly the same rotation.
fn schur_factor(u: f64, w: f64) -> f64 {
    let e = (-u).exp();
    let num = w * w * e * quartic_cosh(u) + u * u * e * quartic_cos(w);
    num / (u * u * (u * u + w * w))
}

/// Source of the shared thermal noise.
pub trait NoiseStream {
    /// Two independent circular Gaussians with E|z|² = 1.
    fn circular_pair(&mut self) -> [Complex64; 2];

    /// Noise increments (η₀, η₁) for one step of `kernel`.
    fn increments(&mut self, kernel: &StepKernel) -> [Complex64; 2] {
        kernel.correlate(self.circular_pair())
    }
}

/// ChaCha8 stream keyed by (seed, realization index).
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(seed: u64, realization: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(realization);
        Self { rng }
    }
}

impl NoiseStream for RngNoise {
    fn circular_pair(&mut self) -> [Complex64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut n = || -> f64 { StandardNormal.sample(&mut self.rng) };
        let z0 = Complex64::new(n(), n()) * s;
        let z1 = Complex64::new(n(), n()) * s;
        [z0, z1]
    }
}

/// Exponent Φ and α₀α₁* of one realization at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub exponent: Vec<Complex64>,
    pub correlator: Vec<Complex64>,
}

/// Pre-computed grid and kernels shared by all realizations.
pub struct PairIntegrator {
    params: ResonatorQubitParams,
    drive: DriveSpec,
    initial: InitialState,
    kernels: [StepKernel; 2],
    /// Steps after which χ̃ flips.
    flips: Vec<usize>,
    samples: Vec<usize>,
    n_steps: usize,
}

fn grid_index(t: f64, h: f64, what: &str) -> Result<usize> {
    let k = (t / h).round();
    if (k * h - t).abs() > GRID_TOL * t.max(h) {
        return Err(Error::config(format!("{what} time {t:e} is not on the step grid (h = {h:e})")));
    }
    Ok(k as usize)
}

impl PairIntegrator {
    pub fn new(params: &ResonatorQubitParams, drive: &DriveSpec, config: &TrajectoryConfig) -> Result<Self> {
        config.validate(params)?;
        let h = config.time_step;
        let flips = config
            .pulse_times
            .iter()
            .map(|&t| grid_index(t, h, "pulse"))
            .collect::<Result<Vec<_>>>()?;
        let samples = config
            .sample_times
            .iter()
            .map(|&t| grid_index(t, h, "sample"))
            .collect::<Result<Vec<_>>>()?;
        let n_steps = *samples.last().expect("validated non-empty");
        Ok(Self {
            params: *params,
            drive: *drive,
            initial: config.initial,
            kernels: [
                StepKernel::new(params, drive, 1.0, h),
                StepKernel::new(params, drive, -1.0, h),
            ],
            flips,
            samples,
            n_steps,
        })
    }

    /// Amplitudes at t = 0.
    fn initial_amplitudes(&self, noise: &mut dyn NoiseStream) -> [Complex64; 2] {
        match self.initial {
            InitialState::Vacuum => [Complex64::new(0.0, 0.0); 2],
            InitialState::Steady => {
                let g0 = self.params.branch_decay(0, 1.0);
                let mut a = self.params.kappa.sqrt() * self.drive.f_dc() / g0;
                let n = self.drive.n_th();
                if n > 0.0 {
                    a += n.sqrt() * noise.circular_pair()[0];
                }
                [a, a]
            }
        }
    }

    pub fn run(&self, noise: &mut dyn NoiseStream) -> Realization {
        let mut a = self.initial_amplitudes(noise);
        let mut exponent = Vec::with_capacity(self.samples.len());
        let mut correlator = Vec::with_capacity(self.samples.len());
        let mut phi = Complex64::new(0.0, 0.0);
        let mut sign = 0usize;
        let mut next_flip = 0usize;
        let mut next_sample = 0usize;
        let chi = self.params.chi;
        let noisy = self.kernels[0].is_noisy();

        let mut record = |step: usize, a: &[Complex64; 2], phi: Complex64, exponent: &mut Vec<Complex64>| {
            while next_sample < self.samples.len() && self.samples[next_sample] == step {
                exponent.push(phi);
                correlator.push(a[0] * a[1].conj());
                next_sample += 1;
            }
        };

        record(0, &a, phi, &mut exponent);
        for step in 0..self.n_steps {
            while next_flip < self.flips.len() && self.flips[next_flip] == step {
                sign ^= 1;
                next_flip += 1;
            }
            let k = &self.kernels[sign];
            let eta = if noisy { noise.increments(k) } else { [Complex64::new(0.0, 0.0); 2] };
            let next = k.advance(a, eta);
            let chi_t = if sign == 0 { chi } else { -chi };
            let f0 = a[0] * a[1].conj();
            let f1 = next[0] * next[1].conj();
            phi += 2.0 * I * chi_t * 0.5 * k.h * (f0 + f1);
            a = next;
            record(step + 1, &a, phi, &mut exponent);
        }
        Realization { exponent, correlator }
    }
}

/// Integrates one realization of the paired trajectories.
pub fn integrate_pair(
    params: &ResonatorQubitParams,
    drive: &DriveSpec,
    config: &TrajectoryConfig,
    noise: &mut dyn NoiseStream,
) -> Result<Realization> {
    Ok(PairIntegrator::new(params, drive, config)?.run(noise))
}

/// Raw sums over one batch, per sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSums {
    pub count: usize,
    pub z: Vec<Complex64>,
    pub z_abs2: Vec<f64>,
    pub z_sq: Vec<Complex64>,
    pub corr: Vec<Complex64>,
    pub corr_abs2: Vec<f64>,
}

impl BatchSums {
    fn zeros(m: usize) -> Self {
        let c = Complex64::new(0.0, 0.0);
        Self {
            count: 0,
            z: vec![c; m],
            z_abs2: vec![0.0; m],
            z_sq: vec![c; m],
            corr: vec![c; m],
            corr_abs2: vec![0.0; m],
        }
    }

    fn push(&mut self, r: &Realization) {
        self.count += 1;
        for (i, (&phi, &c)) in r.exponent.iter().zip(&r.correlator).enumerate() {
            let z = phi.exp();
            self.z[i] += z;
            self.z_abs2[i] += z.norm_sqr();
            self.z_sq[i] += z * z;
            self.corr[i] += c;
            self.corr_abs2[i] += c.norm_sqr();
        }
    }

    fn add(&mut self, o: &BatchSums) {
        self.count += o.count;
        for i in 0..self.z.len() {
            self.z[i] += o.z[i];
            self.z_abs2[i] += o.z_abs2[i];
            self.z_sq[i] += o.z_sq[i];
            self.corr[i] += o.corr[i];
            self.corr_abs2[i] += o.corr_abs2[i];
        }
    }
}

/// Ensemble statistics at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub t: f64,
    pub coherence: f64,
    pub std_error: f64,
    /// arg⟨e^Φ⟩.
    pub phase: f64,
    /// ⟨α₀α₁*⟩.
    pub correlator: Complex64,
    /// Standard error of each component of `correlator`.
    pub correlator_std_error: f64,
}

/// Batched ensemble output; batches are kept for jackknife resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub sample_times: Vec<f64>,
    pub batches: Vec<BatchSums>,
    pub seed: u64,
    pub params: ResonatorQubitParams,
}

impl EnsembleRun {
    fn stats(&self, total: &BatchSums) -> Vec<EnsembleResult> {
        let n = total.count as f64;
        self.sample_times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let m = total.z[i] / n;
                let c = m.norm();
                let phase = m.arg();
                let rot = Complex64::from_polar(1.0, -2.0 * phase);
                // variance of Re(Z e^(−iφ)), the component along the mean
                let second = 0.5 * (total.z_abs2[i] / n + (total.z_sq[i] / n * rot).re);
                let std_error = if total.count > 1 {
                    ((second - c * c).max(0.0) / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                let a = total.corr[i] / n;
                let corr_se = if total.count > 1 {
                    ((total.corr_abs2[i] / n - a.norm_sqr()).max(0.0) / (2.0 * (n - 1.0))).sqrt()
                } else {
                    0.0
                };
                EnsembleResult {
                    t,
                    coherence: c,
                    std_error,
                    phase,
                    correlator: a,
                    correlator_std_error: corr_se,
                }
            })
            .collect()
    }

    fn combined(&self, skip: Option<usize>) -> BatchSums {
        let mut total = BatchSums::zeros(self.sample_times.len());
        for (b, s) in self.batches.iter().enumerate() {
            if Some(b) != skip {
                total.add(s);
            }
        }
        total
    }

    pub fn results(&self) -> Vec<EnsembleResult> {
        self.stats(&self.combined(None))
    }

    pub fn ensemble_size(&self) -> usize {
        self.batches.iter().map(|b| b.count).sum()
    }

    fn trace_from(&self, results: &[EnsembleResult], dt: f64) -> CoherenceTrace {
        CoherenceTrace {
            points: results
                .iter()
                .filter(|r| r.t > 0.0)
                .map(|r| CoherencePoint { t_cpmg: r.t, coherence: r.coherence, std_err: r.std_error })
                .collect(),
            route: Route::Trajectory,
            dt,
            params: self.params,
            seed: Some(self.seed),
        }
    }

    pub fn trace(&self, dt: f64) -> CoherenceTrace {
        self.trace_from(&self.results(), dt)
    }

    /// Decay rate from the full ensemble with a delete-one-batch jackknife error.
    ///
    /// Sample times are strongly correlated within a realization, so the
    /// regression error alone understates the spread.
    pub fn rate(&self, dt: f64, t_min: Option<f64>) -> Result<RateEstimate> {
        let full = extract_rate(&self.trace(dt), t_min)?;
        let b = self.batches.len();
        if b < 2 {
            return Ok(RateEstimate { sigma: 0.0, ..full });
        }
        let mut loo = Vec::with_capacity(b);
        for skip in 0..b {
            let res = self.stats(&self.combined(Some(skip)));
            loo.push(extract_rate(&self.trace_from(&res, dt), t_min)?.gamma);
        }
        let mean = loo.iter().sum::<f64>() / b as f64;
        let var = loo.iter().map(|g| (g - mean).powi(2)).sum::<f64>() * (b as f64 - 1.0) / b as f64;
        Ok(RateEstimate { sigma: var.sqrt(), ..full })
    }
}

/// Runs the ensemble in fixed batches; the reduction order is independent of
/// the thread count, so results are bit-identical across runs.
pub fn run_ensemble(params: &ResonatorQubitParams, drive: &DriveSpec, config: &TrajectoryConfig) -> Result<EnsembleRun> {
    let integ = PairIntegrator::new(params, drive, config)?;
    let m = config.sample_times.len();
    let deterministic = drive.is_deterministic();
    let size = if deterministic { 1 } else { config.ensemble_size };
    let n_batches = config.n_batches.min(size);
    let batches: Vec<BatchSums> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * size / n_batches;
            let hi = (b + 1) * size / n_batches;
            let mut sums = BatchSums::zeros(m);
            for r in lo..hi {
                let mut noise = RngNoise::new(config.seed, r as u64);
                sums.push(&integ.run(&mut noise));
            }
            sums
        })
        .collect();
    Ok(EnsembleRun {
        sample_times: config.sample_times.clone(),
        batches,
        seed: config.seed,
        params: *params,
    })
}

/// C(NΔt) for each N in `n_list` from one long CPMG run.
pub fn coherence_curve(
    params: &ResonatorQubitParams,
    drive: &DriveSpec,
    schedule: &CpmgSchedule,
    n_list: &[usize],
    ensemble_size: usize,
    seed: u64,
) -> Result<CoherenceTrace> {
    let config = TrajectoryConfig::cpmg(schedule, n_list, params, ensemble_size, seed)?;
    Ok(run_ensemble(params, drive, &config)?.trace(schedule.dt))
}

/// Pulse counts N with κNΔt spanning [4, 12] (at least three values).
pub fn default_n_list(kappa: f64, dt: f64) -> Vec<usize> {
    let kdt = kappa * dt;
    let n_min = ((4.0 / kdt).ceil() as usize).max(1);
    let n_max = ((12.0 / kdt).ceil() as usize).max(n_min + 2);
    (n_min..=n_max).collect()
}
