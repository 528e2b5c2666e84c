//! Command-line front end: `rates`, `simulate`, `fit`, `calibrate`, `synth`
//! and `compare`.
//!
//! Exit codes: 0 success, 1 comparison outside `--tolerance`, 2 configuration
//! or input error, 3 convergence failure, 4 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    gamma_coherent, gamma_coherent_detuned, gamma_filterfunction, gamma_thermal, gamma_thermal_moderate, NoiseKind,
};
use crate::decay::extract_rate;
use crate::error::{Error, Result};
use crate::fitting::{
    bootstrap_uncertainties, calibrate_population_vs_power, fit_rate_curves, standard_frequency_grid,
    synthesize_rate_curve, BootstrapResult, CalibrationKind, FitModelSpec, FitReport, ModelKind, NoiseModel,
    SyntheticTruth, Weighting,
};
use crate::io::{
    read_csv, read_dataset, read_rate_csv, to_json_string, write_dataset_csv, write_json, write_rate_csv,
    write_trace_csv, SCHEMA_VERSION,
};
use crate::lindblad::{cpmg_experiment, FockConfig};
use crate::model::{drive_amplitude_for_population, CpmgSchedule, DriveSpec, RateCurve, RatePoint, ResonatorQubitParams};
use crate::trajectory::{default_n_list, run_ensemble, TrajectoryConfig};
use crate::units::{interpulse_period, mhz_to_angular, ns_to_s, per_us_to_per_s};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TOLERANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const THREADS_ENV: &str = "PHOTON_DEPHASING_THREADS";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Convergence { .. } | Error::Solver { .. } => EXIT_CONVERGENCE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

// ---------------------------------------------------------------------------
// configuration file

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub resonator: ResonatorConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub rates: Option<RatesConfig>,
    pub simulate: Option<SimulateConfig>,
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorConfig {
    /// Resonator energy decay rate κ in μs⁻¹.
    pub kappa_per_us: f64,
    /// Dispersive shift 2χ/2π in MHz.
    pub two_chi_mhz: f64,
    /// Drive detuning δω_d/2π in MHz.
    #[serde(default)]
    pub detuning_mhz: f64,
}

impl ResonatorConfig {
    pub fn params(&self) -> Result<ResonatorQubitParams> {
        ResonatorQubitParams::new(
            per_us_to_per_s(self.kappa_per_us),
            0.5 * mhz_to_angular(self.two_chi_mhz),
            mhz_to_angular(self.detuning_mhz),
        )
        .map_err(|e| Error::config(format!("[resonator]: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Sequence-frequency grid: an explicit list, a start/stop/points range, or
/// the default 0.5 to 12.5 MHz in 0.5 MHz steps.
#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub f_s_mhz: Option<Vec<f64>>,
    pub start_mhz: Option<f64>,
    pub stop_mhz: Option<f64>,
    pub points: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridConfig {
    /// Grid in Hz.
    pub fn frequencies(&self) -> Result<Vec<f64>> {
        let range = (self.start_mhz, self.stop_mhz, self.points);
        let mhz = match (&self.f_s_mhz, range) {
            (Some(_), (Some(_), _, _) | (_, Some(_), _) | (_, _, Some(_))) => {
                return Err(Error::config("[grid]: give either f_s_mhz or start_mhz/stop_mhz/points"))
            }
            (Some(list), _) => list.clone(),
            (None, (Some(a), Some(b), Some(n))) => {
                if n < 2 {
                    return Err(Error::config("[grid]: points must be at least 2"));
                }
                if !(a > 0.0 && b > a) {
                    return Err(Error::config("[grid]: need 0 < start_mhz < stop_mhz"));
                }
                let u = |k: usize| k as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Linear => (0..n).map(|k| a + (b - a) * u(k)).collect(),
                    Spacing::Log => (0..n).map(|k| a * (b / a).powf(u(k))).collect(),
                }
            }
            (None, (None, None, None)) => return Ok(standard_frequency_grid()),
            _ => return Err(Error::config("[grid]: start_mhz, stop_mhz and points go together")),
        };
        if mhz.is_empty() {
            return Err(Error::config("[grid]: empty frequency list"));
        }
        if let Some(bad) = mhz.iter().find(|f| !(**f > 0.0) || !f.is_finite()) {
            return Err(Error::config(format!("[grid]: frequency {bad} MHz must be positive")));
        }
        Ok(mhz.iter().map(|f| f * 1e6).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Thermal,
    Coherent,
    Detuned,
    Moderate,
    Filter,
}

impl Formula {
    pub const ALL: [Formula; 5] = [
        Formula::Thermal,
        Formula::Coherent,
        Formula::Detuned,
        Formula::Moderate,
        Formula::Filter,
    ];

    fn name(self) -> &'static str {
        match self {
            Formula::Thermal => "thermal",
            Formula::Coherent => "coherent",
            Formula::Detuned => "detuned",
            Formula::Moderate => "moderate",
            Formula::Filter => "filter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterNoise {
    #[default]
    Thermal,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default = "all_formulas")]
    pub formulas: Vec<Formula>,
    pub populations: Vec<f64>,
    #[serde(default)]
    pub filter_noise: FilterNoise,
}

fn all_formulas() -> Vec<Formula> {
    Formula::ALL.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteChoice {
    Mc,
    Lindblad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveChoice {
    Thermal,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub route: RouteChoice,
    pub drive: DriveChoice,
    pub population: f64,
    #[serde(default)]
    pub pulse_duration_ns: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_n_fock")]
    pub n_fock: usize,
    /// Pulse counts sampled at each grid point; defaults to the quasi-steady window.
    pub n_pulses: Option<Vec<usize>>,
}

fn default_ensemble() -> usize {
    10_000
}

fn default_n_fock() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub model: ModelKind,
    pub populations: Vec<f64>,
    pub pedestal_per_us: f64,
    #[serde(default)]
    pub ambient: f64,
    #[serde(default)]
    pub noise_sigma_per_s: f64,
    #[serde(default)]
    pub noise_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn check_populations(section: &str, pops: &[f64]) -> Result<()> {
    if pops.is_empty() {
        return Err(Error::config(format!("[{section}]: populations must not be empty")));
    }
    if let Some(p) = pops.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::config(format!("[{section}]: population {p} must be non-negative")));
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML; syntax and unknown-key errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::io::at(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.resonator.params()?;
        let grid = self.grid.frequencies()?;
        if let Some(r) = &self.rates {
            check_populations("rates", &r.populations)?;
            if r.formulas.is_empty() {
                return Err(Error::config("[rates]: formulas must not be empty"));
            }
        }
        if let Some(s) = &self.simulate {
            check_populations("simulate", &[s.population])?;
            if !(s.pulse_duration_ns >= 0.0) || !s.pulse_duration_ns.is_finite() {
                return Err(Error::config("[simulate]: pulse_duration_ns must be non-negative"));
            }
            if s.route == RouteChoice::Mc && s.pulse_duration_ns > 0.0 {
                return Err(Error::config("[simulate]: the mc route supports instantaneous pulses only"));
            }
            if s.route == RouteChoice::Mc && s.ensemble == 0 {
                return Err(Error::config("[simulate]: ensemble must be positive"));
            }
            let tau = ns_to_s(s.pulse_duration_ns);
            if let Some(f) = grid.iter().find(|&&f| tau >= interpulse_period(f)) {
                return Err(Error::config(format!(
                    "[simulate]: pulse duration {} ns does not fit the interpulse period at f_s = {} MHz",
                    s.pulse_duration_ns,
                    f / 1e6
                )));
            }
            if let Some(ns) = &s.n_pulses {
                if ns.len() < 3 || ns.contains(&0) {
                    return Err(Error::config("[simulate]: n_pulses needs at least three positive counts"));
                }
            }
        }
        if let Some(s) = &self.synth {
            check_populations("synth", &s.populations)?;
            if s.noise_sigma_per_s < 0.0 || s.noise_relative < 0.0 {
                return Err(Error::config("[synth]: noise levels must be non-negative"));
            }
            if s.noise_sigma_per_s > 0.0 && s.noise_relative > 0.0 {
                return Err(Error::config("[synth]: choose noise_sigma_per_s or noise_relative, not both"));
            }
            if s.ambient != 0.0 && s.model == ModelKind::Thermal {
                return Err(Error::config("[synth]: ambient applies to coherent models only"));
            }
        }
        Ok(())
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref().ok_or_else(|| Error::config(format!("configuration has no [{name}] section")))
    }
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "photon-dephasing", version, about = "CPMG photon shot-noise dephasing rates, simulations and fits")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate closed-form rates on the configured grid.
    Rates(ConfigArgs),
    /// Run the trajectory or master-equation route and extract rates.
    Simulate(ConfigArgs),
    /// Global fit of one or more rate datasets.
    Fit(FitArgs),
    /// Linear population-versus-power calibration from echo rates.
    Calibrate(CalibrateArgs),
    /// Write synthetic rate datasets.
    Synth(ConfigArgs),
    /// Maximum and mean relative deviation between two rate files.
    Compare(CompareArgs),
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ResonatorArgs {
    /// Take resonator parameters from this configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kappa_per_us: Option<f64>,
    #[arg(long)]
    pub two_chi_mhz: Option<f64>,
    #[arg(long)]
    pub detuning_mhz: Option<f64>,
}

impl ResonatorArgs {
    fn params(&self) -> Result<ResonatorQubitParams> {
        let mut r = match &self.config {
            Some(path) => RunConfig::load(path)?.resonator,
            None => match (self.kappa_per_us, self.two_chi_mhz) {
                (Some(k), Some(c)) => ResonatorConfig {
                    kappa_per_us: k,
                    two_chi_mhz: c,
                    detuning_mhz: 0.0,
                },
                _ => return Err(Error::config("give --config or both --kappa-per-us and --two-chi-mhz")),
            },
        };
        if let Some(k) = self.kappa_per_us {
            r.kappa_per_us = k;
        }
        if let Some(c) = self.two_chi_mhz {
            r.two_chi_mhz = c;
        }
        if let Some(d) = self.detuning_mhz {
            r.detuning_mhz = d;
        }
        r.params()
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Thermal,
    Coherent,
    CoherentDetuned,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    pub resonator: ResonatorArgs,
    /// Fit one pedestal per dataset instead of a shared one.
    #[arg(long)]
    pub separate_pedestals: bool,
    /// Hold the pedestal at this rate (s⁻¹).
    #[arg(long)]
    pub fixed_pedestal_per_s: Option<f64>,
    /// Add a common ambient thermal population (coherent models).
    #[arg(long)]
    pub ambient: bool,
    /// Ignore σ columns and weight every point equally.
    #[arg(long)]
    pub unit_weights: bool,
    /// Bootstrap resamples for a cross-check of the uncertainties.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path; printed to stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// CSV or JSON datasets.
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CalibrationArg {
    Thermal,
    Coherent,
}

#[derive(Debug, clap::Args)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub kind: CalibrationArg,
    #[command(flatten)]
    pub resonator: ResonatorArgs,
    /// CSV with header `power,gamma_per_s`.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    pub candidate: PathBuf,
    pub reference: PathBuf,
    /// Exit with status 1 when the maximum relative deviation exceeds this.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Rates(a) => cmd_rates(a).map(|_| EXIT_OK),
        Command::Simulate(a) => cmd_simulate(a).map(|_| EXIT_OK),
        Command::Fit(a) => cmd_fit(a).map(|_| EXIT_OK),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| EXIT_OK),
        Command::Synth(a) => cmd_synth(a).map(|_| EXIT_OK),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn load_config(a: &ConfigArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let dir = a.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(crate::io::at(&dir))?;
    Ok((cfg, dir))
}

fn meta(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn params_meta(p: &ResonatorQubitParams) -> Vec<(&'static str, String)> {
    vec![
        ("kappa_per_s", p.kappa.to_string()),
        ("chi_rad_per_s", p.chi.to_string()),
        ("detuning_rad_per_s", p.delta_omega_d.to_string()),
    ]
}

fn population_tag(n: f64) -> String {
    format!("n{n:e}")
}

fn formula_rate(f: Formula, kind: FilterNoise, dt: f64, n: f64, p: &ResonatorQubitParams) -> Result<f64> {
    let resonant = p.with_detuning(0.0);
    match f {
        Formula::Thermal => Ok(gamma_thermal(dt, n, &resonant)),
        Formula::Coherent => gamma_coherent(dt, n, &resonant),
        Formula::Detuned => {
            let amp = drive_amplitude_for_population(&resonant, n)?;
            Ok(gamma_coherent_detuned(dt, amp.into(), p.delta_omega_d, &resonant))
        }
        Formula::Moderate => gamma_thermal_moderate(dt, n, &resonant).map(|s| s.gamma),
        Formula::Filter => {
            let noise = match kind {
                FilterNoise::Thermal => NoiseKind::Thermal,
                FilterNoise::Coherent => NoiseKind::CoherentResonant,
            };
            Ok(gamma_filterfunction(dt, n, &resonant, noise))
        }
    }
}

pub fn cmd_rates(a: &ConfigArgs) -> Result<Vec<PathBuf>> {
    let (cfg, dir) = load_config(a)?;
    let rc = cfg.section(&cfg.rates, "rates")?;
    let p = cfg.resonator.params()?;
    let grid = cfg.grid.frequencies()?;
    let mut written = Vec::new();
    for &f in &rc.formulas {
        for &n in &rc.populations {
            let rates = grid
                .par_iter()
                .map(|&fs| formula_rate(f, rc.filter_noise, interpulse_period(fs), n, &p).map(|g| (fs, g)))
                .collect::<Result<Vec<_>>>()?;
            let path = dir.join(format!("{}_{}.csv", f.name(), population_tag(n)));
            let mut m = vec![("formula", f.name().to_string()), ("population", n.to_string())];
            m.extend(params_meta(&p));
            write_rate_csv(&path, &rates, &meta(&m))?;
            log::info!("wrote {}", path.display());
            written.push(path);
        }
    }
    Ok(written)
}

pub fn cmd_simulate(a: &ConfigArgs) -> Result<Vec<PathBuf>> {
    let (cfg, dir) = load_config(a)?;
    let sc = cfg.section(&cfg.simulate, "simulate")?;
    let p = cfg.resonator.params()?;
    let grid = cfg.grid.frequencies()?;
    let drive = match sc.drive {
        DriveChoice::Thermal => DriveSpec::thermal(sc.population)?,
        DriveChoice::Coherent => {
            let amp = drive_amplitude_for_population(&p.with_detuning(0.0), sc.population)?;
            DriveSpec::Coherent { f_dc: amp.into() }
        }
    };
    let tau = ns_to_s(sc.pulse_duration_ns);
    let schedule = |dt: f64| {
        if tau > 0.0 {
            CpmgSchedule::raised_cosine(1, dt, tau)
        } else {
            CpmgSchedule::instantaneous(1, dt)
        }
    };
    let n_list = |dt: f64| sc.n_pulses.clone().unwrap_or_else(|| default_n_list(p.kappa, dt));

    let mut written = Vec::new();
    let mut points = Vec::with_capacity(grid.len());
    let results: Vec<_> = match sc.route {
        RouteChoice::Mc => grid
            .iter()
            .enumerate()
            .map(|(k, &fs)| {
                let dt = interpulse_period(fs);
                let seed = cfg.seed.wrapping_add(k as u64);
                let tc = TrajectoryConfig::cpmg(&schedule(dt)?, &n_list(dt), &p, sc.ensemble, seed)?;
                let run = run_ensemble(&p, &drive, &tc)?;
                let rate = run.rate(dt, None)?;
                Ok((run.trace(dt), rate))
            })
            .collect::<Result<_>>()?,
        RouteChoice::Lindblad => {
            let fock = FockConfig::default().with_n_fock(sc.n_fock);
            grid.par_iter()
                .map(|&fs| {
                    let dt = interpulse_period(fs);
                    let trace = cpmg_experiment(&p, &drive, &schedule(dt)?, &n_list(dt), &fock)?;
                    let rate = extract_rate(&trace, Some(0.0))?;
                    Ok((trace, rate))
                })
                .collect::<Result<_>>()?
        }
    };
    let route = match sc.route {
        RouteChoice::Mc => "mc",
        RouteChoice::Lindblad => "lindblad",
    };
    let mut base = vec![
        ("route", route.to_string()),
        ("population", sc.population.to_string()),
        ("pulse_duration_s", tau.to_string()),
    ];
    base.extend(params_meta(&p));
    if sc.route == RouteChoice::Mc {
        base.push(("ensemble", sc.ensemble.to_string()));
        base.push(("seed", cfg.seed.to_string()));
    } else {
        base.push(("n_fock", sc.n_fock.to_string()));
    }
    for (k, ((trace, rate), &fs)) in results.iter().zip(&grid).enumerate() {
        let path = dir.join(format!("trace_{k:03}.csv"));
        let mut m = base.clone();
        m.push(("f_s_hz", fs.to_string()));
        write_trace_csv(&path, trace, &meta(&m))?;
        written.push(path);
        points.push(RatePoint {
            f_s: fs,
            gamma2: rate.gamma,
            sigma: rate.sigma,
        });
    }
    let rates: Vec<(f64, f64)> = points.iter().map(|pt| (pt.f_s, pt.gamma2)).collect();
    let path = dir.join("rates.csv");
    write_rate_csv(&path, &rates, &meta(&base))?;
    written.push(path);
    let curve = RateCurve::new(route, points)?;
    let path = dir.join("rate_curve.csv");
    write_dataset_csv(&path, &curve, &meta(&base))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct FitOutput {
    #[serde(flatten)]
    report: FitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapResult>,
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let params = a.resonator.params()?;
    let datasets = a.datasets.iter().map(|p| read_dataset(p)).collect::<Result<Vec<_>>>()?;
    let kind = match a.model {
        ModelArg::Thermal => ModelKind::Thermal,
        ModelArg::Coherent => ModelKind::Coherent,
        ModelArg::CoherentDetuned => ModelKind::CoherentDetuned,
    };
    let mut spec = FitModelSpec::new(kind, params).with_shared_pedestal(!a.separate_pedestals);
    if let Some(v) = a.fixed_pedestal_per_s {
        spec = spec.with_fixed_pedestal(v);
    }
    if a.ambient {
        spec = spec.with_ambient();
    }
    if a.unit_weights {
        spec = spec.with_weighting(Weighting::Unit);
    }
    let report = fit_rate_curves(&datasets, &spec)?;
    let bootstrap = match a.bootstrap {
        Some(n) => Some(bootstrap_uncertainties(&datasets, &spec, n, a.seed)?),
        None => None,
    };
    let out = FitOutput { report, bootstrap };
    match &a.out {
        Some(path) => write_json(path, &out),
        None => {
            println!("{}", to_json_string(&out)?);
            Ok(())
        }
    }
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let params = a.resonator.params()?;
    let table = read_csv(&a.input)?;
    if table.header != ["power", "gamma_per_s"] {
        return Err(Error::Input(format!(
            "{}: expected header 'power,gamma_per_s'",
            a.input.display()
        )));
    }
    let data: Vec<(f64, f64)> = table.rows.iter().map(|r| (r[0], r[1])).collect();
    let kind = match a.kind {
        CalibrationArg::Thermal => CalibrationKind::Thermal,
        CalibrationArg::Coherent => CalibrationKind::Coherent,
    };
    let result = calibrate_population_vs_power(&data, kind, &params)?;
    match &a.out {
        Some(path) => write_json(path, &result),
        None => {
            println!("{}", to_json_string(&result)?);
            Ok(())
        }
    }
}

pub fn cmd_synth(a: &ConfigArgs) -> Result<Vec<PathBuf>> {
    let (cfg, dir) = load_config(a)?;
    let sc = cfg.section(&cfg.synth, "synth")?;
    let p = cfg.resonator.params()?;
    let grid = cfg.grid.frequencies()?;
    let noise = if sc.noise_sigma_per_s > 0.0 {
        NoiseModel::Absolute { sigma: sc.noise_sigma_per_s }
    } else if sc.noise_relative > 0.0 {
        NoiseModel::Relative { fraction: sc.noise_relative }
    } else {
        NoiseModel::None
    };
    let mut written = Vec::new();
    let mut sets = Vec::new();
    for (k, &n) in sc.populations.iter().enumerate() {
        let truth = SyntheticTruth {
            kind: sc.model,
            population: n,
            pedestal: per_us_to_per_s(sc.pedestal_per_us),
            ambient: sc.ambient,
        };
        let seed = cfg.seed.wrapping_add(k as u64);
        let ds = synthesize_rate_curve(&format!("synth_{k}"), &truth, &p, &grid, noise, seed)?;
        let path = dir.join(format!("synth_{k}.csv"));
        let m = [
            ("seed", seed.to_string()),
            ("truth_population", n.to_string()),
            ("truth_pedestal_per_s", truth.pedestal.to_string()),
            ("truth_ambient", truth.ambient.to_string()),
        ];
        write_dataset_csv(&path, &ds.curve, &meta(&m))?;
        written.push(path);
        sets.push(ds);
    }
    #[derive(Serialize)]
    struct Truths<'a> {
        schema_version: u32,
        params: ResonatorQubitParams,
        datasets: &'a [crate::fitting::SyntheticDataset],
    }
    let path = dir.join("truth.json");
    write_json(
        &path,
        &Truths {
            schema_version: SCHEMA_VERSION,
            params: p,
            datasets: &sets,
        },
    )?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub n_points: usize,
    pub max_relative_deviation: f64,
    pub mean_relative_deviation: f64,
    pub worst_f_s_hz: f64,
}

/// Relative deviation of `candidate` from `reference` on a shared grid.
/// Points where both rates vanish count as agreeing exactly.
pub fn compare_rates(candidate: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<Comparison> {
    if candidate.is_empty() {
        return Err(Error::Input("nothing to compare".into()));
    }
    if candidate.len() != reference.len() {
        return Err(Error::Input(format!(
            "grids differ in length ({} vs {})",
            candidate.len(),
            reference.len()
        )));
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut worst = candidate[0].0;
    for (&(fa, a), &(fb, b)) in candidate.iter().zip(reference) {
        if (fa - fb).abs() > 1e-9 * fb.abs() {
            return Err(Error::Input(format!("grids differ at {fa} Hz vs {fb} Hz")));
        }
        let d = if a == b {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            ((a - b) / b).abs()
        };
        sum += d;
        if d > max {
            max = d;
            worst = fa;
        }
    }
    Ok(Comparison {
        schema_version: SCHEMA_VERSION,
        n_points: candidate.len(),
        max_relative_deviation: max,
        mean_relative_deviation: sum / candidate.len() as f64,
        worst_f_s_hz: worst,
    })
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let c = compare_rates(&read_rate_csv(&a.candidate)?, &read_rate_csv(&a.reference)?)?;
    println!("{}", to_json_string(&c)?);
    Ok(match a.tolerance {
        Some(t) if !(c.max_relative_deviation <= t) => EXIT_TOLERANCE,
        _ => EXIT_OK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "seed = 3\n[resonator]\nkappa_per_us = 51.546\ntwo_chi_mhz = 5.7\n";

    #[test]
    fn parses_minimal_config_with_default_grid() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.grid.frequencies().unwrap().len(), 25);
        let p = cfg.resonator.params().unwrap();
        assert!((p.kappa - 51.546e6).abs() < 1.0);
        assert!((2.0 * p.chi - mhz_to_angular(5.7)).abs() < 1e-6);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let text = format!("{BASE}kappa_typo = 1.0\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("kappa_typo"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let text = format!("{BASE}[simulate]\nroute = \"lindblad\"\ndrive = \"thermal\"\npopulation = 1e-3\npulse_duration_ns = 50\n");
        let msg = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("[simulate]") && msg.contains("does not fit"), "{msg}");
        let text = format!("{BASE}[grid]\nf_s_mhz = [1.0]\npoints = 3\n");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = format!("{BASE}[grid]\nstart_mhz = 0.1\nstop_mhz = 10.0\npoints = 3\nspacing = \"log\"\n");
        let g = RunConfig::from_toml(&text).unwrap().grid.frequencies().unwrap();
        assert!((g[1] - 1e6).abs() < 1e-6);
    }

    #[test]
    fn compare_reports_worst_point() {
        let a = [(1.0, 1.0), (2.0, 2.2), (3.0, 0.0)];
        let b = [(1.0, 1.0), (2.0, 2.0), (3.0, 0.0)];
        let c = compare_rates(&a, &b).unwrap();
        assert!((c.max_relative_deviation - 0.1).abs() < 1e-12);
        assert_eq!(c.worst_f_s_hz, 2.0);
        assert!(compare_rates(&a[..2], &b).is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::config("x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Input("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code(&Error::Convergence {
                iterations: 1,
                best_cost: 0.0,
                best_params: vec![]
            }),
            EXIT_CONVERGENCE
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }
}
