//! Acceptance criteria 1 to 10. Each test prints one verdict line; run with
//! `cargo test --release --test acceptance -- --nocapture --test-threads=1`.

use std::cell::RefCell;

use photon_dephasing::analytic::{
    filter_function_integral, gamma_coherent, gamma_filterfunction, gamma_lowfreq_thermal,
    gamma_lowfreq_thermal_exact, gamma_thermal, gamma_thermal_moderate, reduction_factor_coherent,
    reduction_factor_thermal, FilterFunctionSpec, NoiseKind,
};
use photon_dephasing::decay::{extract_rate, fit_coherence_decay, DecayForm};
use photon_dephasing::fitting::{
    calibrate_population_vs_power, fit_rate_curves, standard_frequency_grid, synthesize_rate_curve,
    CalibrationKind, FitModelSpec, ModelKind, NoiseModel, SyntheticTruth,
};
use photon_dephasing::lindblad::{rate_from_lindblad, FockConfig};
use photon_dephasing::model::{CoherenceTrace, CpmgSchedule, DriveSpec, ResonatorQubitParams};
use photon_dephasing::trajectory::{default_n_list, run_ensemble, TrajectoryConfig};
use photon_dephasing::units::{interpulse_period, mhz_to_angular};
use proptest::test_runner::{Config, TestRunner};

fn verdict(id: u32, pass: bool, summary: &str, detail: String) -> bool {
    println!("criterion {id:>2} [{}] {summary}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn baseline() -> ResonatorQubitParams {
    ResonatorQubitParams::resonant(1.0 / 19.4e-9, 0.5 * mhz_to_angular(5.7)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// N values whose t_cpmg covers [from, to]/κ. Coherent transients decay
/// slowly enough that fits need κt ≳ 30 to reach 1e-4 accuracy.
fn window(kappa: f64, dt: f64, from: f64, to: f64) -> Vec<usize> {
    let kdt = kappa * dt;
    let lo = ((from / kdt).ceil() as usize).max(1);
    let hi = ((to / kdt).ceil() as usize).max(lo + 2);
    (lo..=hi).collect()
}

// ---------------------------------------------------------------------------
// 1

struct LimitSweep {
    short: f64,
    long_literal: f64,
    long_asymptote: f64,
    prefactor: f64,
}

fn limit_sweep() -> LimitSweep {
    let worst = RefCell::new(LimitSweep {
        short: 0.0,
        long_literal: 0.0,
        long_asymptote: 0.0,
        prefactor: 0.0,
    });
    let mut runner = TestRunner::new(Config::with_cases(500));
    let strategy = (1e5f64..1e9, 0.01f64..5.0);
    runner
        .run(&strategy, |(kappa, r)| {
            let p = ResonatorQubitParams::resonant(kappa, 0.5 * r * kappa).unwrap();
            let mut w = worst.borrow_mut();
            let at = |kdt: f64| {
                let dt = kdt / kappa;
                [reduction_factor_thermal(dt, &p), reduction_factor_coherent(dt, &p)]
            };
            for v in at(1e-6) {
                w.short = w.short.max(v.abs());
            }
            for v in at(50.0) {
                w.long_literal = w.long_literal.max((v - 1.0).abs());
            }
            for v in at(1e8) {
                w.long_asymptote = w.long_asymptote.max((v - 1.0).abs());
            }
            let exact = gamma_lowfreq_thermal_exact(1e-6, &p);
            w.prefactor = w.prefactor.max(rel(exact, gamma_lowfreq_thermal(1e-6, &p)));
            Ok(())
        })
        .unwrap();
    worst.into_inner()
}

#[test]
fn criterion_01_limit_identities() {
    let w = limit_sweep();
    let attainable = w.short < 1e-6 && w.long_asymptote < 1e-6 && w.prefactor < 1e-6;
    let literal = w.long_literal < 1e-6;
    verdict(
        1,
        attainable && literal,
        "R → 0 at κΔt = 1e-6, R → 1 at κΔt = 50, low-frequency prefactor",
        format!(
            "max|R(1e-6)| = {:.1e}, max|1 − R(50)| = {:.2e} (needs < 1e-6), max|1 − R(1e8)| = {:.1e}, prefactor rel = {:.1e}",
            w.short, w.long_literal, w.long_asymptote, w.prefactor
        ),
    );
    assert!(attainable);
}

/// The κΔt = 50 sub-check as literally stated. R approaches 1 only as
/// 1 − O(1/κΔt), so this fails by about four orders of magnitude.
#[test]
#[ignore = "unattainable as stated: |1 − R(κΔt = 50)| is of order 1e-2"]
fn criterion_01_literal_kappa_dt_50() {
    let w = limit_sweep();
    assert!(w.long_literal < 1e-6, "max |1 − R(50)| = {:.3e}", w.long_literal);
}

// ---------------------------------------------------------------------------
// 2

#[test]
fn criterion_02_coherent_reduction_above_one() {
    let kappa = 1e7;
    let strong = ResonatorQubitParams::resonant(kappa, kappa).unwrap();
    // (2χ/2π)Δt = 1
    let dt = std::f64::consts::PI / strong.chi;
    let r_strong = reduction_factor_coherent(dt, &strong);

    let unit = ResonatorQubitParams::resonant(kappa, 0.5 * kappa).unwrap();
    let mut max = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for k in 0..=200_000 {
        let kdt = 10f64.powf(-3.0 + 7.0 * k as f64 / 200_000.0);
        let v = reduction_factor_coherent(kdt / kappa, &unit);
        if v > max {
            max = v;
            arg = kdt;
        }
    }
    // golden-section refinement around the grid maximum
    let (mut a, mut b) = (arg * 0.999, arg * 1.001);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if reduction_factor_coherent(c / kappa, &unit) > reduction_factor_coherent(d / kappa, &unit) {
            b = d;
        } else {
            a = c;
        }
    }
    max = max.max(reduction_factor_coherent(0.5 * (a + b) / kappa, &unit));
    let pass = r_strong > 1.0 && max <= 1.0 + 1e-9;
    verdict(
        2,
        pass,
        "R_coh > 1 at 2χ/κ = 2, (2χ/2π)Δt = 1; max R_coh ≤ 1 + 1e-9 at 2χ/κ = 1",
        format!("R_coh = {r_strong:.6}; max R_coh(2χ/κ = 1) = {max:.12} at κΔt ≈ {arg:.3}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3

const ROUTE_GRID_MHZ: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 12.5];

#[test]
fn criterion_03_three_route_agreement() {
    let p = baseline();
    let n = 1e-3;
    let thermal = DriveSpec::thermal(n).unwrap();
    let coherent = DriveSpec::coherent_with_population(&p, n).unwrap();
    let fock = FockConfig::default();
    let mut worst_lindblad = 0.0f64;
    let mut worst_mc_sigmas = 0.0f64;
    let mut lines = Vec::new();
    for (k, &f_mhz) in ROUTE_GRID_MHZ.iter().enumerate() {
        let dt = interpulse_period(f_mhz * 1e6);
        let sched = CpmgSchedule::instantaneous(1, dt).unwrap();

        let th_exact = gamma_thermal(dt, n, &p);
        let th_ns = default_n_list(p.kappa, dt);
        let th_lind = rate_from_lindblad(&p, &thermal, &sched, Some(&th_ns), &fock).unwrap().gamma;
        let cfg = TrajectoryConfig::cpmg(&sched, &th_ns, &p, 100_000, 3000 + k as u64).unwrap();
        let th_mc = run_ensemble(&p, &thermal, &cfg).unwrap().rate(dt, None).unwrap();

        let co_exact = gamma_coherent(dt, n, &p).unwrap();
        let co_ns = window(p.kappa, dt, 30.0, 60.0);
        let co_lind = rate_from_lindblad(&p, &coherent, &sched, Some(&co_ns), &fock).unwrap().gamma;
        // the coherent trajectory is deterministic; its error is the step-halving change
        let cfg = TrajectoryConfig::cpmg(&sched, &co_ns, &p, 1, 0).unwrap();
        let t_min = Some(0.0);
        let co_mc = run_ensemble(&p, &coherent, &cfg).unwrap().rate(dt, t_min).unwrap().gamma;
        let half = cfg.clone().with_time_step(0.5 * cfg.time_step);
        let co_mc_half = run_ensemble(&p, &coherent, &half).unwrap().rate(dt, t_min).unwrap().gamma;
        let co_se = (co_mc - co_mc_half).abs();

        worst_lindblad = worst_lindblad.max(rel(th_lind, th_exact)).max(rel(co_lind, co_exact));
        let th_z = (th_mc.gamma - th_exact).abs() / th_mc.sigma;
        let co_z = if co_se > 0.0 { (co_mc - co_exact).abs() / co_se } else { f64::INFINITY };
        worst_mc_sigmas = worst_mc_sigmas.max(th_z).max(co_z);
        lines.push(format!(
            "  f_s = {f_mhz:>4} MHz  thermal: exact {th_exact:.2} lindblad {th_lind:.2} mc {:.2} ± {:.2}  coherent: exact {co_exact:.2} lindblad {co_lind:.2} mc {co_mc:.2} ± {co_se:.1e}",
            th_mc.gamma, th_mc.sigma
        ));
    }
    let pass = worst_lindblad < 0.02 && worst_mc_sigmas < 3.0;
    verdict(
        3,
        pass,
        "analytic vs Lindblad within 2%, analytic vs trajectory within 3 SE",
        format!("worst Lindblad deviation {:.3}%, worst trajectory deviation {worst_mc_sigmas:.2} SE", 100.0 * worst_lindblad),
    );
    for l in lines {
        println!("{l}");
    }
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4

fn finite_pulse_deviation(p: &ResonatorQubitParams, drive: &DriveSpec, coherent: bool, tau: f64, f_s: f64) -> f64 {
    let dt = interpulse_period(f_s);
    let sched = CpmgSchedule::raised_cosine(1, dt, tau).unwrap();
    let (ns, exact) = if coherent {
        (window(p.kappa, dt, 30.0, 60.0), gamma_coherent(dt, 5e-3, p).unwrap())
    } else {
        (default_n_list(p.kappa, dt), gamma_thermal(dt, 5e-3, p))
    };
    let g = rate_from_lindblad(p, drive, &sched, Some(&ns), &FockConfig::default()).unwrap().gamma;
    rel(g, exact)
}

#[test]
fn criterion_04_finite_pulse_deviation() {
    let kappa = 1.0 / 19.4e-9;
    let p = ResonatorQubitParams::resonant(kappa, 1.4 * kappa).unwrap();
    let grid = [2e6, 5e6, 10e6];
    let mut detail = Vec::new();
    let mut pass = true;
    for coherent in [true, false] {
        let drive = if coherent {
            DriveSpec::coherent_with_population(&p, 5e-3).unwrap()
        } else {
            DriveSpec::thermal(5e-3).unwrap()
        };
        let d25: Vec<f64> = grid.iter().map(|&f| finite_pulse_deviation(&p, &drive, coherent, 25e-9, f)).collect();
        let d10 = finite_pulse_deviation(&p, &drive, coherent, 10e-9, 10e6);
        let grows = d25.windows(2).all(|w| w[1] > w[0]);
        let ordered = d10 < d25[2];
        let label = if coherent { "coherent" } else { "thermal" };
        detail.push(format!(
            "{label}: τ = 25 ns deviation {:.2}% / {:.2}% / {:.2}% at 2 / 5 / 10 MHz, τ = 10 ns {:.2}% at 10 MHz",
            100.0 * d25[0],
            100.0 * d25[1],
            100.0 * d25[2],
            100.0 * d10
        ));
        pass &= grows && ordered;
        if coherent {
            pass &= d25[2] > 0.05;
        }
    }
    verdict(
        4,
        pass,
        "finite-pulse deviation grows with f_s, exceeds 5% at 10 MHz (coherent), smaller for τ = 10 ns",
        detail.join("; "),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5

#[test]
fn criterion_05_filter_function_validity() {
    let kappa = 1.0 / 19.4e-9;
    let n = 1e-3;
    let worst = |ratio: f64| {
        let p = ResonatorQubitParams::resonant(kappa, 0.5 * ratio * kappa).unwrap();
        (0..=60)
            .map(|k| {
                let omega = kappa * 10f64.powf(-1.0 + (20f64).log10() * k as f64 / 60.0);
                let f_s = omega / (2.0 * std::f64::consts::PI);
                let dt = interpulse_period(f_s);
                rel(gamma_filterfunction(dt, n, &p, NoiseKind::Thermal), gamma_thermal(dt, n, &p))
            })
            .fold(0.0f64, f64::max)
    };
    let weak = worst(0.05);
    let moderate = worst(0.7);
    let pass = weak < 0.01 && moderate > 0.10;
    verdict(
        5,
        pass,
        "filter function within 1% at 2χ/κ = 0.05, off by > 10% at 2χ/κ = 0.7",
        format!("max deviation {:.3}% at 0.05, {:.1}% at 0.7", 100.0 * weak, 100.0 * moderate),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6

#[test]
fn criterion_06_filter_normalization() {
    let dt = 100e-9;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for n in [1usize, 2, 3, 7, 8, 16] {
        for spec in [FilterFunctionSpec::cpmg(n, dt).unwrap(), FilterFunctionSpec::ramsey(n as f64 * dt).unwrap()] {
            let got = filter_function_integral(&spec, 0.0, f64::INFINITY);
            let want = n as f64 * dt / 4.0;
            let e = rel(got, want);
            worst = worst.max(e);
            detail.push(format!("{:?} N={n}: {:.1e}", spec.sequence_kind, e));
        }
    }
    let pass = worst < 1e-3;
    verdict(
        6,
        pass,
        "∫F dω/2π = NΔt/4 within 0.1%",
        format!("worst relative error {worst:.2e} ({})", detail.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7

/// Earliest t_cpmg (in units of 1/κ) after which |C − a e^(−Γt)| < 1e-2, with
/// (a, Γ) fitted on κt ≥ 15.
fn onset(trace: &CoherenceTrace, kappa: f64) -> (f64, f64) {
    let mut late = trace.clone();
    late.points.retain(|p| p.t_cpmg * kappa >= 15.0);
    let fit = fit_coherence_decay(&late, DecayForm::Exponential).unwrap();
    let resid: Vec<f64> = trace
        .points
        .iter()
        .map(|p| (p.coherence - fit.amplitude * (-fit.gamma * p.t_cpmg).exp()).abs())
        .collect();
    let last_bad = resid.iter().rposition(|r| *r >= 1e-2);
    let t_on = match last_bad {
        None => 0.0,
        Some(i) if i + 1 < trace.points.len() => trace.points[i + 1].t_cpmg * kappa,
        Some(_) => f64::INFINITY,
    };
    (t_on, resid[0])
}

#[test]
fn criterion_07_exponential_onset() {
    let kappa = 1e7;
    let p = ResonatorQubitParams::resonant(kappa, 0.75 * kappa).unwrap();
    let n = 0.01;
    let dt = 0.5 / kappa;
    let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
    let ns: Vec<usize> = (1..=60).collect();

    let cfg = TrajectoryConfig::cpmg(&sched, &ns, &p, 100_000, 77).unwrap();
    let th = run_ensemble(&p, &DriveSpec::thermal(n).unwrap(), &cfg).unwrap().trace(dt);
    let (th_on, th_r0) = onset(&th, kappa);

    let cfg = TrajectoryConfig::cpmg(&sched, &ns, &p, 1, 0).unwrap();
    let co = run_ensemble(&p, &DriveSpec::coherent_with_population(&p, n).unwrap(), &cfg).unwrap().trace(dt);
    let (co_on, co_r0) = onset(&co, kappa);

    let pass = th_on <= 3.0 && co_on <= 6.0;
    verdict(
        7,
        pass,
        "residual from asymptotic exponential < 1e-2 from κt = 3 (thermal) and 6 (coherent)",
        format!(
            "onset κt = {th_on:.1} thermal, {co_on:.1} coherent (residual at first sample {th_r0:.1e} / {co_r0:.1e})"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8

fn recovery_fraction(kind: ModelKind, truths: [f64; 3], pedestal: f64) -> [f64; 4] {
    let p = baseline();
    let grid = standard_frequency_grid();
    let spec = FitModelSpec::new(kind, p);
    let mut hits = [0usize; 4];
    let reps = 100;
    for r in 0..reps {
        let data: Vec<_> = truths
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let t = SyntheticTruth {
                    kind,
                    population: n,
                    pedestal,
                    ambient: 0.0,
                };
                synthesize_rate_curve(&format!("d{k}"), &t, &p, &grid, NoiseModel::Absolute { sigma: 2000.0 }, 10_000 + 8 * r + k as u64)
                    .unwrap()
                    .curve
            })
            .collect();
        let rep = fit_rate_curves(&data, &spec).unwrap();
        let s = rep.sigmas();
        let want = [truths[0], truths[1], truths[2], pedestal];
        for j in 0..4 {
            if (rep.parameters[j] - want[j]).abs() <= 2.0 * s[j] {
                hits[j] += 1;
            }
        }
    }
    hits.map(|h| h as f64 / reps as f64)
}

#[test]
fn criterion_08_fit_recovery() {
    let th = recovery_fraction(ModelKind::Thermal, [1.0e-4, 6.3e-4, 1.15e-3], 1.0 / 101.0e-6);
    let co = recovery_fraction(ModelKind::Coherent, [0.0, 4.9e-4, 1.03e-3], 1.0 / 84.8e-6);
    let worst = th.iter().chain(&co).cloned().fold(1.0, f64::min);
    let pass = worst >= 0.9;
    verdict(
        8,
        pass,
        "every parameter within 2σ in ≥ 90% of 100 replicates",
        format!("thermal {th:?}, coherent {co:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9

#[test]
fn criterion_09_calibration_slopes() {
    let p = baseline();
    let powers = [0.5e-5, 1e-5, 2e-5, 4e-5, 8e-5];
    let mut errs = Vec::new();
    for (kind, slope, per) in [
        (CalibrationKind::Thermal, 18.0, gamma_lowfreq_thermal(1.0, &p)),
        (CalibrationKind::Coherent, 188.0, 2.0 * gamma_lowfreq_thermal(1.0, &p)),
    ] {
        let data: Vec<(f64, f64)> = powers.iter().map(|&w| (w, slope * w * per)).collect();
        let c = calibrate_population_vs_power(&data, kind, &p).unwrap();
        errs.push(rel(c.slope, slope));
    }
    let pass = errs.iter().all(|e| *e < 1e-9);
    verdict(
        9,
        pass,
        "calibration slopes 18 and 188 recovered to 1e-9",
        format!("relative errors {:.1e} (thermal), {:.1e} (coherent)", errs[0], errs[1]),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 10

#[test]
fn criterion_10_moderate_population() {
    let p = ResonatorQubitParams::resonant(1.0 / 19e-9, 0.5 * mhz_to_angular(5.7)).unwrap();
    let grid: Vec<f64> = (0..=40).map(|k| 1e5 * 125f64.powf(k as f64 / 40.0)).collect();
    let dev = |n: f64| -> Vec<f64> {
        grid.iter()
            .map(|&f| {
                let dt = interpulse_period(f);
                let m = gamma_thermal_moderate(dt, n, &p).unwrap().gamma;
                (m - gamma_thermal(dt, n, &p)) / gamma_thermal(dt, n, &p)
            })
            .collect()
    };
    let small = dev(1e-3).iter().map(|d| d.abs()).fold(0.0, f64::max);
    let large = dev(0.1);
    let low_f = large[0];
    let spread = large.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let pass = small < 0.01 && low_f < 0.0 && spread > 0.01;
    verdict(
        10,
        pass,
        "moderate solution matches linear formula at n = 1e-3, lies below it at low f_s for n = 0.1",
        format!(
            "max deviation {:.3}% at n = 1e-3; at n = 0.1 deviation {:.1}% at 0.1 MHz, max {:.1}%",
            100.0 * small,
            100.0 * low_f,
            100.0 * spread
        ),
    );
    assert!(pass);
}

#[test]
fn trace_rate_extraction_is_consistent() {
    // sanity for the shared tooling used above
    let p = baseline();
    let dt = interpulse_period(1e6);
    let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
    let ns = default_n_list(p.kappa, dt);
    let cfg = TrajectoryConfig::cpmg(&sched, &ns, &p, 2000, 1).unwrap();
    let run = run_ensemble(&p, &DriveSpec::thermal(1e-2).unwrap(), &cfg).unwrap();
    let a = run.rate(dt, None).unwrap().gamma;
    let b = extract_rate(&run.trace(dt), None).unwrap().gamma;
    assert_eq!(a, b);
}
