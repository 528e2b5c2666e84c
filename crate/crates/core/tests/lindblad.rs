use photon_dephasing::analytic::{gamma_coherent, gamma_coherent_detuned, gamma_thermal};
use photon_dephasing::lindblad::{cpmg_experiment, rate_from_lindblad, FockConfig};
use photon_dephasing::model::{drive_amplitude_for_population, CpmgSchedule, DriveSpec, ResonatorQubitParams};
use photon_dephasing::trajectory::{default_n_list, run_ensemble, TrajectoryConfig};
use photon_dephasing::units::{interpulse_period, mhz_to_angular};

fn baseline() -> ResonatorQubitParams {
    ResonatorQubitParams::resonant(1.0 / 19.4e-9, 0.5 * mhz_to_angular(5.7)).unwrap()
}

fn coherent_n_list(kappa: f64, dt: f64) -> Vec<usize> {
    let kdt = kappa * dt;
    let lo = ((6.0 / kdt).ceil() as usize).max(1);
    let hi = ((14.0 / kdt).ceil() as usize).max(lo + 2);
    (lo..=hi).collect()
}

#[test]
fn thermal_rates_match_analytic() {
    let p = baseline();
    let n = 5e-3;
    let drive = DriveSpec::thermal(n).unwrap();
    for &f_s in &[0.5e6, 2e6, 10e6] {
        let dt = interpulse_period(f_s);
        let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
        let g = rate_from_lindblad(&p, &drive, &sched, None, &FockConfig::default()).unwrap().gamma;
        let exact = gamma_thermal(dt, n, &p);
        assert!(((g - exact) / exact).abs() < 0.02, "f_s={f_s}: {g} vs {exact}");
    }
}

#[test]
fn coherent_rates_match_analytic() {
    let p = baseline();
    let n = 1e-3;
    let drive = DriveSpec::coherent_with_population(&p, n).unwrap();
    for &f_s in &[1e6, 5e6] {
        let dt = interpulse_period(f_s);
        let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
        let ns = coherent_n_list(p.kappa, dt);
        let g = rate_from_lindblad(&p, &drive, &sched, Some(&ns), &FockConfig::default()).unwrap().gamma;
        let exact = gamma_coherent(dt, n, &p).unwrap();
        assert!(((g - exact) / exact).abs() < 0.02, "f_s={f_s}: {g} vs {exact}");
    }
}

#[test]
fn detuned_rates_match_analytic() {
    let base = baseline();
    let delta = base.chi;
    let p = base.with_detuning(delta);
    let f = num_complex::Complex64::new(drive_amplitude_for_population(&base, 1e-3).unwrap(), 0.0);
    let drive = DriveSpec::Coherent { f_dc: f };
    for &f_s in &[0.5e6, 2e6, 5e6] {
        let dt = interpulse_period(f_s);
        let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
        let ns = coherent_n_list(p.kappa, dt);
        let g = rate_from_lindblad(&p, &drive, &sched, Some(&ns), &FockConfig::default()).unwrap().gamma;
        let exact = gamma_coherent_detuned(dt, f, delta, &base);
        assert!(((g - exact) / exact).abs() < 0.02, "f_s={f_s}: {g} vs {exact}");
    }
}

#[test]
fn fock_truncation_is_converged() {
    let p = baseline();
    let drive = DriveSpec::thermal(5e-3).unwrap();
    let dt = interpulse_period(2e6);
    let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
    let a = rate_from_lindblad(&p, &drive, &sched, None, &FockConfig::default()).unwrap().gamma;
    let b = rate_from_lindblad(&p, &drive, &sched, None, &FockConfig::default().with_n_fock(10)).unwrap().gamma;
    assert!(((a - b) / b).abs() < 2e-3, "{a} vs {b}");
}

#[test]
fn step_halving_is_converged() {
    let p = baseline();
    let drive = DriveSpec::thermal(5e-3).unwrap();
    let dt = interpulse_period(5e6);
    let sched = CpmgSchedule::raised_cosine(1, dt, 25e-9).unwrap();
    let fock = FockConfig::default();
    let h = fock.step_for(&p, 25e-9);
    let a = rate_from_lindblad(&p, &drive, &sched, None, &fock).unwrap().gamma;
    let fine = FockConfig { integrator_step: Some(0.5 * h), ..fock };
    let b = rate_from_lindblad(&p, &drive, &sched, None, &fine).unwrap().gamma;
    assert!(((a - b) / b).abs() < 5e-3, "{a} vs {b}");
}

#[test]
fn agrees_with_trajectory_route() {
    let p = baseline();
    let n = 1e-2;
    let drive = DriveSpec::thermal(n).unwrap();
    let dt = interpulse_period(2e6);
    let ns = default_n_list(p.kappa, dt);
    let sched = CpmgSchedule::instantaneous(1, dt).unwrap();
    let lind = rate_from_lindblad(&p, &drive, &sched, Some(&ns), &FockConfig::default()).unwrap().gamma;
    let cfg = TrajectoryConfig::cpmg(&sched, &ns, &p, 20_000, 77).unwrap();
    let mc = run_ensemble(&p, &drive, &cfg).unwrap().rate(dt, Some(0.0)).unwrap();
    assert!((lind - mc.gamma).abs() < 0.02 * lind + 3.0 * mc.sigma, "{lind} vs {} ± {}", mc.gamma, mc.sigma);
}

#[test]
fn finite_pulses_track_invariants() {
    let p = baseline();
    let drive = DriveSpec::thermal(5e-3).unwrap();
    let sched = CpmgSchedule::raised_cosine(1, 60e-9, 25e-9).unwrap();
    // check_invariants is on by default, so every sample is trace, Hermiticity
    // and positivity checked
    let tr = cpmg_experiment(&p, &drive, &sched, &[2, 4, 6], &FockConfig::default()).unwrap();
    assert_eq!(tr.points.len(), 3);
    assert!(tr.points.windows(2).all(|w| w[1].coherence < w[0].coherence));
}
