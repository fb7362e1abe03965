use weylsim::evolve::evolve_unitary;
use weylsim::fockspace::{coherent_state, Axis};
use weylsim::model::{four_tone_hamiltonian, weyl_hamiltonian};
use weylsim::probe::spin_series;
use weylsim::scenarios::{run, ScenarioConfig, ScenarioName};
use weylsim::{SimParams, SpaceSpec, SpinState, TimeGrid, C64};

#[test]
fn scenario_runs_are_bit_reproducible() {
    for name in [ScenarioName::Dispersion, ScenarioName::Helicity] {
        let mut cfg = ScenarioConfig::defaults(name);
        cfg.space = SpaceSpec::two_mode(12, 12).unwrap();
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        assert_eq!(a.tables, b.tables, "{name}");
        assert_eq!(a.checks, b.checks, "{name}");
    }
}

#[test]
fn four_sideband_tones_drive_the_same_spin_dynamics() {
    let s = SpaceSpec::two_mode(12, 8).unwrap();
    let p = SimParams::new(4.2, 1.0).unwrap();
    let grid = TimeGrid::new(0.0, 0.3, 61).unwrap();
    let psi = coherent_state(s, C64::new(0.0, 1.0), C64::new(0.0, 0.0), SpinState::PlusZ).unwrap();
    let direct = spin_series(
        &evolve_unitary(&weyl_hamiltonian(s, &p).unwrap(), &psi, &grid).unwrap(),
        Axis::Z,
        &grid,
    )
    .unwrap();
    let tones = spin_series(
        &evolve_unitary(&four_tone_hamiltonian(s, &p).unwrap(), &psi, &grid).unwrap(),
        Axis::Z,
        &grid,
    )
    .unwrap();
    assert!(direct.max_abs_diff(&tones) < 1e-10);
}

#[test]
fn dephasing_leaves_landau_peak_checks_alone() {
    let mut cfg = ScenarioConfig::defaults(ScenarioName::Landau);
    cfg.long_grid = None;
    cfg.noise_space = Some(SpaceSpec::two_mode(6, 6).unwrap());
    let noisy = run(&cfg).unwrap();
    cfg.noise_on = false;
    let clean = run(&cfg).unwrap();
    for name in ["peak_n1", "peak_n2"] {
        assert_eq!(
            noisy.check(name).unwrap().pass,
            clean.check(name).unwrap().pass
        );
        assert!(clean.check(name).unwrap().pass);
    }
}
