//! Indirect readout: quadratures from the early-time spin response to a
//! probe coupling, energy from the early-time slope of σ̂θ⊥, and the
//! kinetic-momentum series.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::analyze::{fit_polynomial, TimeSeries};
use crate::error::{Error, Result};
use crate::evolve::{
    evolve_lindblad, observable_series, NoiseSpec, PropagatorKind, TimeGrid, UnitaryPropagator,
};
use crate::fockspace::{
    coherent_state, pauli, quadrature, spin_reset, spin_rotation, Axis, LinOp, Mode, PauliAxis,
    QState, Quadrature, SpaceSpec, SpinState, C64,
};
use crate::model::{probe_on_mode, weyl_hamiltonian, QuadratureTarget, SimParams};

pub use crate::analyze::SlopeFit;

/// Largest accepted cubic-fit residual.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.01;
/// Upper bound on the probe rotation angle √2·Ωp·τ_end·|⟨Q̂⟩|.
pub const REGIME_LIMIT: f64 = 0.5;

const WINDOW_ANGLE: f64 = 0.25;
const WINDOW_SAMPLES: usize = 12;
/// Probe substep cap, ms.
const PROBE_DT: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeOptions {
    /// Explicit probe window; `None` picks one from a pilot estimate.
    pub grid: Option<TimeGrid>,
    /// Dephasing applied while probing; noiseless by default.
    pub noise: Option<NoiseSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReadout {
    pub estimate: f64,
    pub fit: SlopeFit,
    pub sigma_z: TimeSeries,
}

/// Default window [0, 0.25/(√2·Ωp·max(1, |est|))] with 12 samples.
pub fn default_probe_grid(omega_probe: f64, estimate: f64) -> Result<TimeGrid> {
    let t_end = WINDOW_ANGLE / (SQRT_2 * omega_probe * estimate.abs().max(1.0));
    TimeGrid::with_dt_max(0.0, t_end, WINDOW_SAMPLES, PROBE_DT.min(t_end / 4.0))
}

/// Estimate of ⟨Q̂⟩ through reset to |−z⟩, rotation to |+x⟩, probe
/// evolution and a cubic fit of ⟨σ̂z(τ)⟩.
pub fn measure_quadrature(
    state: &QState,
    target: QuadratureTarget,
    params: &SimParams,
    probe_grid: &TimeGrid,
) -> Result<f64> {
    let opts = ProbeOptions {
        grid: Some(*probe_grid),
        noise: None,
    };
    Ok(measure_quadrature_with(state, target, params, &opts)?.estimate)
}

pub fn measure_quadrature_with(
    state: &QState,
    target: QuadratureTarget,
    params: &SimParams,
    opts: &ProbeOptions,
) -> Result<QuadratureReadout> {
    params.validate()?;
    let mode = target.mode();
    // only the probed mode and the (reset) spin take part
    let reduced = state.reduce_to_mode(mode)?;
    let prepared = spin_rotation(
        &spin_reset(&reduced, SpinState::MinusZ),
        Axis::Y,
        -FRAC_PI_2,
    );
    let space = prepared.space();
    let h = probe_on_mode(space, params.omega_probe, Mode::X, target.quadrature())?;
    let noise = match opts.noise {
        None => NoiseSpec::noiseless(),
        Some(n) => {
            let tau = match mode {
                Mode::X => n.tau_d_x,
                Mode::Y => n.tau_d_y,
            };
            NoiseSpec::new(tau, f64::INFINITY)?
        }
    };
    let sz = pauli(space, PauliAxis::Z);
    let readout = |grid: &TimeGrid| -> Result<QuadratureReadout> {
        let states = evolve_lindblad(&h, &noise, &prepared, grid)?;
        let series = observable_series(&states, &sz, grid, "sigma_z")?;
        let fit = fit_polynomial(&series, 3)?;
        if fit.residual_rms > FIT_RESIDUAL_LIMIT {
            return Err(Error::Fit {
                residual: fit.residual_rms,
                limit: FIT_RESIDUAL_LIMIT,
            });
        }
        // d⟨σ̂z⟩/dτ at τ = 0 on |+x⟩ is −√2·Ωp·⟨Q̂⟩
        let estimate = -fit.slope_at_zero / (SQRT_2 * params.omega_probe);
        Ok(QuadratureReadout {
            estimate,
            fit,
            sigma_z: series,
        })
    };
    let out = match &opts.grid {
        Some(g) => readout(g)?,
        None => {
            let pilot = readout(&default_probe_grid(params.omega_probe, 1.0)?)?;
            if pilot.estimate.abs() > 1.0 {
                readout(&default_probe_grid(params.omega_probe, pilot.estimate)?)?
            } else {
                pilot
            }
        }
    };
    let angle = SQRT_2 * params.omega_probe * out.fit.window.1 * out.estimate.abs();
    if angle >= REGIME_LIMIT {
        return Err(Error::Regime {
            angle,
            limit: REGIME_LIMIT,
        });
    }
    Ok(out)
}

/// All four quadratures with automatically chosen windows.
pub fn measure_all_quadratures(state: &QState, params: &SimParams) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (slot, target) in out.iter_mut().zip(QuadratureTarget::ALL) {
        *slot = measure_quadrature_with(state, target, params, &ProbeOptions::default())?.estimate;
    }
    Ok(out)
}

/// cosθ σ̂x + sinθ σ̂y
pub fn sigma_theta(space: SpaceSpec, theta: f64) -> LinOp {
    pauli(space, PauliAxis::X) * theta.cos() + pauli(space, PauliAxis::Y) * theta.sin()
}

/// −sinθ σ̂x + cosθ σ̂y
pub fn sigma_theta_perp(space: SpaceSpec, theta: f64) -> LinOp {
    pauli(space, PauliAxis::X) * (-theta.sin()) + pauli(space, PauliAxis::Y) * theta.cos()
}

/// Default energy-probe window: 12 samples over [0, 0.25/(√2·Ω·max(1, p))].
pub fn default_energy_grid(params: &SimParams, p: f64) -> Result<TimeGrid> {
    let t_end = WINDOW_ANGLE / (SQRT_2 * params.omega * p.max(1.0));
    TimeGrid::with_dt_max(0.0, t_end, WINDOW_SAMPLES, PROBE_DT.min(t_end / 4.0))
}

/// Free-particle energy readout; reuses one propagator across momenta.
pub struct EnergyProbe {
    space: SpaceSpec,
    params: SimParams,
    propagator: UnitaryPropagator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReadout {
    /// rad/ms
    pub energy: f64,
    pub fit: SlopeFit,
    pub signal: TimeSeries,
}

impl EnergyProbe {
    pub fn new(space: SpaceSpec, params: &SimParams) -> Result<Self> {
        params.validate()?;
        if params.r != 0.0 {
            return Err(Error::Domain(format!(
                "energy readout is a free-particle protocol (r = {})",
                params.r
            )));
        }
        let h = weyl_hamiltonian(space, params)?;
        // the windows are short, so a few sparse Taylor substeps suffice
        let propagator = UnitaryPropagator::new(&h, PropagatorKind::Taylor)?;
        Ok(Self {
            space,
            params: *params,
            propagator,
        })
    }

    pub fn measure(&self, p: f64, theta: f64, grid: &TimeGrid) -> Result<EnergyReadout> {
        if !(p >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "momentum magnitude must be ≥ 0 (got {p})"
            )));
        }
        let a = C64::new(0.0, p / SQRT_2);
        let psi = coherent_state(
            self.space,
            a * theta.cos(),
            a * theta.sin(),
            SpinState::PlusZ,
        )?;
        let states = self.propagator.run(&psi, grid)?;
        let signal = observable_series(
            &states,
            &sigma_theta_perp(self.space, theta),
            grid,
            "sigma_theta_perp",
        )?;
        let fit = fit_polynomial(&signal, 3)?;
        if fit.residual_rms > FIT_RESIDUAL_LIMIT {
            return Err(Error::Fit {
                residual: fit.residual_rms,
                limit: FIT_RESIDUAL_LIMIT,
            });
        }
        Ok(EnergyReadout {
            energy: -fit.slope_at_zero / 2.0,
            fit,
            signal,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }
}

/// E(p) from the early-time slope of ⟨σ̂θ⊥⟩, in rad/ms.
pub fn measure_energy_slope(
    space: SpaceSpec,
    p: f64,
    theta: f64,
    params: &SimParams,
    grid: &TimeGrid,
) -> Result<f64> {
    Ok(EnergyProbe::new(space, params)?
        .measure(p, theta, grid)?
        .energy)
}

/// (⟨π̂x⟩, ⟨π̂y⟩) with π̂x = p̂x and π̂y = p̂y − r·x̂.
pub fn kinetic_momentum_series(
    states: &[QState],
    params: &SimParams,
    grid: &TimeGrid,
) -> Result<(TimeSeries, TimeSeries)> {
    let space = states
        .first()
        .ok_or_else(|| Error::InvalidParams("no states".into()))?
        .space();
    let px = quadrature(space, Mode::X, Quadrature::Momentum)?;
    let pi_y = &quadrature(space, Mode::Y, Quadrature::Momentum)?
        - &(quadrature(space, Mode::X, Quadrature::Position)? * params.r);
    Ok((
        observable_series(states, &px, grid, "pi_x")?,
        observable_series(states, &pi_y, grid, "pi_y")?,
    ))
}

pub fn spin_series(states: &[QState], axis: Axis, grid: &TimeGrid) -> Result<TimeSeries> {
    let space = states
        .first()
        .ok_or_else(|| Error::InvalidParams("no states".into()))?
        .space();
    let (which, label) = match axis {
        Axis::X => (PauliAxis::X, "sigma_x"),
        Axis::Y => (PauliAxis::Y, "sigma_y"),
        Axis::Z => (PauliAxis::Z, "sigma_z"),
    };
    observable_series(states, &pauli(space, which), grid, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::evolve_unitary;
    use crate::fockspace::expectation;
    use approx::assert_abs_diff_eq;

    fn space() -> SpaceSpec {
        SpaceSpec::two_mode(12, 12).unwrap()
    }

    fn params() -> SimParams {
        SimParams::new(4.2, 1.0).unwrap()
    }

    fn estimate(state: &QState, target: QuadratureTarget) -> f64 {
        measure_quadrature_with(state, target, &params(), &ProbeOptions::default())
            .unwrap()
            .estimate
    }

    #[test]
    fn vacuum_quadratures_vanish() {
        let vac = QState::fock(space(), SpinState::PlusZ, 0, 0).unwrap();
        for t in QuadratureTarget::ALL {
            assert!(estimate(&vac, t).abs() < 1e-3, "{t:?}");
        }
    }

    #[test]
    fn coherent_quadratures() {
        let s = space();
        let psi = coherent_state(
            s,
            C64::new(0.5f64.sqrt(), 0.0),
            C64::new(0.0, 0.0),
            SpinState::MinusX,
        )
        .unwrap();
        assert!((estimate(&psi, QuadratureTarget::X) - 1.0).abs() < 0.02);
        let psi =
            coherent_state(s, C64::new(0.0, 1.0), C64::new(0.3, -0.4), SpinState::PlusZ).unwrap();
        assert!((estimate(&psi, QuadratureTarget::Px) - SQRT_2).abs() < 0.02 * SQRT_2);
        assert!((estimate(&psi, QuadratureTarget::Y) - 0.3 * SQRT_2).abs() < 0.02);
        assert!((estimate(&psi, QuadratureTarget::Py) + 0.4 * SQRT_2).abs() < 0.02);
    }

    #[test]
    fn entangled_state_reads_reduced_expectation() {
        let s = space();
        let psi =
            coherent_state(s, C64::new(0.0, 1.0), C64::new(0.0, 0.0), SpinState::PlusX).unwrap();
        let g = TimeGrid::new(0.0, 0.08, 3).unwrap();
        let h = weyl_hamiltonian(s, &params()).unwrap();
        let evolved = evolve_unitary(&h, &psi, &g).unwrap().pop().unwrap();
        for t in QuadratureTarget::ALL {
            let direct =
                expectation(&quadrature(s, t.mode(), t.quadrature()).unwrap(), &evolved).unwrap();
            let est = estimate(&evolved, t);
            assert!(
                (est - direct).abs() / direct.abs().max(1.0) < 0.02,
                "{t:?}: {est} vs {direct}"
            );
        }
    }

    #[test]
    fn noisy_probe_stays_close() {
        let s = space();
        let psi =
            coherent_state(s, C64::new(0.0, 1.0), C64::new(0.0, 0.0), SpinState::PlusZ).unwrap();
        let opts = ProbeOptions {
            grid: None,
            noise: Some(NoiseSpec::measured()),
        };
        let r = measure_quadrature_with(&psi, QuadratureTarget::Px, &params(), &opts).unwrap();
        assert!((r.estimate - SQRT_2).abs() < 0.02 * SQRT_2);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let s = space();
        let psi =
            coherent_state(s, C64::new(0.0, 1.5), C64::new(0.0, 0.0), SpinState::PlusZ).unwrap();
        let g = TimeGrid::new(0.0, 0.1, 12).unwrap();
        let err = measure_quadrature(&psi, QuadratureTarget::Px, &params(), &g).unwrap_err();
        assert!(
            matches!(err, Error::Regime { .. } | Error::Fit { .. }),
            "{err}"
        );
    }

    #[test]
    fn energy_readout() {
        let s = SpaceSpec::two_mode(15, 15).unwrap();
        let p = SimParams::new(4.75, 0.0).unwrap();
        let probe = EnergyProbe::new(s, &p).unwrap();
        let g0 = default_energy_grid(&p, 0.0).unwrap();
        assert!(probe.measure(0.0, 0.0, &g0).unwrap().energy.abs() < 1e-3 * p.omega);
        let g1 = default_energy_grid(&p, 1.0).unwrap();
        let e = probe.measure(1.0, 0.0, &g1).unwrap().energy;
        assert!((e / (2.0 * std::f64::consts::PI) - 3.359).abs() < 0.02 * 3.359);
        let e_diag = probe.measure(1.0, 0.7, &g1).unwrap().energy;
        assert!((e_diag - e).abs() < 0.02 * e);
        assert!(probe.measure(-1.0, 0.0, &g1).is_err());
        assert!(EnergyProbe::new(s, &params()).is_err());
    }

    #[test]
    fn energy_window_halving_converges() {
        let s = SpaceSpec::two_mode(15, 15).unwrap();
        let p = SimParams::new(4.75, 0.0).unwrap();
        let probe = EnergyProbe::new(s, &p).unwrap();
        let exact = p.omega / SQRT_2 * 1.5;
        let g = default_energy_grid(&p, 1.5).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..3 {
            let grid = TimeGrid::new(0.0, g.t_end / 2f64.powi(k), 12).unwrap();
            let err = (probe.measure(1.5, 0.0, &grid).unwrap().energy - exact).abs();
            assert!(err <= prev + 1e-9);
            prev = err;
        }
        assert!(prev < 1e-3 * exact);
    }

    #[test]
    fn sigma_theta_algebra() {
        let s = SpaceSpec::single_mode(1).unwrap();
        let id = LinOp::identity(s);
        for k in 0..8 {
            let th = k as f64 * 0.8 - 2.0;
            let a = sigma_theta(s, th);
            let b = sigma_theta_perp(s, th);
            assert!(a.anticommutator(&b).max_abs() < 1e-14);
            assert!((&(&b * &b) - &id).max_abs() < 1e-14);
        }
    }

    #[test]
    fn kinetic_momentum_initial_values() {
        let s = space();
        let psi =
            coherent_state(s, C64::new(0.0, 1.0), C64::new(0.0, 0.0), SpinState::PlusX).unwrap();
        let g = TimeGrid::new(0.0, 0.01, 2).unwrap();
        let states = vec![psi.clone(), psi];
        let (px, py) = kinetic_momentum_series(&states, &params(), &g).unwrap();
        assert_abs_diff_eq!(px.values[0], SQRT_2, epsilon = 1e-6);
        assert_abs_diff_eq!(py.values[0], 0.0, epsilon = 1e-9);
        let free = params().with_field(0.0).unwrap();
        let (_, py0) = kinetic_momentum_series(&states, &free, &g).unwrap();
        let direct = observable_series(
            &states,
            &quadrature(s, Mode::Y, Quadrature::Momentum).unwrap(),
            &g,
            "py",
        )
        .unwrap();
        assert_eq!(py0.values, direct.values);
        let sz = spin_series(&states, Axis::X, &g).unwrap();
        assert_abs_diff_eq!(sz.values[0], 1.0, epsilon = 1e-12);
    }
}
