//! Sideband tones, the 2D Weyl Hamiltonian, the quadrature probe and the
//! single-mode transformed Landau model.
//!
//! Energies are angular frequencies in rad/ms (so 2π × kHz). The
//! natural-units Hamiltonian σ̂x p̂x + σ̂y(p̂y − eB x̂) is the simulator
//! operator divided by Ω/√2; [`UnitScale`] converts between the two.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{
    lowering_matrix, pauli_matrix, quadrature_matrix, spin_mode_product, LinOp, Mode, PauliAxis,
    QState, Quadrature, SpaceSpec, C64,
};
use crate::sparse::{SparseOp, TensorTerm};

/// Converts a frequency in kHz to an angular frequency in rad/ms.
pub fn angular_from_khz(khz: f64) -> f64 {
    TAU * khz
}

pub fn khz_from_angular(omega: f64) -> f64 {
    omega / TAU
}

/// Physical knobs of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Sideband Rabi frequency Ω, rad/ms.
    pub omega: f64,
    /// Synthetic field r = eB (dimensionless).
    pub r: f64,
    /// Probe Rabi frequency Ωp, rad/ms.
    pub omega_probe: f64,
    /// Motional dephasing times in ms; `f64::INFINITY` turns a channel off.
    pub tau_d_x: f64,
    pub tau_d_y: f64,
}

impl SimParams {
    /// Noiseless parameters with Ωp = Ω.
    pub fn new(omega_khz: f64, r: f64) -> Result<Self> {
        let omega = angular_from_khz(omega_khz);
        let p = Self {
            omega,
            r,
            omega_probe: omega,
            tau_d_x: f64::INFINITY,
            tau_d_y: f64::INFINITY,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_dephasing(mut self, tau_d_x: f64, tau_d_y: f64) -> Result<Self> {
        self.tau_d_x = tau_d_x;
        self.tau_d_y = tau_d_y;
        self.validate()?;
        Ok(self)
    }

    pub fn with_field(mut self, r: f64) -> Result<Self> {
        self.r = r;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "omega must be positive (got {})",
                self.omega
            )));
        }
        if !(self.omega_probe > 0.0 && self.omega_probe.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "omega_probe must be positive (got {})",
                self.omega_probe
            )));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "r must be non-negative (got {})",
                self.r
            )));
        }
        for (name, tau) in [("tau_d_x", self.tau_d_x), ("tau_d_y", self.tau_d_y)] {
            if !(tau > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive or infinite (got {tau})"
                )));
            }
        }
        Ok(())
    }

    pub fn units(&self) -> UnitScale {
        UnitScale { omega: self.omega }
    }
}

/// Maps natural-units energies to simulator angular frequencies (× Ω/√2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitScale {
    pub omega: f64,
}

impl UnitScale {
    pub fn to_simulator(&self, natural: f64) -> f64 {
        natural * self.omega * FRAC_1_SQRT_2
    }

    pub fn to_natural(&self, simulator: f64) -> f64 {
        simulator * SQRT_2 / self.omega
    }

    /// Natural time units per ms.
    pub fn time_to_natural(&self, t_ms: f64) -> f64 {
        t_ms * self.omega * FRAC_1_SQRT_2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sideband {
    Red,
    Blue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub mode: Mode,
    pub kind: Sideband,
    pub rabi: f64,
    pub phase: f64,
}

impl ToneSpec {
    /// A negative Rabi rate is folded into the phase, and the phase is
    /// reduced to [0, 2π).
    pub fn new(mode: Mode, kind: Sideband, rabi: f64, phase: f64) -> Self {
        let (rabi, phase) = if rabi < 0.0 {
            (-rabi, phase + PI)
        } else {
            (rabi, phase)
        };
        Self {
            mode,
            kind,
            rabi,
            phase: phase.rem_euclid(TAU),
        }
    }
}

/// Ω[σ̂∓ â† e^{iφ} + h.c.]/2 with σ̂− for the red tone and σ̂+ for the blue.
pub fn sideband_hamiltonian(space: SpaceSpec, tone: &ToneSpec) -> Result<LinOp> {
    let n = space
        .n_max(tone.mode)
        .ok_or_else(|| Error::InvalidSpace(format!("mode {:?} absent", tone.mode)))?;
    let adag = lowering_matrix(n).adjoint();
    let sigma = pauli_matrix(match tone.kind {
        Sideband::Red => PauliAxis::Minus,
        Sideband::Blue => PauliAxis::Plus,
    });
    let phase = C64::from_polar(1.0, tone.phase);
    let term = spin_mode_product(space, &sigma, tone.mode, &(adag * phase))?;
    Ok((&term + &term.adjoint()) * (tone.rabi / 2.0))
}

/// The four tones whose sum is the Weyl Hamiltonian with field `r`.
pub fn weyl_tones(params: &SimParams) -> [ToneSpec; 4] {
    let (o, r) = (params.omega, params.r);
    [
        ToneSpec::new(Mode::X, Sideband::Red, (1.0 - r) * o, PI / 2.0),
        ToneSpec::new(Mode::X, Sideband::Blue, (1.0 + r) * o, PI / 2.0),
        ToneSpec::new(Mode::Y, Sideband::Red, o, PI),
        ToneSpec::new(Mode::Y, Sideband::Blue, o, 0.0),
    ]
}

pub fn four_tone_hamiltonian(space: SpaceSpec, params: &SimParams) -> Result<LinOp> {
    let mut h = LinOp::zeros(space);
    for tone in weyl_tones(params) {
        h = &h + &sideband_hamiltonian(space, &tone)?;
    }
    Ok(h)
}

fn weyl_terms(space: SpaceSpec, params: &SimParams) -> Result<Vec<TensorTerm>> {
    params.validate()?;
    if space.is_single_mode() {
        return Err(Error::InvalidSpace(
            "the Weyl Hamiltonian needs both modes".into(),
        ));
    }
    let nx = space.levels_x() - 1;
    let ny = space.levels_y() - 1;
    let ix = DMatrix::identity(nx + 1, nx + 1);
    let iy = DMatrix::identity(ny + 1, ny + 1);
    let c = C64::new(params.omega * FRAC_1_SQRT_2, 0.0);
    let sx = pauli_matrix(PauliAxis::X);
    let sy = pauli_matrix(PauliAxis::Y);
    Ok(vec![
        TensorTerm {
            coeff: c,
            spin: sx,
            x: quadrature_matrix(nx, Quadrature::Momentum),
            y: iy.clone(),
        },
        TensorTerm {
            coeff: c,
            spin: sy,
            x: ix,
            y: quadrature_matrix(ny, Quadrature::Momentum),
        },
        TensorTerm {
            coeff: -c * params.r,
            spin: sy,
            x: quadrature_matrix(nx, Quadrature::Position),
            y: iy,
        },
    ])
}

/// (Ω/√2)[σ̂x p̂x + σ̂y(p̂y − r x̂)] on the two-mode space.
pub fn weyl_hamiltonian(space: SpaceSpec, params: &SimParams) -> Result<LinOp> {
    let mut h = LinOp::zeros(space);
    for t in weyl_terms(space, params)? {
        h = &h + &LinOp::tensor(space, &(t.spin * t.coeff), &t.x, &t.y);
    }
    Ok(h)
}

/// Same operator as [`weyl_hamiltonian`] without the dense intermediate.
pub fn weyl_hamiltonian_sparse(space: SpaceSpec, params: &SimParams) -> Result<SparseOp> {
    Ok(SparseOp::tensor_sum(space, &weyl_terms(space, params)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureTarget {
    X,
    Px,
    Y,
    Py,
}

impl QuadratureTarget {
    pub const ALL: [QuadratureTarget; 4] = [
        QuadratureTarget::X,
        QuadratureTarget::Px,
        QuadratureTarget::Y,
        QuadratureTarget::Py,
    ];

    pub fn mode(self) -> Mode {
        match self {
            QuadratureTarget::X | QuadratureTarget::Px => Mode::X,
            QuadratureTarget::Y | QuadratureTarget::Py => Mode::Y,
        }
    }

    pub fn quadrature(self) -> Quadrature {
        match self {
            QuadratureTarget::X | QuadratureTarget::Y => Quadrature::Position,
            QuadratureTarget::Px | QuadratureTarget::Py => Quadrature::Momentum,
        }
    }
}

/// (Ωp/√2) σ̂y Q̂ for the chosen quadrature.
pub fn probe_hamiltonian(
    space: SpaceSpec,
    params: &SimParams,
    target: QuadratureTarget,
) -> Result<LinOp> {
    probe_on_mode(
        space,
        params.omega_probe,
        target.mode(),
        target.quadrature(),
    )
}

/// Probe coupling on an explicit mode slot; lets the protocol drive a
/// reduced single-mode state.
pub fn probe_on_mode(
    space: SpaceSpec,
    omega_probe: f64,
    mode: Mode,
    which: Quadrature,
) -> Result<LinOp> {
    let n = space
        .n_max(mode)
        .ok_or_else(|| Error::InvalidSpace(format!("mode {mode:?} absent")))?;
    let q = quadrature_matrix(n, which) * C64::new(omega_probe * FRAC_1_SQRT_2, 0.0);
    spin_mode_product(space, &pauli_matrix(PauliAxis::Y), mode, &q)
}

/// Ω√r (iσ̂+â† − iσ̂−â) on qubit ⊗ one mode.
///
/// This is the Weyl Hamiltonian after displacing x by p̂y/r and rescaling
/// the mode so that x̂ = (â+â†)/√(2r); for r = 1 the rescaling is trivial.
pub fn transformed_hamiltonian(space: SpaceSpec, params: &SimParams) -> Result<LinOp> {
    if !space.is_single_mode() {
        return Err(Error::InvalidSpace(
            "transformed model lives on a single-mode space".into(),
        ));
    }
    if !(params.r > 0.0) {
        return Err(Error::Domain(format!(
            "transformed model needs r > 0 (got {})",
            params.r
        )));
    }
    let n = space.levels_x() - 1;
    let adag = lowering_matrix(n).adjoint();
    let term = spin_mode_product(
        space,
        &pauli_matrix(PauliAxis::Plus),
        Mode::X,
        &(adag * C64::new(0.0, 1.0)),
    )?;
    Ok((&term + &term.adjoint()) * (params.omega * params.r.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LandauVariant {
    Weyl,
    /// Massive Dirac particle; mass in natural units.
    Dirac {
        mass: f64,
    },
    NonRelativistic {
        mass: f64,
    },
}

/// Level n of the chosen dispersion, in rad/ms.
pub fn landau_levels(n: i64, params: &SimParams, variant: LandauVariant) -> Result<f64> {
    if n < 0 {
        return Err(Error::Domain(format!(
            "Landau index must be non-negative (got {n})"
        )));
    }
    let nr = n as f64 * params.r;
    let units = params.units();
    match variant {
        LandauVariant::Weyl => Ok(params.omega * nr.sqrt()),
        LandauVariant::Dirac { mass } => {
            check_mass(mass)?;
            Ok(units.to_simulator((mass * mass + 2.0 * nr).sqrt()))
        }
        LandauVariant::NonRelativistic { mass } => {
            check_mass(mass)?;
            Ok(units.to_simulator(nr / mass))
        }
    }
}

fn check_mass(mass: f64) -> Result<()> {
    if mass > 0.0 && mass.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("mass must be positive (got {mass})")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Zero,
    Plus,
    Minus,
}

/// Exact eigenstates of [`transformed_hamiltonian`]: |E0⟩ = |+z⟩|0⟩ and
/// |E_n^±⟩ = (|−z⟩|n−1⟩ ± i|+z⟩|n⟩)/√2 with energy ±Ω√(nr).
pub fn landau_eigenstate(space: SpaceSpec, n: usize, branch: Branch) -> Result<QState> {
    if !space.is_single_mode() {
        return Err(Error::InvalidSpace(
            "Landau eigenstates live on a single-mode space".into(),
        ));
    }
    let n_max = space.levels_x() - 1;
    let mut v = nalgebra::DVector::zeros(space.dim());
    match branch {
        Branch::Zero => {
            if n != 0 {
                return Err(Error::Domain(
                    "the zero branch exists only for n = 0".into(),
                ));
            }
            v[space.index(0, 0, 0)] = C64::new(1.0, 0.0);
        }
        Branch::Plus | Branch::Minus => {
            if n == 0 {
                return Err(Error::Domain("signed Landau states need n >= 1".into()));
            }
            if n > n_max {
                return Err(Error::Truncation(format!("level {n} above cutoff {n_max}")));
            }
            let sign = if branch == Branch::Plus { 1.0 } else { -1.0 };
            v[space.index(1, n - 1, 0)] = C64::new(FRAC_1_SQRT_2, 0.0);
            v[space.index(0, n, 0)] = C64::new(0.0, sign * FRAC_1_SQRT_2);
        }
    }
    QState::pure(space, v)
}

pub fn landau_energy(n: usize, branch: Branch, params: &SimParams) -> f64 {
    let e = params.omega * (n as f64 * params.r).sqrt();
    match branch {
        Branch::Zero => 0.0,
        Branch::Plus => e,
        Branch::Minus => -e,
    }
}

/// Sorted eigenvalues of a Hermitian operator by dense diagonalization.
pub fn dense_spectrum(op: &LinOp) -> Vec<f64> {
    let m: DMatrix<C64> = op.matrix().clone();
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{coherent_state, expectation, pauli, quadrature, QState, SpinState};
    use approx::assert_abs_diff_eq;

    fn params(r: f64) -> SimParams {
        SimParams::new(4.2, r).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SimParams::new(4.2, -1.0).is_err());
        assert!(SimParams::new(0.0, 1.0).is_err());
        assert!(params(1.0).with_dephasing(4.0, 0.0).is_err());
        assert!(params(1.0).with_dephasing(f64::INFINITY, 3.5).is_ok());
        assert_abs_diff_eq!(params(1.0).omega, TAU * 4.2);
    }

    #[test]
    fn zero_rabi_tone_vanishes() {
        let s = SpaceSpec::two_mode(3, 3).unwrap();
        let h = sideband_hamiltonian(s, &ToneSpec::new(Mode::X, Sideband::Blue, 0.0, 1.0)).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn blue_tone_matrix_element() {
        // Oracle: ⟨+z, n+1| Ω[σ+ a† + σ− a]/2 |−z, n⟩ = Ω√(n+1)/2 read off the formula.
        let s = SpaceSpec::two_mode(5, 2).unwrap();
        let omega = 3.0;
        let h =
            sideband_hamiltonian(s, &ToneSpec::new(Mode::X, Sideband::Blue, omega, 0.0)).unwrap();
        for n in 0..5 {
            let e = h.entry(s.index(0, n + 1, 1), s.index(1, n, 1));
            assert_abs_diff_eq!(e.re, omega * ((n + 1) as f64).sqrt() / 2.0, epsilon = 1e-14);
            assert_abs_diff_eq!(e.im, 0.0);
        }
        assert!(h.hermiticity_error() < 1e-14);
        // purely spin flipping: qubit-diagonal blocks vanish
        let m = s.motional_dim();
        assert_eq!(h.matrix().view((0, 0), (m, m)).camax(), 0.0);
        assert_eq!(h.matrix().view((m, m), (m, m)).camax(), 0.0);
    }

    #[test]
    fn four_tone_identity() {
        let s = SpaceSpec::two_mode(6, 5).unwrap();
        for r in [0.0, 0.5, 1.0, 1.7] {
            let p = params(r);
            let direct = weyl_hamiltonian(s, &p).unwrap();
            let tones = four_tone_hamiltonian(s, &p).unwrap();
            assert!((&direct - &tones).max_abs() < 1e-12, "r = {r}");
            assert!(direct.hermiticity_error() < 1e-14);
        }
    }

    #[test]
    fn sparse_weyl_matches_dense() {
        let s = SpaceSpec::two_mode(5, 7).unwrap();
        let p = params(1.3);
        let dense = weyl_hamiltonian(s, &p).unwrap();
        let sparse = weyl_hamiltonian_sparse(s, &p).unwrap();
        assert_eq!(sparse.nnz(), SparseOp::from_linop(&dense).nnz());
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                assert!((sparse.get(i, j) - dense.matrix()[(i, j)]).norm() < 1e-13);
            }
        }
        assert!(sparse.hermiticity_error() < 1e-13);
    }

    #[test]
    fn tone_phase_folding() {
        let t = ToneSpec::new(Mode::X, Sideband::Red, -2.0, PI / 2.0);
        assert_eq!(t.rabi, 2.0);
        assert_abs_diff_eq!(t.phase, 1.5 * PI);
        assert!(ToneSpec::new(Mode::Y, Sideband::Blue, 1.0, -0.1).phase < TAU);
    }

    #[test]
    fn free_energy_is_linear_in_momentum() {
        // Oracle: ⟨H⟩ on |+σθ⟩|ψm⟩ = (Ω/√2)(⟨σx⟩⟨px⟩ + ⟨σy⟩⟨py⟩) for a product state.
        let s = SpaceSpec::two_mode(14, 14).unwrap();
        let p = params(0.0);
        let h = weyl_hamiltonian(s, &p).unwrap();
        let (mom, theta) = (1.3f64, 0.6f64);
        let (px, py) = (mom * theta.cos(), mom * theta.sin());
        let psi = coherent_state(
            s,
            C64::new(0.0, px / SQRT_2),
            C64::new(0.0, py / SQRT_2),
            SpinState::PlusZ,
        )
        .unwrap();
        let amps = psi.amplitudes().unwrap();
        // rotate spin from +z to +σθ: Rz(θ)·Ry(π/2)
        let rotated = crate::fockspace::spin_rotation(
            &crate::fockspace::spin_rotation(
                &QState::pure(s, amps.clone()).unwrap(),
                crate::fockspace::Axis::Y,
                PI / 2.0,
            ),
            crate::fockspace::Axis::Z,
            theta,
        );
        let sx = expectation(&pauli(s, PauliAxis::X), &rotated).unwrap();
        let sy = expectation(&pauli(s, PauliAxis::Y), &rotated).unwrap();
        let mpx = expectation(
            &quadrature(s, Mode::X, Quadrature::Momentum).unwrap(),
            &rotated,
        )
        .unwrap();
        let mpy = expectation(
            &quadrature(s, Mode::Y, Quadrature::Momentum).unwrap(),
            &rotated,
        )
        .unwrap();
        let oracle = p.omega * FRAC_1_SQRT_2 * (sx * mpx + sy * mpy);
        let e = expectation(&h, &rotated).unwrap();
        assert_abs_diff_eq!(e, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(e, p.omega * FRAC_1_SQRT_2 * mom, epsilon = 1e-6 * p.omega);

        let vac = QState::fock(s, SpinState::PlusZ, 0, 0).unwrap();
        assert_abs_diff_eq!(expectation(&h, &vac).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gauge_conserves_py() {
        let s = SpaceSpec::two_mode(5, 5).unwrap();
        let py = quadrature(s, Mode::Y, Quadrature::Momentum).unwrap();
        for r in [0.0, 0.5, 1.0, 2.0] {
            let h = weyl_hamiltonian(s, &params(r)).unwrap();
            assert!(h.commutator(&py).max_abs() < 1e-12, "r = {r}");
        }
    }

    #[test]
    fn probe_heisenberg_identity() {
        // e^{−iHτ} σz e^{iHτ} = cos(√2Ωpτx)σz + sin(√2Ωpτx)σx, checked with dense matrix functions
        let s = SpaceSpec::two_mode(6, 1).unwrap();
        let p = params(1.0);
        let h = probe_hamiltonian(s, &p, QuadratureTarget::X).unwrap();
        let tau = 0.01;
        let eig = h.matrix().clone().symmetric_eigen();
        let phases = eig.eigenvalues.map(|l| C64::from_polar(1.0, -l * tau));
        let u = &eig.eigenvectors
            * nalgebra::DMatrix::from_diagonal(&phases)
            * eig.eigenvectors.adjoint();
        let sz = pauli(s, PauliAxis::Z);
        let lhs = &u * sz.matrix() * u.adjoint();
        let x = quadrature(s, Mode::X, Quadrature::Position).unwrap();
        let xe = x.matrix().clone().symmetric_eigen();
        let k = SQRT_2 * p.omega_probe * tau;
        let fun = |f: fn(f64) -> f64| {
            let d = xe.eigenvalues.map(|l| C64::new(f(k * l), 0.0));
            &xe.eigenvectors * nalgebra::DMatrix::from_diagonal(&d) * xe.eigenvectors.adjoint()
        };
        let rhs = fun(f64::cos) * sz.matrix() + fun(f64::sin) * pauli(s, PauliAxis::X).matrix();
        assert!((lhs - rhs).camax() < 1e-8);
    }

    #[test]
    fn probe_zero_rate_and_hermitian() {
        let s = SpaceSpec::two_mode(4, 4).unwrap();
        let mut p = params(1.0);
        for t in QuadratureTarget::ALL {
            assert!(probe_hamiltonian(s, &p, t).unwrap().hermiticity_error() < 1e-14);
        }
        p.omega_probe = 1e-300;
        assert!(
            probe_hamiltonian(s, &p, QuadratureTarget::Py)
                .unwrap()
                .max_abs()
                < 1e-299
        );
    }

    #[test]
    fn transformed_spectrum_matches_sqrt_n() {
        let s = SpaceSpec::single_mode(20).unwrap();
        for r in [1.0, 0.5, 2.0] {
            let p = params(r);
            let h = transformed_hamiltonian(s, &p).unwrap();
            assert!(h.hermiticity_error() < 1e-14);
            let ev = dense_spectrum(&h);
            let mut positive: Vec<f64> =
                ev.iter().copied().filter(|&e| e > 1e-9 * p.omega).collect();
            positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, e) in positive.iter().enumerate().take(10) {
                let want = p.omega * (((k + 1) as f64) * r).sqrt();
                assert!(
                    (e - want).abs() / want < 1e-9,
                    "r={r} n={} got {e} want {want}",
                    k + 1
                );
            }
        }
        let p = params(1.0);
        let h = transformed_hamiltonian(s, &p).unwrap();
        let ev = dense_spectrum(&h);
        let one = ev
            .iter()
            .copied()
            .filter(|e| (e - p.omega).abs() < 1e-6)
            .count();
        assert_eq!(one, 1);
        assert!(ev.iter().any(|e| (e + p.omega).abs() / p.omega < 1e-9));
        assert!(transformed_hamiltonian(s, &params(0.0)).is_err());
        let tiny = transformed_hamiltonian(s, &params(1e-20)).unwrap();
        assert!(tiny.max_abs() < 1e-9 * p.omega);
    }

    #[test]
    fn landau_level_values() {
        let p = params(1.0);
        assert_eq!(landau_levels(0, &p, LandauVariant::Weyl).unwrap(), 0.0);
        let e1 = landau_levels(1, &p, LandauVariant::Weyl).unwrap();
        assert_abs_diff_eq!(khz_from_angular(2.0 * e1), 8.4, epsilon = 1e-12);
        let e2 = landau_levels(2, &p, LandauVariant::Weyl).unwrap();
        assert_abs_diff_eq!(
            khz_from_angular(2.0 * e2),
            2.0 * SQRT_2 * 4.2,
            epsilon = 1e-12
        );
        assert!((khz_from_angular(2.0 * e2) - 11.88).abs() < 0.01);
        assert!(landau_levels(-1, &p, LandauVariant::Weyl).is_err());
        assert!(landau_levels(1, &p, LandauVariant::Dirac { mass: 0.0 }).is_err());
        // natural units: Dirac √(m² + 2neB), NR neB/m
        let u = p.units();
        let d = landau_levels(3, &p, LandauVariant::Dirac { mass: 2.0 }).unwrap();
        assert_abs_diff_eq!(u.to_natural(d), (4.0f64 + 6.0).sqrt(), epsilon = 1e-12);
        let nr = landau_levels(3, &p, LandauVariant::NonRelativistic { mass: 2.0 }).unwrap();
        assert_abs_diff_eq!(u.to_natural(nr), 1.5, epsilon = 1e-12);
        // Weyl in natural units is √(2neB)
        assert_abs_diff_eq!(
            u.to_natural(landau_levels(3, &p, LandauVariant::Weyl).unwrap()),
            6f64.sqrt(),
            epsilon = 1e-12
        );
        // massless Dirac reduces to Weyl
        let d0 = landau_levels(5, &p, LandauVariant::Dirac { mass: 1e-9 }).unwrap();
        assert_abs_diff_eq!(
            d0,
            landau_levels(5, &p, LandauVariant::Weyl).unwrap(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn eigenstates() {
        let s = SpaceSpec::single_mode(12).unwrap();
        let p = params(1.0);
        let h = transformed_hamiltonian(s, &p).unwrap();
        let e0 = landau_eigenstate(s, 0, Branch::Zero).unwrap();
        assert!(h.apply(e0.amplitudes().unwrap()).norm() < 1e-12);
        let plus = landau_eigenstate(s, 1, Branch::Plus).unwrap();
        let rq = expectation(&h, &plus).unwrap();
        assert!((rq - p.omega).abs() / p.omega < 1e-10);
        for n in 1..=12 {
            for b in [Branch::Plus, Branch::Minus] {
                let st = landau_eigenstate(s, n, b).unwrap();
                let v = st.amplitudes().unwrap();
                let res = h.apply(v) - v * C64::new(landau_energy(n, b, &p), 0.0);
                assert!(res.norm() < 1e-10 * p.omega);
            }
        }
        let sz = pauli(s, PauliAxis::Z);
        let minus = landau_eigenstate(s, 3, Branch::Minus).unwrap();
        let plus3 = landau_eigenstate(s, 3, Branch::Plus).unwrap();
        assert_abs_diff_eq!(expectation(&sz, &plus3).unwrap(), 0.0, epsilon = 1e-15);
        let cross = plus3
            .amplitudes()
            .unwrap()
            .dotc(&sz.apply(minus.amplitudes().unwrap()));
        assert_abs_diff_eq!(cross.re, -1.0, epsilon = 1e-15);
        assert!(landau_eigenstate(s, 0, Branch::Plus).is_err());
        assert!(landau_eigenstate(s, 13, Branch::Plus).is_err());
    }

    #[test]
    fn two_mode_spectrum_contains_landau_levels() {
        // Low-lying eigenvalues of the full model contain each ±Ω√(nr).
        let s = SpaceSpec::two_mode(10, 10).unwrap();
        let p = params(1.0);
        let ev = dense_spectrum(&weyl_hamiltonian(s, &p).unwrap());
        for n in 0..=3usize {
            let want = p.omega * (n as f64).sqrt();
            for sign in [1.0, -1.0] {
                let hits = ev
                    .iter()
                    .filter(|&&e| (e - sign * want).abs() < 1e-6 * p.omega)
                    .count();
                assert!(hits >= 2, "level n={n} sign={sign} found {hits} times");
            }
        }
    }
}
