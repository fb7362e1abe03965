//! Closed- and open-system time evolution on a fixed output grid.
//!
//! Unitary runs use a spectral propagator (one dense diagonalization) or, for
//! large truncations, a sparse scaled Taylor series. Dephasing runs integrate
//! the master equation with classic RK4 on the full density matrix.
//!
//! The dephasing dissipator L[√(2/τ) n̂] is diagonal in the Fock basis:
//! (2/τ)(n̂ρn̂ − {n̂², ρ}/2) has entries −(n_i − n_j)² ρ_ij / τ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analyze::TimeSeries;
use crate::error::{Error, Result};
use crate::fockspace::{LinOp, QState, StateKind, C64};
use crate::sparse::SparseOp;

/// Default RK4 substep cap: 0.5 µs.
pub const DEFAULT_DT_MAX: f64 = 0.5e-3;

/// Dimension above which [`PropagatorKind::Auto`] switches to the Taylor
/// propagator.
pub const SPECTRAL_DIM_LIMIT: usize = 1024;

const UNITARY_NORM_LIMIT: f64 = 1e-6;
const TRACE_LIMIT: f64 = 1e-6;
const POSITIVITY_LIMIT: f64 = 1e-6;
/// Shift used by the Cholesky positivity certificate.
pub const POSITIVITY_FLOOR: f64 = 1e-8;

/// Output sample grid in ms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_samples: usize,
    pub dt_max: f64,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_samples: usize) -> Result<Self> {
        Self::with_dt_max(t_start, t_end, n_samples, DEFAULT_DT_MAX)
    }

    pub fn with_dt_max(t_start: f64, t_end: f64, n_samples: usize, dt_max: f64) -> Result<Self> {
        let g = Self {
            t_start,
            t_end,
            n_samples,
            dt_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(format!(
                "grid needs t_end > t_start (got {} .. {})",
                self.t_start, self.t_end
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidParams(
                "grid needs at least two samples".into(),
            ));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidParams("dt_max must be positive".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_samples - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_samples)
            .map(|k| {
                if k + 1 == self.n_samples {
                    self.t_end
                } else {
                    self.t_start + k as f64 * h
                }
            })
            .collect()
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Per-mode motional dephasing times in ms (`f64::INFINITY` = off).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub tau_d_x: f64,
    pub tau_d_y: f64,
}

impl NoiseSpec {
    pub fn new(tau_d_x: f64, tau_d_y: f64) -> Result<Self> {
        for (name, t) in [("tau_d_x", tau_d_x), ("tau_d_y", tau_d_y)] {
            if !(t > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive or infinite"
                )));
            }
        }
        Ok(Self { tau_d_x, tau_d_y })
    }

    pub fn noiseless() -> Self {
        Self {
            tau_d_x: f64::INFINITY,
            tau_d_y: f64::INFINITY,
        }
    }

    /// 4 ms (x) and 3.5 ms (y).
    pub fn measured() -> Self {
        Self {
            tau_d_x: 4.0,
            tau_d_y: 3.5,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.tau_d_x.is_infinite() && self.tau_d_y.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorKind {
    #[default]
    Auto,
    Spectral,
    Taylor,
}

/// e^{−iHt} via a single dense eigendecomposition.
#[derive(Clone, Debug)]
pub struct SpectralPropagator {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<C64>,
}

impl SpectralPropagator {
    pub fn new(h: &LinOp) -> Result<Self> {
        check_hermitian(h)?;
        let eig = h.matrix().clone().symmetric_eigen();
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn to_eigenbasis(&self, psi: &DVector<C64>) -> DVector<C64> {
        self.eigenvectors.ad_mul(psi)
    }

    /// ψ(t) from eigenbasis coefficients of ψ(0).
    pub fn evolve_coefficients(&self, coeffs: &DVector<C64>, t: f64) -> DVector<C64> {
        let phased = DVector::from_fn(coeffs.len(), |k, _| {
            coeffs[k] * C64::from_polar(1.0, -self.eigenvalues[k] * t)
        });
        &self.eigenvectors * phased
    }

    pub fn propagate(&self, psi: &DVector<C64>, t: f64) -> DVector<C64> {
        self.evolve_coefficients(&self.to_eigenbasis(psi), t)
    }
}

/// e^{−iHt}ψ by a scaled Taylor series on the sparse operator.
#[derive(Clone, Debug)]
pub struct TaylorPropagator {
    h: SparseOp,
    norm: f64,
}

impl TaylorPropagator {
    pub fn new(h: &LinOp) -> Result<Self> {
        check_hermitian(h)?;
        let h = SparseOp::from_linop(h);
        let norm = h.inf_norm();
        Ok(Self { h, norm })
    }

    pub fn from_sparse(h: SparseOp) -> Self {
        let norm = h.inf_norm();
        Self { h, norm }
    }

    pub fn propagate(&self, psi: &DVector<C64>, t: f64) -> DVector<C64> {
        if t == 0.0 || self.norm == 0.0 {
            return psi.clone();
        }
        // substeps with ‖H‖·h ≤ 1 keep every Taylor term bounded by 1/k!
        let steps = (self.norm * t.abs()).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut v = psi.clone();
        let mut term = DVector::zeros(v.len());
        let mut next = DVector::zeros(v.len());
        for _ in 0..steps {
            term.copy_from(&v);
            let mut acc = v.clone();
            for k in 1..60 {
                self.h.mul_slice(term.as_slice(), next.as_mut_slice());
                let factor = C64::new(0.0, -h / k as f64);
                for (t_i, n_i) in term.iter_mut().zip(next.iter()) {
                    *t_i = n_i * factor;
                }
                acc += &term;
                if term.camax() <= 1e-17 * acc.camax() {
                    break;
                }
            }
            v = acc;
        }
        v
    }
}

/// Either propagator behind one interface.
#[derive(Clone, Debug)]
pub enum UnitaryPropagator {
    Spectral(SpectralPropagator),
    Taylor(TaylorPropagator),
}

impl UnitaryPropagator {
    pub fn new(h: &LinOp, kind: PropagatorKind) -> Result<Self> {
        let kind = match kind {
            PropagatorKind::Auto if h.dim() <= SPECTRAL_DIM_LIMIT => PropagatorKind::Spectral,
            PropagatorKind::Auto => PropagatorKind::Taylor,
            k => k,
        };
        Ok(match kind {
            PropagatorKind::Spectral => Self::Spectral(SpectralPropagator::new(h)?),
            _ => Self::Taylor(TaylorPropagator::new(h)?),
        })
    }

    /// Taylor stepping against an already sparse Hamiltonian.
    pub fn from_sparse(h: SparseOp) -> Result<Self> {
        check_sparse_hermitian(&h)?;
        Ok(Self::Taylor(TaylorPropagator::from_sparse(h)))
    }

    /// States at every grid sample, starting from `psi0` at `grid.t_start`.
    pub fn run(&self, psi0: &QState, grid: &TimeGrid) -> Result<Vec<QState>> {
        grid.validate()?;
        let v0 = psi0
            .amplitudes()
            .ok_or_else(|| Error::InvalidState("unitary evolution needs a pure state".into()))?;
        let space = psi0.space();
        let times = grid.times();
        let raw: Vec<DVector<C64>> = match self {
            Self::Spectral(p) => {
                let c = p.to_eigenbasis(v0);
                times
                    .iter()
                    .map(|&t| p.evolve_coefficients(&c, t - grid.t_start))
                    .collect()
            }
            Self::Taylor(p) => {
                let mut out = Vec::with_capacity(times.len());
                let mut v = v0.clone();
                let mut t_prev = grid.t_start;
                for &t in &times {
                    v = p.propagate(&v, t - t_prev);
                    t_prev = t;
                    out.push(v.clone());
                }
                out
            }
        };
        raw.into_iter()
            .zip(times)
            .map(|(v, t)| {
                let drift = (v.norm() - 1.0).abs();
                if drift > UNITARY_NORM_LIMIT {
                    return Err(Error::Convergence {
                        drift,
                        limit: UNITARY_NORM_LIMIT,
                        time: t,
                    });
                }
                Ok(QState::pure_unchecked(space, v))
            })
            .collect()
    }
}

fn check_sparse_hermitian(h: &SparseOp) -> Result<()> {
    let err = h.hermiticity_error();
    if err > 1e-9 * h.inf_norm().max(1.0) {
        return Err(Error::InvalidParams(format!(
            "Hamiltonian is not Hermitian (max |H - H^dagger| = {err:e})"
        )));
    }
    Ok(())
}

fn check_hermitian(h: &LinOp) -> Result<()> {
    let err = h.hermiticity_error();
    let scale = h.max_abs().max(1.0);
    if err > 1e-9 * scale {
        return Err(Error::InvalidParams(format!(
            "Hamiltonian is not Hermitian (max |H - H^dagger| = {err:e})"
        )));
    }
    Ok(())
}

/// Closed-system evolution of a pure state, sampled on `grid`.
pub fn evolve_unitary(h: &LinOp, psi0: &QState, grid: &TimeGrid) -> Result<Vec<QState>> {
    evolve_unitary_with(h, psi0, grid, PropagatorKind::Auto)
}

pub fn evolve_unitary_with(
    h: &LinOp,
    psi0: &QState,
    grid: &TimeGrid,
    kind: PropagatorKind,
) -> Result<Vec<QState>> {
    h.space().check_same(&psi0.space())?;
    UnitaryPropagator::new(h, kind)?.run(psi0, grid)
}

/// Worst-case invariant readings over a master-equation run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladDiagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Every sample passed the Cholesky test on ρ + 1e-8·I.
    pub positivity_certified: bool,
    /// Smallest eigenvalue seen at samples that failed the certificate.
    pub worst_min_eigenvalue: Option<f64>,
    pub substeps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LindbladOptions {
    pub check_positivity: bool,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            check_positivity: true,
        }
    }
}

/// Open-system evolution under motional dephasing, sampled on `grid`.
pub fn evolve_lindblad(
    h: &LinOp,
    noise: &NoiseSpec,
    rho0: &QState,
    grid: &TimeGrid,
) -> Result<Vec<QState>> {
    Ok(evolve_lindblad_report(h, noise, rho0, grid, &LindbladOptions::default())?.0)
}

pub fn evolve_lindblad_report(
    h: &LinOp,
    noise: &NoiseSpec,
    rho0: &QState,
    grid: &TimeGrid,
    opts: &LindbladOptions,
) -> Result<(Vec<QState>, LindbladDiagnostics)> {
    h.space().check_same(&rho0.space())?;
    check_hermitian(h)?;
    MasterEquation::new(SparseOp::from_linop(h), noise)?.run(rho0, grid, opts)
}

/// dρ/dt = −i[H, ρ] − Γ∘ρ with Γ_ij = Σ_modes (n_i − n_j)²/τ.
pub struct MasterEquation {
    h: SparseOp,
    gamma: Option<DMatrix<f64>>,
}

impl MasterEquation {
    pub fn new(h: SparseOp, noise: &NoiseSpec) -> Result<Self> {
        NoiseSpec::new(noise.tau_d_x, noise.tau_d_y)?;
        let space = h.space();
        let gamma = if noise.is_noiseless() {
            None
        } else {
            let dim = space.dim();
            let occupations: Vec<(f64, f64)> = (0..dim)
                .map(|k| {
                    let (_, nx, ny) = space.split(k);
                    (nx as f64, ny as f64)
                })
                .collect();
            let (gx, gy) = (1.0 / noise.tau_d_x, 1.0 / noise.tau_d_y);
            let gy = if space.is_single_mode() { 0.0 } else { gy };
            Some(DMatrix::from_fn(dim, dim, |i, j| {
                let dx = occupations[i].0 - occupations[j].0;
                let dy = occupations[i].1 - occupations[j].1;
                gx * dx * dx + gy * dy * dy
            }))
        };
        Ok(Self { h, gamma })
    }

    fn rhs(&self, rho: &DMatrix<C64>, work: &mut DMatrix<C64>, out: &mut DMatrix<C64>) {
        // work = Hρ; since ρ and H are Hermitian, ρH = (Hρ)†.
        self.h.mul_dense_into(rho, work);
        let n = rho.nrows();
        let minus_i = C64::new(0.0, -1.0);
        for j in 0..n {
            for i in 0..n {
                let comm = work[(i, j)] - work[(j, i)].conj();
                out[(i, j)] = minus_i * comm;
            }
        }
        if let Some(g) = &self.gamma {
            for (o, (r, gv)) in out.iter_mut().zip(rho.iter().zip(g.iter())) {
                *o -= r * *gv;
            }
        }
    }

    fn step(&self, rho: &mut DMatrix<C64>, dt: f64, buf: &mut Rk4Buffers) {
        let Rk4Buffers {
            k1,
            k2,
            k3,
            k4,
            tmp,
            work,
        } = buf;
        self.rhs(rho, work, k1);
        tmp.copy_from(rho);
        add_scaled(tmp, k1, dt / 2.0);
        self.rhs(tmp, work, k2);
        tmp.copy_from(rho);
        add_scaled(tmp, k2, dt / 2.0);
        self.rhs(tmp, work, k3);
        tmp.copy_from(rho);
        add_scaled(tmp, k3, dt);
        self.rhs(tmp, work, k4);
        let w = dt / 6.0;
        add_scaled(rho, k1, w);
        add_scaled(rho, k2, 2.0 * w);
        add_scaled(rho, k3, 2.0 * w);
        add_scaled(rho, k4, w);
    }

    pub fn run(
        &self,
        rho0: &QState,
        grid: &TimeGrid,
        opts: &LindbladOptions,
    ) -> Result<(Vec<QState>, LindbladDiagnostics)> {
        grid.validate()?;
        let space = self.h.space();
        rho0.space().check_same(&space)?;
        if rho0.kind() == StateKind::Mixed {
            QState::mixed(space, rho0.to_density_matrix())?;
        }
        let dim = space.dim();
        let mut rho = rho0.to_density_matrix();
        let mut buf = Rk4Buffers::new(dim);
        let times = grid.times();
        let mut diag = LindbladDiagnostics {
            max_trace_drift: 0.0,
            max_hermiticity_error: 0.0,
            positivity_certified: true,
            worst_min_eigenvalue: None,
            substeps: 0,
        };
        let mut out = Vec::with_capacity(times.len());
        let mut t_prev = grid.t_start;
        for &t in &times {
            let span = t - t_prev;
            if span > 0.0 {
                let n = (span / grid.dt_max).ceil().max(1.0) as usize;
                let dt = span / n as f64;
                for _ in 0..n {
                    self.step(&mut rho, dt, &mut buf);
                }
                diag.substeps += n;
            }
            t_prev = t;
            let state = QState::mixed_unchecked(space, rho.clone());
            let drift = (state.trace() - 1.0).abs();
            diag.max_trace_drift = diag.max_trace_drift.max(drift);
            if drift > TRACE_LIMIT {
                return Err(Error::Convergence {
                    drift,
                    limit: TRACE_LIMIT,
                    time: t,
                });
            }
            diag.max_hermiticity_error = diag.max_hermiticity_error.max(state.hermiticity_error());
            if opts.check_positivity && !positivity_certificate(&rho) {
                diag.positivity_certified = false;
                let min = state.min_eigenvalue();
                diag.worst_min_eigenvalue =
                    Some(diag.worst_min_eigenvalue.map_or(min, |w: f64| w.min(min)));
                if min < -POSITIVITY_LIMIT {
                    return Err(Error::Positivity {
                        min_eigenvalue: min,
                        time: t,
                    });
                }
            }
            out.push(state);
        }
        Ok((out, diag))
    }
}

/// `dst += a * src`
fn add_scaled(dst: &mut DMatrix<C64>, src: &DMatrix<C64>, a: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s * a;
    }
}

struct Rk4Buffers {
    k1: DMatrix<C64>,
    k2: DMatrix<C64>,
    k3: DMatrix<C64>,
    k4: DMatrix<C64>,
    tmp: DMatrix<C64>,
    work: DMatrix<C64>,
}

impl Rk4Buffers {
    fn new(dim: usize) -> Self {
        let z = || DMatrix::zeros(dim, dim);
        Self {
            k1: z(),
            k2: z(),
            k3: z(),
            k4: z(),
            tmp: z(),
            work: z(),
        }
    }
}

/// True when ρ + 1e-8·I admits a Cholesky factorization, i.e. the smallest
/// eigenvalue of ρ exceeds −1e-8.
pub fn positivity_certificate(rho: &DMatrix<C64>) -> bool {
    let n = rho.nrows();
    let shifted = rho + DMatrix::<C64>::identity(n, n) * C64::new(POSITIVITY_FLOOR, 0.0);
    shifted.cholesky().is_some()
}

/// Expectation of `obs` at each state, labelled with the grid times.
pub fn observable_series(
    states: &[QState],
    obs: &LinOp,
    grid: &TimeGrid,
    label: &str,
) -> Result<TimeSeries> {
    sparse_observable_series(states, &SparseOp::from_linop(obs), grid, label)
}

pub fn sparse_observable_series(
    states: &[QState],
    sparse: &SparseOp,
    grid: &TimeGrid,
    label: &str,
) -> Result<TimeSeries> {
    let times = grid.times();
    if times.len() != states.len() {
        return Err(Error::InvalidParams(format!(
            "{} states for {} grid samples",
            states.len(),
            times.len()
        )));
    }
    let values = states
        .iter()
        .map(|s| sparse_expectation(sparse, s))
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(times, values, label)
}

/// ⟨O⟩ using the sparse form of O; same contract as
/// [`crate::fockspace::expectation`].
pub fn sparse_expectation(obs: &SparseOp, state: &QState) -> Result<f64> {
    obs.space().check_same(&state.space())?;
    let z = match (state.amplitudes(), state.density()) {
        (Some(v), _) => v.dotc(&obs.mul_vec(v)),
        (None, Some(rho)) => {
            // Tr(Oρ) = Σ_i Σ_k O_ik ρ_ki
            let mut acc = C64::new(0.0, 0.0);
            let dim = obs.dim();
            let mut col = DVector::zeros(dim);
            let mut prod = DVector::zeros(dim);
            for k in 0..dim {
                col.copy_from(&rho.column(k));
                obs.mul_slice(col.as_slice(), prod.as_mut_slice());
                acc += prod[k];
            }
            acc
        }
        _ => unreachable!(),
    };
    if z.im.abs() > crate::fockspace::STATE_TOL {
        return Err(Error::NonHermitian(z.im));
    }
    Ok(z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{
        coherent_state, complex_expectation, expectation, mode_lowering, mode_number, pauli,
        quadrature, Mode, PauliAxis, Quadrature, SpaceSpec, SpinState,
    };
    use crate::model::{weyl_hamiltonian, weyl_hamiltonian_sparse, SimParams};

    fn setup() -> (SpaceSpec, LinOp, QState) {
        let s = SpaceSpec::two_mode(6, 5).unwrap();
        let p = SimParams::new(4.2, 1.0).unwrap();
        let h = weyl_hamiltonian(s, &p).unwrap();
        let psi =
            coherent_state(s, C64::new(0.1, 0.4), C64::new(-0.2, 0.0), SpinState::PlusX).unwrap();
        (s, h, psi)
    }

    fn max_amp_diff(a: &[QState], b: &[QState]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x.amplitudes().unwrap() - y.amplitudes().unwrap()).camax())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_hamiltonian_leaves_state_fixed() {
        let (s, _, psi) = setup();
        let grid = TimeGrid::new(0.0, 0.1, 5).unwrap();
        let h = LinOp::zeros(s);
        for kind in [PropagatorKind::Spectral, PropagatorKind::Taylor] {
            for st in evolve_unitary_with(&h, &psi, &grid, kind).unwrap() {
                assert!((st.amplitudes().unwrap() - psi.amplitudes().unwrap()).camax() < 1e-14);
            }
        }
        let rho = evolve_lindblad(&h, &NoiseSpec::noiseless(), &psi, &grid).unwrap();
        assert!((rho[4].to_density_matrix() - psi.to_density_matrix()).camax() < 1e-14);
    }

    #[test]
    fn spectral_and_taylor_agree() {
        let (_, h, psi) = setup();
        let grid = TimeGrid::new(0.0, 0.3, 31).unwrap();
        let a = evolve_unitary_with(&h, &psi, &grid, PropagatorKind::Spectral).unwrap();
        let b = evolve_unitary_with(&h, &psi, &grid, PropagatorKind::Taylor).unwrap();
        assert!(max_amp_diff(&a, &b) < 1e-10);
        let p = SimParams::new(4.2, 1.0).unwrap();
        let c = UnitaryPropagator::from_sparse(weyl_hamiltonian_sparse(psi.space(), &p).unwrap())
            .unwrap()
            .run(&psi, &grid)
            .unwrap();
        assert!(max_amp_diff(&b, &c) < 1e-12);
    }

    #[test]
    fn heisenberg_rate_matches_finite_difference() {
        // d⟨O⟩/dt = i⟨[H, O]⟩
        let (s, h, psi) = setup();
        let dt = 1e-5;
        let grid = TimeGrid::new(0.0, 2.0 * dt, 3).unwrap();
        let states = evolve_unitary(&h, &psi, &grid).unwrap();
        for obs in [
            pauli(s, PauliAxis::Y),
            quadrature(s, Mode::X, Quadrature::Position).unwrap(),
        ] {
            let fd = (expectation(&obs, &states[2]).unwrap()
                - expectation(&obs, &states[0]).unwrap())
                / (2.0 * dt);
            let rate =
                complex_expectation(&h.commutator(&obs), &states[1]).unwrap() * C64::new(0.0, 1.0);
            assert!(
                (fd - rate.re).abs() < 1e-5 * rate.norm().max(1.0),
                "{fd} vs {rate}"
            );
        }
    }

    #[test]
    fn infinite_dephasing_time_matches_unitary() {
        let (s, h, psi) = setup();
        let grid = TimeGrid::new(0.0, 0.2, 11).unwrap();
        let pure = evolve_unitary(&h, &psi, &grid).unwrap();
        let mixed = evolve_lindblad(&h, &NoiseSpec::noiseless(), &psi, &grid).unwrap();
        let sz = pauli(s, PauliAxis::Z);
        for (a, b) in pure.iter().zip(&mixed) {
            assert!((expectation(&sz, a).unwrap() - expectation(&sz, b).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn dephasing_keeps_populations_and_decays_coherence() {
        let s = SpaceSpec::single_mode(14).unwrap();
        let psi =
            coherent_state(s, C64::new(0.6, 0.5), C64::new(0.0, 0.0), SpinState::PlusZ).unwrap();
        let tau = 1.5;
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let noise = NoiseSpec::new(tau, f64::INFINITY).unwrap();
        let out = evolve_lindblad(&LinOp::zeros(s), &noise, &psi, &grid).unwrap();
        let (a, n) = (
            mode_lowering(s, Mode::X).unwrap(),
            mode_number(s, Mode::X).unwrap(),
        );
        let a0 = complex_expectation(&a, &psi).unwrap();
        for (t, st) in grid.times().iter().zip(&out) {
            assert!((expectation(&n, st).unwrap() - expectation(&n, &psi).unwrap()).abs() < 1e-12);
            // adjacent Fock coherences decay as exp(−t/τ)
            let at = complex_expectation(&a, st).unwrap();
            assert!((at - a0 * (-t / tau).exp()).norm() < 1e-10);
        }
    }

    #[test]
    fn halving_the_substep_changes_little() {
        let (_, h, psi) = setup();
        let noise = NoiseSpec::measured();
        let coarse = TimeGrid::new(0.0, 0.2, 5).unwrap();
        let fine = TimeGrid::with_dt_max(0.0, 0.2, 5, DEFAULT_DT_MAX / 2.0).unwrap();
        let a = evolve_lindblad(&h, &noise, &psi, &coarse).unwrap();
        let b = evolve_lindblad(&h, &noise, &psi, &fine).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.to_density_matrix() - y.to_density_matrix()).camax() < 1e-7);
        }
    }

    #[test]
    fn lindblad_invariants_hold() {
        let (_, h, psi) = setup();
        let grid = TimeGrid::new(0.0, 0.5, 26).unwrap();
        let (states, diag) = evolve_lindblad_report(
            &h,
            &NoiseSpec::measured(),
            &psi,
            &grid,
            &LindbladOptions::default(),
        )
        .unwrap();
        assert_eq!(states.len(), 26);
        assert!(diag.max_trace_drift < 1e-10);
        assert!(diag.max_hermiticity_error < 1e-12);
        assert!(diag.positivity_certified);
        assert!(states[25].purity() < 1.0 - 1e-4);
    }

    #[test]
    fn non_hermitian_hamiltonians_are_rejected() {
        let (s, h, psi) = setup();
        let bad = &h + &(mode_lowering(s, Mode::X).unwrap() * 1.0);
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        assert!(evolve_unitary(&bad, &psi, &grid).is_err());
        assert!(evolve_lindblad(&bad, &NoiseSpec::noiseless(), &psi, &grid).is_err());
        assert!(UnitaryPropagator::from_sparse(SparseOp::from_linop(&bad)).is_err());
    }

    #[test]
    fn grids_and_noise_validate() {
        assert!(TimeGrid::new(0.0, 0.0, 5).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::with_dt_max(0.0, 1.0, 3, 0.0).is_err());
        let g = TimeGrid::new(0.1, 0.4, 4).unwrap();
        assert_eq!(g.times().last().copied(), Some(0.4));
        assert!((g.spacing() - 0.1).abs() < 1e-15);
        assert!(NoiseSpec::new(-1.0, 2.0).is_err());
        assert!(NoiseSpec::new(f64::INFINITY, f64::INFINITY)
            .unwrap()
            .is_noiseless());
    }

    #[test]
    fn mixed_start_needs_lindblad() {
        let (_, h, psi) = setup();
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        assert!(evolve_unitary(&h, &psi.to_mixed(), &grid).is_err());
        assert!(evolve_lindblad(&h, &NoiseSpec::noiseless(), &psi.to_mixed(), &grid).is_ok());
    }
}
