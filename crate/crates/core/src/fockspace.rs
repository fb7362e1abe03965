//! Composite Hilbert space of one qubit and up to two truncated bosonic modes.
//!
//! Tensor order is qubit ⊗ x ⊗ y and the spin basis order is (|+z⟩, |−z⟩),
//! so basis index `s·(nx+1)(ny+1) + i·(ny+1) + j` labels |s⟩|i⟩_x|j⟩_y with
//! `s = 0` for |+z⟩. A single-mode space keeps only the x slot (its y
//! register has dimension one).
//!
//! Quadratures use x̂ = (â+â†)/√2 and p̂ = i(â†−â)/√2.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Truncation of the two motional modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSpec {
    n_max_x: usize,
    /// Zero marks a single-mode space.
    n_max_y: usize,
}

impl SpaceSpec {
    pub fn two_mode(n_max_x: usize, n_max_y: usize) -> Result<Self> {
        if n_max_x < 1 || n_max_y < 1 {
            return Err(Error::InvalidSpace(format!(
                "n_max must be at least 1 per mode (got x = {n_max_x}, y = {n_max_y})"
            )));
        }
        Ok(Self { n_max_x, n_max_y })
    }

    /// Qubit ⊗ one mode, used by the transformed Landau model and the probe.
    pub fn single_mode(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidSpace("n_max must be at least 1".into()));
        }
        Ok(Self {
            n_max_x: n_max,
            n_max_y: 0,
        })
    }

    pub fn is_single_mode(&self) -> bool {
        self.n_max_y == 0
    }

    pub fn n_max(&self, mode: Mode) -> Option<usize> {
        match (mode, self.is_single_mode()) {
            (Mode::X, _) => Some(self.n_max_x),
            (Mode::Y, false) => Some(self.n_max_y),
            (Mode::Y, true) => None,
        }
    }

    pub fn levels_x(&self) -> usize {
        self.n_max_x + 1
    }

    pub fn levels_y(&self) -> usize {
        self.n_max_y + 1
    }

    pub fn motional_dim(&self) -> usize {
        self.levels_x() * self.levels_y()
    }

    pub fn dim(&self) -> usize {
        2 * self.motional_dim()
    }

    pub fn index(&self, spin: usize, nx: usize, ny: usize) -> usize {
        debug_assert!(spin < 2 && nx < self.levels_x() && ny < self.levels_y());
        spin * self.motional_dim() + nx * self.levels_y() + ny
    }

    /// Inverse of [`SpaceSpec::index`].
    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let m = self.motional_dim();
        let spin = idx / m;
        let rest = idx % m;
        (spin, rest / self.levels_y(), rest % self.levels_y())
    }

    pub(crate) fn require_mode(&self, mode: Mode) -> Result<usize> {
        self.n_max(mode).ok_or_else(|| {
            Error::InvalidSpace(format!("mode {mode:?} absent in single-mode space"))
        })
    }

    pub(crate) fn check_same(&self, other: &SpaceSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

impl fmt::Display for SpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_single_mode() {
            write!(f, "qubit x mode[0..={}]", self.n_max_x)
        } else {
            write!(
                f,
                "qubit x mode_x[0..={}] x mode_y[0..={}]",
                self.n_max_x, self.n_max_y
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Position,
    Momentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
    /// σ̂+ with σ̂+|−z⟩ = |+z⟩.
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinState {
    PlusZ,
    MinusZ,
    PlusX,
    MinusX,
}

impl SpinState {
    /// Components in the (|+z⟩, |−z⟩) basis.
    pub fn amplitudes(self) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            SpinState::PlusZ => [ONE, ZERO],
            SpinState::MinusZ => [ZERO, ONE],
            SpinState::PlusX => [C64::new(h, 0.0), C64::new(h, 0.0)],
            SpinState::MinusX => [C64::new(h, 0.0), C64::new(-h, 0.0)],
        }
    }
}

pub fn pauli_matrix(axis: PauliAxis) -> Matrix2<C64> {
    match axis {
        PauliAxis::X => Matrix2::new(ZERO, ONE, ONE, ZERO),
        PauliAxis::Y => Matrix2::new(ZERO, -I, I, ZERO),
        PauliAxis::Z => Matrix2::new(ONE, ZERO, ZERO, -ONE),
        PauliAxis::Plus => Matrix2::new(ZERO, ONE, ZERO, ZERO),
        PauliAxis::Minus => Matrix2::new(ZERO, ZERO, ONE, ZERO),
    }
}

/// Truncated annihilation operator on levels 0..=n_max.
pub fn lowering_matrix(n_max: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(n_max + 1, n_max + 1);
    for n in 1..=n_max {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn quadrature_matrix(n_max: usize, which: Quadrature) -> DMatrix<C64> {
    let a = lowering_matrix(n_max);
    let ad = a.adjoint();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match which {
        Quadrature::Position => (&a + &ad) * C64::new(s, 0.0),
        Quadrature::Momentum => (&ad - &a) * C64::new(0.0, s),
    }
}

pub fn number_matrix(n_max: usize) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_fn(n_max + 1, |n, _| C64::new(n as f64, 0.0)))
}

/// Operator on the composite space, stored dense.
#[derive(Clone, Debug, PartialEq)]
pub struct LinOp {
    space: SpaceSpec,
    matrix: DMatrix<C64>,
}

impl LinOp {
    pub fn from_matrix(space: SpaceSpec, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != space.dim() || matrix.ncols() != space.dim() {
            return Err(Error::InvalidSpace(format!(
                "matrix is {}x{}, space dimension is {}",
                matrix.nrows(),
                matrix.ncols(),
                space.dim()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn zeros(space: SpaceSpec) -> Self {
        Self {
            space,
            matrix: DMatrix::zeros(space.dim(), space.dim()),
        }
    }

    pub fn identity(space: SpaceSpec) -> Self {
        Self {
            space,
            matrix: DMatrix::identity(space.dim(), space.dim()),
        }
    }

    /// spin ⊗ x_op ⊗ y_op, built entry by entry from the factors' nonzeros.
    /// `y_op` is ignored (taken as the 1×1 identity) on single-mode spaces.
    pub fn tensor(
        space: SpaceSpec,
        spin: &Matrix2<C64>,
        x_op: &DMatrix<C64>,
        y_op: &DMatrix<C64>,
    ) -> Self {
        let nz = |m: &DMatrix<C64>| -> Vec<(usize, usize, C64)> {
            let mut v = Vec::new();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let e = m[(i, j)];
                    if e != ZERO {
                        v.push((i, j, e));
                    }
                }
            }
            v
        };
        let one = DMatrix::from_element(1, 1, ONE);
        let y_op = if space.is_single_mode() { &one } else { y_op };
        debug_assert_eq!(x_op.nrows(), space.levels_x());
        debug_assert_eq!(y_op.nrows(), space.levels_y());
        let (xs, ys) = (nz(x_op), nz(y_op));
        let mut out = DMatrix::zeros(space.dim(), space.dim());
        for s in 0..2 {
            for t in 0..2 {
                let sv = spin[(s, t)];
                if sv == ZERO {
                    continue;
                }
                for &(xi, xj, xv) in &xs {
                    for &(yi, yj, yv) in &ys {
                        out[(space.index(s, xi, yi), space.index(t, xj, yj))] += sv * xv * yv;
                    }
                }
            }
        }
        Self { space, matrix: out }
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
        }
    }

    /// Largest elementwise |O − O†|.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn commutator(&self, other: &LinOp) -> LinOp {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &LinOp) -> LinOp {
        &(self * other) + &(other * self)
    }

    pub fn scale(&self, factor: C64) -> LinOp {
        LinOp {
            space: self.space,
            matrix: &self.matrix * factor,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.matrix * v
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for &LinOp {
            type Output = LinOp;
            fn $f(self, rhs: &LinOp) -> LinOp {
                assert_eq!(self.space, rhs.space, "operator spaces differ");
                LinOp { space: self.space, matrix: &self.matrix $op &rhs.matrix }
            }
        }
        impl $tr for LinOp {
            type Output = LinOp;
            fn $f(self, rhs: LinOp) -> LinOp {
                (&self) $op (&rhs)
            }
        }
    };
}
binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Mul<f64> for &LinOp {
    type Output = LinOp;
    fn mul(self, rhs: f64) -> LinOp {
        self.scale(C64::new(rhs, 0.0))
    }
}

impl Mul<f64> for LinOp {
    type Output = LinOp;
    fn mul(self, rhs: f64) -> LinOp {
        (&self) * rhs
    }
}

impl Neg for LinOp {
    type Output = LinOp;
    fn neg(self) -> LinOp {
        self * -1.0
    }
}

fn mode_factor(space: SpaceSpec, mode: Mode, op: DMatrix<C64>) -> Result<LinOp> {
    space.require_mode(mode)?;
    let ix = DMatrix::identity(space.levels_x(), space.levels_x());
    let iy = DMatrix::identity(space.levels_y(), space.levels_y());
    let spin = Matrix2::identity();
    Ok(match mode {
        Mode::X => LinOp::tensor(space, &spin, &op, &iy),
        Mode::Y => LinOp::tensor(space, &spin, &ix, &op),
    })
}

/// Spin operator times a single-mode operator on `mode`.
pub(crate) fn spin_mode_product(
    space: SpaceSpec,
    spin: &Matrix2<C64>,
    mode: Mode,
    op: &DMatrix<C64>,
) -> Result<LinOp> {
    space.require_mode(mode)?;
    let ix = DMatrix::identity(space.levels_x(), space.levels_x());
    let iy = DMatrix::identity(space.levels_y(), space.levels_y());
    Ok(match mode {
        Mode::X => LinOp::tensor(space, spin, op, &iy),
        Mode::Y => LinOp::tensor(space, spin, &ix, op),
    })
}

pub fn mode_lowering(space: SpaceSpec, mode: Mode) -> Result<LinOp> {
    let n = space.require_mode(mode)?;
    mode_factor(space, mode, lowering_matrix(n))
}

pub fn mode_number(space: SpaceSpec, mode: Mode) -> Result<LinOp> {
    let n = space.require_mode(mode)?;
    mode_factor(space, mode, number_matrix(n))
}

pub fn quadrature(space: SpaceSpec, mode: Mode, which: Quadrature) -> Result<LinOp> {
    let n = space.require_mode(mode)?;
    mode_factor(space, mode, quadrature_matrix(n, which))
}

pub fn pauli(space: SpaceSpec, axis: PauliAxis) -> LinOp {
    LinOp::tensor(
        space,
        &pauli_matrix(axis),
        &DMatrix::identity(space.levels_x(), space.levels_x()),
        &DMatrix::identity(space.levels_y(), space.levels_y()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Pure,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
enum StateData {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

/// Pure state vector or density matrix on a [`SpaceSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct QState {
    space: SpaceSpec,
    data: StateData,
}

pub const STATE_TOL: f64 = 1e-9;

impl QState {
    /// Validated pure state; the norm must already be within 1e-9 of one.
    pub fn pure(space: SpaceSpec, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::InvalidState(format!(
                "{} amplitudes for dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self {
            space,
            data: StateData::Pure(amplitudes),
        })
    }

    /// Pure state from unnormalized amplitudes.
    pub fn normalized(space: SpaceSpec, mut amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        amplitudes /= C64::new(norm, 0.0);
        Self::pure(space, amplitudes)
    }

    /// Density matrix; trace and Hermiticity are checked here, positivity by
    /// [`QState::min_eigenvalue`].
    pub fn mixed(space: SpaceSpec, rho: DMatrix<C64>) -> Result<Self> {
        if rho.nrows() != space.dim() || rho.ncols() != space.dim() {
            return Err(Error::InvalidState(format!(
                "density matrix is {}x{}, space dimension is {}",
                rho.nrows(),
                rho.ncols(),
                space.dim()
            )));
        }
        let state = Self {
            space,
            data: StateData::Mixed(rho),
        };
        let tr = state.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let herm = state.hermiticity_error();
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian ({herm:e})"
            )));
        }
        Ok(state)
    }

    pub(crate) fn pure_unchecked(space: SpaceSpec, amplitudes: DVector<C64>) -> Self {
        Self {
            space,
            data: StateData::Pure(amplitudes),
        }
    }

    pub(crate) fn mixed_unchecked(space: SpaceSpec, rho: DMatrix<C64>) -> Self {
        Self {
            space,
            data: StateData::Mixed(rho),
        }
    }

    /// Product state spin ⊗ x-amplitudes ⊗ y-amplitudes (y ignored on a
    /// single-mode space).
    pub fn product(space: SpaceSpec, spin: [C64; 2], x: &[C64], y: &[C64]) -> Result<Self> {
        let y_one = [ONE];
        let y = if space.is_single_mode() {
            &y_one[..]
        } else {
            y
        };
        if x.len() != space.levels_x() || y.len() != space.levels_y() {
            return Err(Error::InvalidState(
                "factor lengths do not match the space".into(),
            ));
        }
        let mut v = DVector::zeros(space.dim());
        for (s, &sv) in spin.iter().enumerate() {
            for (i, &xv) in x.iter().enumerate() {
                for (j, &yv) in y.iter().enumerate() {
                    v[space.index(s, i, j)] = sv * xv * yv;
                }
            }
        }
        Self::normalized(space, v)
    }

    pub fn fock(space: SpaceSpec, spin: SpinState, nx: usize, ny: usize) -> Result<Self> {
        if nx >= space.levels_x() || ny >= space.levels_y() {
            return Err(Error::Truncation(format!(
                "Fock level ({nx}, {ny}) beyond cutoff"
            )));
        }
        let mut x = vec![ZERO; space.levels_x()];
        let mut y = vec![ZERO; space.levels_y()];
        x[nx] = ONE;
        y[ny] = ONE;
        Self::product(space, spin.amplitudes(), &x, &y)
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn kind(&self) -> StateKind {
        match self.data {
            StateData::Pure(_) => StateKind::Pure,
            StateData::Mixed(_) => StateKind::Mixed,
        }
    }

    pub fn amplitudes(&self) -> Option<&DVector<C64>> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Mixed(_) => None,
        }
    }

    pub fn density(&self) -> Option<&DMatrix<C64>> {
        match &self.data {
            StateData::Pure(_) => None,
            StateData::Mixed(m) => Some(m),
        }
    }

    pub fn to_density_matrix(&self) -> DMatrix<C64> {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Mixed(m) => m.clone(),
        }
    }

    pub fn to_mixed(&self) -> QState {
        QState::mixed_unchecked(self.space, self.to_density_matrix())
    }

    pub fn norm(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm(),
            StateData::Mixed(_) => self.trace().sqrt(),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared(),
            StateData::Mixed(m) => m.diagonal().iter().map(|c| c.re).sum(),
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        match &self.data {
            StateData::Pure(_) => 0.0,
            StateData::Mixed(m) => {
                let n = m.nrows();
                let mut worst = 0.0f64;
                for j in 0..n {
                    for i in 0..=j {
                        worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
                    }
                }
                worst
            }
        }
    }

    /// Smallest eigenvalue of the density matrix (1 − norm² complement is 0 for
    /// pure states).
    pub fn min_eigenvalue(&self) -> f64 {
        match &self.data {
            StateData::Pure(_) => 0.0,
            StateData::Mixed(m) => m.clone().symmetric_eigenvalues().min(),
        }
    }

    pub fn purity(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared().powi(2),
            StateData::Mixed(m) => m.iter().map(|c| c.norm_sqr()).sum(),
        }
    }

    /// Reduced density matrix of the motion (partial trace over the qubit),
    /// of dimension (nx+1)(ny+1).
    pub fn motional_density(&self) -> DMatrix<C64> {
        let m = self.space.motional_dim();
        match &self.data {
            StateData::Pure(v) => {
                let up = v.rows(0, m);
                let down = v.rows(m, m);
                up * up.adjoint() + down * down.adjoint()
            }
            StateData::Mixed(r) => r.view((0, 0), (m, m)) + r.view((m, m), (m, m)),
        }
    }

    /// 2×2 reduced spin density matrix.
    pub fn spin_density(&self) -> Matrix2<C64> {
        let m = self.space.motional_dim();
        let rho = self.to_density_matrix();
        let mut out = Matrix2::zeros();
        for s in 0..2 {
            for t in 0..2 {
                out[(s, t)] = (0..m).map(|k| rho[(s * m + k, t * m + k)]).sum();
            }
        }
        out
    }

    /// Partial trace over the other mode, leaving qubit ⊗ `mode` as a
    /// single-mode state. The kept mode occupies the x slot of the result.
    pub fn reduce_to_mode(&self, mode: Mode) -> Result<QState> {
        let n = self.space.require_mode(mode)?;
        let target = SpaceSpec::single_mode(n)?;
        if self.space.is_single_mode() {
            return Ok(QState::mixed_unchecked(target, self.to_density_matrix()));
        }
        let sp = self.space;
        let keep = n + 1;
        let other = match mode {
            Mode::X => sp.levels_y(),
            Mode::Y => sp.levels_x(),
        };
        let full_index = |s: usize, k: usize, o: usize| match mode {
            Mode::X => sp.index(s, k, o),
            Mode::Y => sp.index(s, o, k),
        };
        let dim = 2 * keep;
        let mut out = DMatrix::zeros(dim, dim);
        let rho = self.to_density_matrix();
        for s in 0..2 {
            for k in 0..keep {
                for t in 0..2 {
                    for l in 0..keep {
                        let mut acc = ZERO;
                        for o in 0..other {
                            acc += rho[(full_index(s, k, o), full_index(t, l, o))];
                        }
                        out[(target.index(s, k, 0), target.index(t, l, 0))] = acc;
                    }
                }
            }
        }
        Ok(QState::mixed_unchecked(target, out))
    }
}

/// Coherent-state Fock amplitudes c_n = e^{−|α|²/2} αⁿ/√n! for n = 0..=n_max,
/// together with the pre-normalization leakage 1 − Σ|c_n|².
pub fn coherent_amplitudes(alpha: C64, n_max: usize) -> (Vec<C64>, f64) {
    let mut c = Vec::with_capacity(n_max + 1);
    let mut term = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    c.push(term);
    for n in 1..=n_max {
        term = term * alpha / (n as f64).sqrt();
        c.push(term);
    }
    let kept: f64 = c.iter().map(|v| v.norm_sqr()).sum();
    (c, 1.0 - kept)
}

/// Largest |α|² accepted per mode, as a fraction of the cutoff.
pub const LEAKAGE_GUARD: f64 = 0.25;

fn guarded_coherent(alpha: C64, n_max: usize, label: &str) -> Result<Vec<C64>> {
    if alpha.norm_sqr() > LEAKAGE_GUARD * n_max as f64 {
        return Err(Error::Truncation(format!(
            "|alpha_{label}|^2 = {:.4} exceeds n_max/4 = {:.4}; raise n_max",
            alpha.norm_sqr(),
            LEAKAGE_GUARD * n_max as f64
        )));
    }
    let (mut c, _) = coherent_amplitudes(alpha, n_max);
    let norm = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    for v in &mut c {
        *v /= norm;
    }
    Ok(c)
}

/// spin ⊗ |α_x⟩ ⊗ |α_y⟩, each truncated coherent state renormalized.
/// On a single-mode space `alpha_y` must be zero.
pub fn coherent_state(
    space: SpaceSpec,
    alpha_x: C64,
    alpha_y: C64,
    spin: SpinState,
) -> Result<QState> {
    let cx = guarded_coherent(alpha_x, space.n_max_x, "x")?;
    let cy = if space.is_single_mode() {
        if alpha_y != ZERO {
            return Err(Error::InvalidState(
                "alpha_y given for a single-mode space".into(),
            ));
        }
        vec![ONE]
    } else {
        guarded_coherent(alpha_y, space.n_max_y, "y")?
    };
    QState::product(space, spin.amplitudes(), &cx, &cy)
}

/// exp(−i·angle·σ/2) for a Pauli axis.
pub fn rotation_matrix(axis: Axis, angle: f64) -> Matrix2<C64> {
    let sigma = pauli_matrix(match axis {
        Axis::X => PauliAxis::X,
        Axis::Y => PauliAxis::Y,
        Axis::Z => PauliAxis::Z,
    });
    let (s, c) = (angle / 2.0).sin_cos();
    Matrix2::identity() * C64::new(c, 0.0) - sigma * C64::new(0.0, s)
}

fn apply_spin_unitary(state: &QState, u: &Matrix2<C64>) -> QState {
    let m = state.space.motional_dim();
    match &state.data {
        StateData::Pure(v) => {
            let up = v.rows(0, m);
            let down = v.rows(m, m);
            let mut out = DVector::zeros(2 * m);
            out.rows_mut(0, m)
                .copy_from(&(up * u[(0, 0)] + down * u[(0, 1)]));
            out.rows_mut(m, m)
                .copy_from(&(up * u[(1, 0)] + down * u[(1, 1)]));
            QState {
                space: state.space,
                data: StateData::Pure(out),
            }
        }
        StateData::Mixed(r) => {
            let block = |a: usize, b: usize| r.view((a * m, b * m), (m, m)).into_owned();
            let blocks = [[block(0, 0), block(0, 1)], [block(1, 0), block(1, 1)]];
            let mut out = DMatrix::zeros(2 * m, 2 * m);
            for a in 0..2 {
                for b in 0..2 {
                    let mut acc = DMatrix::zeros(m, m);
                    for (c, row) in blocks.iter().enumerate() {
                        for (d, blk) in row.iter().enumerate() {
                            let w = u[(a, c)] * u[(b, d)].conj();
                            if w != ZERO {
                                acc += blk * w;
                            }
                        }
                    }
                    out.view_mut((a * m, b * m), (m, m)).copy_from(&acc);
                }
            }
            QState::mixed_unchecked(state.space, out)
        }
    }
}

/// Applies exp(−i·angle·σ_axis/2) to the spin factor.
pub fn spin_rotation(state: &QState, axis: Axis, angle: f64) -> QState {
    apply_spin_unitary(state, &rotation_matrix(axis, angle))
}

/// Discards the spin and re-prepares it in `target`; the motional reduced
/// state is untouched. Always returns a mixed state.
pub fn spin_reset(state: &QState, target: SpinState) -> QState {
    let m = state.space.motional_dim();
    let motion = state.motional_density();
    let t = target.amplitudes();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..2 {
        for b in 0..2 {
            let w = t[a] * t[b].conj();
            if w != ZERO {
                out.view_mut((a * m, b * m), (m, m))
                    .copy_from(&(&motion * w));
            }
        }
    }
    QState::mixed_unchecked(state.space, out)
}

/// ⟨ψ|O|ψ⟩ or Tr(ρO) without the Hermiticity check.
pub fn complex_expectation(obs: &LinOp, state: &QState) -> Result<C64> {
    obs.space.check_same(&state.space)?;
    Ok(match &state.data {
        StateData::Pure(v) => v.dotc(&(&obs.matrix * v)),
        StateData::Mixed(r) => {
            // Tr(ρO) = Σ_ij ρ_ij O_ji
            let n = r.nrows();
            let mut acc = ZERO;
            for j in 0..n {
                for i in 0..n {
                    acc += r[(i, j)] * obs.matrix[(j, i)];
                }
            }
            acc
        }
    })
}

pub fn expectation(obs: &LinOp, state: &QState) -> Result<f64> {
    let z = complex_expectation(obs, state)?;
    if z.im.abs() > STATE_TOL {
        return Err(Error::NonHermitian(z.im));
    }
    Ok(z.re)
}
