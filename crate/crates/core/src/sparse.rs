//! Compressed sparse row carrier for operators.
//!
//! All Hamiltonians in this crate have at most a handful of nonzeros per
//! row, so time stepping is done against this form rather than the dense
//! matrix.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::Result;
use crate::fockspace::{LinOp, Mode, SpaceSpec, C64};

/// One `coeff · spin ⊗ x ⊗ y` summand.
pub struct TensorTerm {
    pub coeff: C64,
    pub spin: Matrix2<C64>,
    pub x: DMatrix<C64>,
    pub y: DMatrix<C64>,
}

fn nonzeros(m: &DMatrix<C64>) -> Vec<(usize, usize, C64)> {
    let mut v = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let e = m[(i, j)];
            if e.re != 0.0 || e.im != 0.0 {
                v.push((i, j, e));
            }
        }
    }
    v
}

#[derive(Clone, Debug)]
pub struct SparseOp {
    space: SpaceSpec,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn from_linop(op: &LinOp) -> Self {
        let m = op.matrix();
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..dim {
            for j in 0..dim {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            space: op.space(),
            row_ptr,
            cols,
            vals,
        }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(space: SpaceSpec, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        let dim = space.dim();
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            debug_assert!(i < dim && j < dim);
            match (rows.last(), cols.last()) {
                (Some(&ri), Some(&cj)) if ri == i && cj == j => *vals.last_mut().unwrap() += v,
                _ => {
                    rows.push(i);
                    cols.push(j);
                    vals.push(v);
                }
            }
        }
        let keep: Vec<bool> = vals.iter().map(|v| v.re != 0.0 || v.im != 0.0).collect();
        let mut k = 0;
        let (mut c2, mut v2) = (
            Vec::with_capacity(cols.len()),
            Vec::with_capacity(vals.len()),
        );
        for i in 0..dim {
            while k < rows.len() && rows[k] == i {
                if keep[k] {
                    c2.push(cols[k]);
                    v2.push(vals[k]);
                }
                k += 1;
            }
            row_ptr[i + 1] = c2.len();
        }
        Self {
            space,
            row_ptr,
            cols: c2,
            vals: v2,
        }
    }

    /// Sum of tensor-product terms, assembled from the factors' nonzeros.
    /// `y` is ignored on single-mode spaces.
    pub fn tensor_sum(space: SpaceSpec, terms: &[TensorTerm]) -> Self {
        let one = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let mut triplets = Vec::new();
        for term in terms {
            let y = if space.is_single_mode() {
                &one
            } else {
                &term.y
            };
            debug_assert_eq!(term.x.nrows(), space.levels_x());
            debug_assert_eq!(y.nrows(), space.levels_y());
            let (xs, ys) = (nonzeros(&term.x), nonzeros(y));
            for s in 0..2 {
                for t in 0..2 {
                    let sv = term.spin[(s, t)] * term.coeff;
                    if sv.re == 0.0 && sv.im == 0.0 {
                        continue;
                    }
                    for &(xi, xj, xv) in &xs {
                        for &(yi, yj, yv) in &ys {
                            triplets.push((
                                space.index(s, xi, yi),
                                space.index(t, xj, yj),
                                sv * xv * yv,
                            ));
                        }
                    }
                }
            }
        }
        Self::from_triplets(space, triplets)
    }

    /// Identity on the spin and the other mode, `op` on `mode`.
    pub fn on_mode(space: SpaceSpec, mode: Mode, op: DMatrix<C64>) -> Result<Self> {
        space.require_mode(mode)?;
        let ix = DMatrix::identity(space.levels_x(), space.levels_x());
        let iy = DMatrix::identity(space.levels_y(), space.levels_y());
        let (x, y) = match mode {
            Mode::X => (op, iy),
            Mode::Y => (ix, op),
        };
        Ok(Self::tensor_sum(
            space,
            &[TensorTerm {
                coeff: C64::new(1.0, 0.0),
                spin: Matrix2::identity(),
                x,
                y,
            }],
        ))
    }

    /// max |A_ij − conj(A_ji)|, found by looking up each transposed entry.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let back = self.get(j, i);
                worst = worst.max((self.vals[k] - back.conj()).norm());
            }
        }
        worst
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Maximum absolute row sum; equals the 1-norm for Hermitian operators.
    pub fn inf_norm(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `y = A x`
    pub fn mul_slice(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.dim());
        self.mul_slice(x.as_slice(), y.as_mut_slice());
        y
    }

    /// `out = A rho`, column by column (nalgebra storage is column major).
    pub fn mul_dense_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = self.dim();
        debug_assert_eq!(rho.nrows(), n);
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for (xc, yc) in src.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
            self.mul_slice(xc, yc);
        }
    }
}
