//! Desk-scale simulation of a two-dimensional Weyl particle encoded in a
//! qubit coupled to two motional modes of a trapped ion, including the
//! indirect readout protocols and a motional-dephasing noise model.

// `!(x > 0.0)` is deliberate throughout input validation so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod error;
pub mod evolve;
pub mod fockspace;
pub mod model;
pub mod probe;
pub mod scenarios;
mod sparse;

pub use error::{Error, Result};
pub use evolve::{NoiseSpec, TimeGrid};
pub use fockspace::{QState, SpaceSpec, SpinState, C64};
pub use model::SimParams;
pub use sparse::{SparseOp, TensorTerm};
