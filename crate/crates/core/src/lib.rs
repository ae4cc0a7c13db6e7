//! Tyler's M-estimator of scatter computed as an operator-scaling problem.
//!
//! The sample map `X ↦ diag(x_iᵀ X x_i)` is balanced by the Sinkhorn
//! iteration; its fixed point is the estimator. Around that core sit exact
//! expansion diagnostics, the capacity objective with its derivatives, an
//! existence classifier and seeded samplers for experiments.

// Validity checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod cpmap;
pub mod error;
pub mod expander;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod sampling;
pub mod sinkhorn;
pub mod tyler;

pub use cpmap::{CpMap, VectorTuple};
pub use error::{Error, Result};
pub use linalg::{PdMatrix, SymMatrix};
