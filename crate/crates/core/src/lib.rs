//! KL-optimal finite-time erasure of a two-state Markov bit.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod control;
pub mod error;
pub mod estimators;
pub mod ode;
pub mod parallel;
pub mod path;
pub mod protocol;
pub mod quadrature;
pub mod reversal;
pub mod rng;
pub mod thermo;
