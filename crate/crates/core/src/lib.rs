//! Marked configurations of aging particles on a compact habitat window.
//!
//! The crate provides the metrics on ages, mark sets and marked
//! configurations; the exponential test functions `F^θ`; the Kolmogorov
//! operator with its explicit semigroup and resolvent; exact samplers of the
//! arrival–departure–aging process; and a verification harness comparing the
//! samplers with closed-form laws.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod age_metric;
pub mod config_space;
pub mod error;
pub mod generator;
pub mod habitat;
pub mod mark_space;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod test_functions;
pub mod verify;

pub use error::{Error, Result};
