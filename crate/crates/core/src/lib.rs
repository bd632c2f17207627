//! Averaged optimal control for systems whose observables drift slowly under
//! a small perturbation.
//!
//! The pipeline: periodic orbits of the reduced flow ([`orbits`]) give the
//! invariant measures on each level set; a semi-infinite dual LP ([`lp`])
//! produces a certificate `(lambda, omega)`; [`synthesis`] turns it into a
//! feedback law and evaluates it on the averaged system; [`perturbed`] runs
//! the law on the original stiff system.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod integrate;
pub mod lp;
pub mod measures;
pub mod models;
pub mod orbits;
pub mod perturbed;
pub mod pipeline;
pub mod synthesis;

mod fmt;

pub use error::{Error, Result};
pub use models::{ModelKind, ModelSpec, ProblemSpec};
