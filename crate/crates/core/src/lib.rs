//! Most probable transition paths of gradient systems under small noise.
//!
//! The library minimizes a discretized Onsager–Machlup action, certifies critical
//! points through Morse indices and conjugate points of the linearized Hamiltonian
//! system, and follows families of paths in the noise intensity σ to locate and
//! classify bifurcations.

// NaN must fail the range checks, so comparisons are written negated on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod bifurcation;
pub mod config;
pub mod error;
pub mod hamiltonian;
pub mod index;
pub mod io;
pub mod linalg;
pub mod polynomial;
pub mod potential;
pub mod run;
pub mod selftest;
pub mod solver;

pub use error::{Error, Result};
