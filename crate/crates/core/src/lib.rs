//! Pseudospectral simulation and numerical checks for the cubic nonlinear
//! Schrodinger equation (i d_t + Laplacian) u = mu |u|^2 u on rectangular 4-tori.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod critical_norms;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod fft;
pub mod field;
pub mod invariants;
pub mod lab;
pub mod lattice;
pub mod profiles;
pub mod quadrature;

pub use error::{Error, Result};
