//! Finite-truncation toolkit for probability on Hilbert spaces and ensemble
//! data assimilation.
//!
//! The crate is organised by subsystem:
//!
//! * [`spectral_ops`] dense and diagonal operator algebra (norms, tensor
//!   products, functions of self-adjoint operators, Sherman-Morrison-Woodbury).
//! * [`rect_field`] the Dirichlet Laplacian on a rectangle, its sine
//!   eigenbasis, the 2-D discrete sine transform and random fields built from
//!   functions of the Laplacian.
//! * [`gaussian`] Gaussian measures: Karhunen-Loeve sampling, characteristic
//!   functional, whitening and the white-noise obstruction.
//! * [`ensemble_stats`] sample moments and Monte Carlo laws of large numbers.
//! * [`filters`] OSI/Kalman, perturbed-observation EnKF, ETKF and particle
//!   reweighting.
//! * [`experiments`] seeded drivers and the config/CSV plumbing used by the
//!   `hilbert-da` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble_stats;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod gaussian;
pub mod rect_field;
pub mod rng;
pub mod spectral_ops;

pub use error::{Error, Result};

/// Dense real matrix. Used for every finite-dimensional operator.
pub type DenseOp = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type Vector = nalgebra::DVector<f64>;
