//! Wave-filtering for predicting symmetric linear dynamical systems.
//!
//! Inputs are convolved with the top eigenvectors of the Hankel matrix Z_T,
//! scaled by the fourth root of their eigenvalues, and a linear map from those
//! features to outputs is learned online (projected gradient descent or
//! follow-the-leader) or in batch (least squares).

pub mod batch;
pub mod bench;
pub mod error;
pub mod filters;
pub mod fft;
pub mod hankel;
pub mod io;
pub mod lds;
pub mod linalg;
pub mod ode;
pub mod online;
pub mod quadrature;
pub mod relaxation;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
