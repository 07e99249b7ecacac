//! Covariance-function estimation for high-dimensional functional time
//! series under a low-rank plus sparse ("dual functional factor") structure.
//!
//! The pipeline: center the panel, build the time-by-time Gram matrix,
//! extract factors and loadings by functional PCA ([`fpca`]), pick the factor
//! count with a penalized eigenvalue criterion ([`select`]), shrink the
//! residual covariance blockwise ([`shrink`]) with a threshold chosen by
//! rolling-window cross-validation ([`cv`]), and sum the two parts. The
//! [`dgp`] module simulates panels with known covariances and [`metrics`]
//! scores estimates against them.

pub mod cv;
pub mod dgp;
pub mod error;
pub mod fpca;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod select;
pub mod shrink;

pub use error::{Error, Result};
