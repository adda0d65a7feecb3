//! Scalar abstraction, reverse-mode tape, dense matrices and SVD.

mod matrix;
mod scalar;
pub mod small;
mod svd;
mod tape;

use thiserror::Error;

pub use matrix::{det, det_lu, kron, Matrix, MAX_COFACTOR_N};
pub use scalar::Scalar;
pub use svd::{least_null, rank_estimate, svd, svd3, Svd, DEFAULT_RANK_TOL, MAX_SWEEPS};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cofactor determinant limited to n <= 8, got {0}")]
    UnsupportedSize(usize),
    #[error("SVD did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("non-finite input")]
    NonFinite,
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn relative_inf_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}
