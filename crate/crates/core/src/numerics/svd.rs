//! One-sided Jacobi SVD for small dense matrices.

use super::{Matrix, NumericError};

/// Sweep limit for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 60;
/// Sweep-level stop: off-diagonal norm of the rotated Gram matrix relative to ‖M‖²_F.
pub const OFF_DIAGONAL_TOL: f64 = 1e-14;
/// Default relative threshold for [`rank_estimate`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// `M = U·diag(s)·Vᵀ` with singular values sorted in descending order.
///
/// `u` is `rows × cols`; columns belonging to zero singular values are zero.
/// `v` is always a full `cols × cols` orthogonal matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Right singular vector `i` (column of `v`).
    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        (0..self.v.rows()).map(|r| self.v[(r, i)]).collect()
    }
}

pub fn svd(m: &Matrix) -> Result<Svd, NumericError> {
    if !m.is_finite() {
        return Err(NumericError::NonFinite);
    }
    let (rows, cols) = (m.rows(), m.cols());
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| m[(r, c)]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let fro2: f64 = m.data().iter().map(|x| x * x).sum();

    let negligible = f64::EPSILON * f64::EPSILON * fro2;
    let mut converged = fro2 == 0.0 || cols == 1;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(NumericError::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        let mut off2 = 0.0;
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                off2 += gamma * gamma;
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || alpha.min(beta) < negligible {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (x, y) = (a[p][k], a[q][k]);
                    a[p][k] = c * x - s * y;
                    a[q][k] = s * x + c * y;
                }
                for k in 0..cols {
                    let (x, y) = (v[p][k], v[q][k]);
                    v[p][k] = c * x - s * y;
                    v[q][k] = s * x + c * y;
                }
            }
        }
        converged = !rotated || off2.sqrt() < OFF_DIAGONAL_TOL * fro2 * f64::EPSILON;
    }

    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().cloned().fold(0.0, f64::max);

    let mut u = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    let mut singular_values = Vec::with_capacity(cols);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        singular_values.push(s);
        if s > smax * 1e-300 && s > 0.0 {
            for r in 0..rows {
                u[(r, dst)] = a[src][r] / s;
            }
        }
        for r in 0..cols {
            vm[(r, dst)] = v[src][r];
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: vm,
    })
}

/// Unit vector minimising `‖M·v‖₂`, with its largest-magnitude entry positive.
pub fn least_null(m: &Matrix) -> Result<Vec<f64>, NumericError> {
    if m.rows() + 1 < m.cols() {
        return Err(NumericError::Dimension(format!(
            "least_null needs rows >= cols - 1, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let s = svd(m)?;
    let mut v = s.right_vector(m.cols() - 1);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let big = v
        .iter()
        .cloned()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    let sign = if big < 0.0 { -1.0 } else { 1.0 };
    for x in &mut v {
        *x *= sign / norm;
    }
    Ok(v)
}

/// Number of singular values greater than `tol·σ_max`.
pub fn rank_estimate(m: &Matrix, tol: f64) -> Result<usize, NumericError> {
    let s = svd(m)?;
    let smax = s.singular_values.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.singular_values.iter().filter(|&&x| x > tol * smax).count())
}

/// Thin helper for 3×3 problems: `(U, s, V)` with `U` completed to a proper
/// orthonormal basis even when `M` is rank deficient.
pub fn svd3(m: &[[f64; 3]; 3]) -> Result<([[f64; 3]; 3], [f64; 3], [[f64; 3]; 3]), NumericError> {
    let mat = Matrix::from_rows(m)?;
    let s = svd(&mat)?;
    let mut u = [[0.0; 3]; 3];
    let mut v = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            u[r][c] = s.u[(r, c)];
            v[r][c] = s.v[(r, c)];
        }
    }
    let col = |x: &[[f64; 3]; 3], c: usize| [x[0][c], x[1][c], x[2][c]];
    let norm = |x: [f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    // Complete missing left vectors from the right ones: U e_i = M v_i / s_i
    // fails for s_i = 0, so rebuild those columns orthogonally.
    let smax = s.singular_values[0];
    if smax == 0.0 {
        return Ok(([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3], v));
    }
    if s.singular_values[1] <= smax * 1e-14 {
        let u0 = col(&u, 0);
        let pick = if u0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut u1 = cross(u0, pick);
        let n1 = norm(u1);
        u1 = [u1[0] / n1, u1[1] / n1, u1[2] / n1];
        for r in 0..3 {
            u[r][1] = u1[r];
        }
    }
    if s.singular_values[2] <= smax * 1e-14 {
        let u2 = cross(col(&u, 0), col(&u, 1));
        for r in 0..3 {
            u[r][2] = u2[r];
        }
    }
    Ok((u, [s.singular_values[0], s.singular_values[1], s.singular_values[2]], v))
}
