//! Algebraic triangulation and the classical two-view baselines.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{project, Camera, CameraError};
use crate::ideal::bilinear_row;
use crate::numerics::small::{cross, det3, matmul3, transpose3, Mat3, Mat34};
use crate::numerics::{least_null, svd, svd3, Matrix, NumericError, Scalar};

/// Ratio `σ₁/σ₃` of the DLT system above which the rays count as near parallel.
pub const ILL_CONDITIONED: f64 = 1e8;
/// Smallest admissible `σ₈/σ₁` of the 8-point design matrix.
pub const EIGHT_POINT_DEGENERACY: f64 = 1e-10;
pub const RANSAC_THRESHOLD_PX: f64 = 1.0;
pub const RANSAC_MAX_ITERS: usize = 2000;
const REFINE_MAX_ITERS: usize = 50;
const RANSAC_CONFIDENCE: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulateError {
    #[error("need at least 2 views with positive confidence, got {0}")]
    InsufficientViews(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("epipolar geometry is degenerate at this correspondence")]
    EpipoleDegenerate,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("RANSAC found no model with at least 8 inliers (best {best})")]
    RansacFailure { best: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub point: [f64; 3],
    /// Smallest singular value of the normalized, weighted DLT matrix.
    pub residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
    /// Number of views (among those used) with the point in front.
    pub views_in_front: usize,
    pub views_used: usize,
    pub cheirality: bool,
}

/// Signed depth of `x` in the camera `p`, independent of the scale of `p`.
pub fn signed_depth(p: &Mat34<f64>, x: &[f64; 3]) -> f64 {
    let m = [
        [p[0][0], p[0][1], p[0][2]],
        [p[1][0], p[1][1], p[1][2]],
        [p[2][0], p[2][1], p[2][2]],
    ];
    let w = p[2][0] * x[0] + p[2][1] * x[1] + p[2][2] * x[2] + p[2][3];
    let n = (p[2][0] * p[2][0] + p[2][1] * p[2][1] + p[2][2] * p[2][2]).sqrt();
    det3(&m).signum() * w / n
}

/// Weighted DLT over homogeneous observations `obs[v]` of camera `ps[v]`.
///
/// Each view contributes `x·P³ − z·P¹` and `y·P³ − z·P²`, scaled to unit
/// Frobenius norm per view and then multiplied by its confidence. Views with
/// zero confidence are skipped.
pub fn dlt_triangulate(
    ps: &[Mat34<f64>],
    obs: &[[f64; 3]],
    confidences: &[f64],
) -> Result<Triangulation, TriangulateError> {
    if ps.len() != obs.len() || ps.len() != confidences.len() {
        return Err(TriangulateError::Dimension(format!(
            "{} cameras, {} observations, {} confidences",
            ps.len(),
            obs.len(),
            confidences.len()
        )));
    }
    let used: Vec<usize> = (0..ps.len()).filter(|&v| confidences[v] > 0.0).collect();
    if used.len() < 2 {
        return Err(TriangulateError::InsufficientViews(used.len()));
    }
    let mut rows = Vec::with_capacity(2 * used.len());
    for &v in &used {
        let (p, m) = (&ps[v], &obs[v]);
        let r1: [f64; 4] = std::array::from_fn(|c| m[0] * p[2][c] - m[2] * p[0][c]);
        let r2: [f64; 4] = std::array::from_fn(|c| m[1] * p[2][c] - m[2] * p[1][c]);
        let norm = r1.iter().chain(&r2).map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(TriangulateError::Degenerate(format!("view {v} gives a zero DLT block")));
        }
        let s = confidences[v] / norm;
        rows.push(r1.map(|x| x * s));
        rows.push(r2.map(|x| x * s));
    }
    let a = Matrix::from_rows(&rows)?;
    let dec = svd(&a)?;
    let sv = &dec.singular_values;
    let h = least_null(&a)?;
    if !(h[3].abs() > 0.0) {
        return Err(TriangulateError::Degenerate("point at infinity".into()));
    }
    let point = [h[0] / h[3], h[1] / h[3], h[2] / h[3]];
    let condition = if sv[2] > 0.0 { sv[0] / sv[2] } else { f64::INFINITY };
    let views_in_front = used.iter().filter(|&&v| signed_depth(&ps[v], &point) > 0.0).count();
    Ok(Triangulation {
        point,
        residual: sv[3],
        condition,
        ill_conditioned: condition > ILL_CONDITIONED,
        views_in_front,
        views_used: used.len(),
        cheirality: 2 * views_in_front > used.len(),
    })
}

/// [`dlt_triangulate`] from calibrated cameras and pixel observations.
pub fn triangulate_pixels(
    cams: &[Camera],
    uv: &[[f64; 2]],
    confidences: &[f64],
) -> Result<Triangulation, TriangulateError> {
    let ps: Vec<Mat34<f64>> = cams.iter().map(|c| c.p).collect();
    let obs: Vec<[f64; 3]> = uv.iter().map(|m| [m[0], m[1], 1.0]).collect();
    dlt_triangulate(&ps, &obs, confidences)
}

/// Minimizes `Σ wᵥ‖π(Pᵥ X) − mᵥ‖²` over `X` by damped Gauss-Newton from
/// `start`. Views with zero weight are ignored. Deterministic for fixed
/// inputs.
pub fn refine_point(ps: &[Mat34<f64>], obs: &[[f64; 2]], weights: &[f64], start: [f64; 3]) -> Result<[f64; 3], TriangulateError> {
    if ps.len() != obs.len() || ps.len() != weights.len() {
        return Err(TriangulateError::Dimension(format!(
            "{} cameras, {} observations, {} weights",
            ps.len(),
            obs.len(),
            weights.len()
        )));
    }
    let cost = |x: &[f64; 3]| -> Option<f64> {
        let mut c = 0.0;
        for ((p, m), &w) in ps.iter().zip(obs).zip(weights) {
            if w > 0.0 {
                let h: [f64; 3] = std::array::from_fn(|i| p[i][0] * x[0] + p[i][1] * x[1] + p[i][2] * x[2] + p[i][3]);
                if !(h[2].abs() > 1e-12) {
                    return None;
                }
                let (du, dv) = (h[0] / h[2] - m[0], h[1] / h[2] - m[1]);
                c += w * (du * du + dv * dv);
            }
        }
        Some(c)
    };
    let mut x = start;
    let mut fx = cost(&x).ok_or_else(|| TriangulateError::Degenerate("point on a principal plane".into()))?;
    let mut lambda = 1e-6;
    for _ in 0..REFINE_MAX_ITERS {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((p, m), &w) in ps.iter().zip(obs).zip(weights) {
            if !(w > 0.0) {
                continue;
            }
            let h: [f64; 3] = std::array::from_fn(|i| p[i][0] * x[0] + p[i][1] * x[1] + p[i][2] * x[2] + p[i][3]);
            let iz = 1.0 / h[2];
            let r = [h[0] * iz - m[0], h[1] * iz - m[1]];
            for a in 0..2 {
                let row: [f64; 3] = std::array::from_fn(|c| (p[a][c] - h[a] * iz * p[2][c]) * iz);
                for i in 0..3 {
                    jtr[i] += w * row[i] * r[a];
                    for k in 0..3 {
                        jtj[i][k] += w * row[i] * row[k];
                    }
                }
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-300);
            }
            let d = det3(&a);
            if !(d.abs() > 1e-300) {
                lambda *= 10.0;
                continue;
            }
            let cols = [cross(&a[1], &a[2]), cross(&a[2], &a[0]), cross(&a[0], &a[1])];
            let step: [f64; 3] = std::array::from_fn(|i| (cols[0][i] * jtr[0] + cols[1][i] * jtr[1] + cols[2][i] * jtr[2]) / d);
            let xn = [x[0] - step[0], x[1] - step[1], x[2] - step[2]];
            match cost(&xn) {
                Some(fnew) if fnew <= fx => {
                    let small = step.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-14 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
                    x = xn;
                    fx = fnew;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = !small;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(x)
}

/// Pixel distance between each projection of `x` and its observation.
pub fn reprojection_error(
    cams: &[Camera],
    x: &[f64; 3],
    obs: &[[f64; 2]],
) -> Result<Vec<f64>, TriangulateError> {
    if cams.len() != obs.len() {
        return Err(TriangulateError::Dimension(format!(
            "{} cameras, {} observations",
            cams.len(),
            obs.len()
        )));
    }
    cams.iter()
        .zip(obs)
        .map(|(c, m)| {
            let uv = project(c, x)?.uv;
            Ok((uv[0] - m[0]).hypot(uv[1] - m[1]))
        })
        .collect()
}

fn dehomogenize(m: &[f64; 3]) -> Result<[f64; 3], TriangulateError> {
    if !(m[2].abs() > 0.0) {
        return Err(TriangulateError::Degenerate("point at infinity".into()));
    }
    Ok([m[0] / m[2], m[1] / m[2], 1.0])
}

/// First-order squared geometric distance of `(m_μ, m_ν)` to the epipolar
/// variety of `F` (with `m_μᵀ F m_ν = 0`). Points are scaled to unit last
/// coordinate first.
pub fn sampson_distance(f: &Mat3<f64>, m_mu: &[f64; 3], m_nu: &[f64; 3]) -> Result<f64, TriangulateError> {
    if f.iter().flatten().all(|&x| x == 0.0) {
        return Err(TriangulateError::Degenerate("zero fundamental matrix".into()));
    }
    let a = dehomogenize(m_mu)?;
    let b = dehomogenize(m_nu)?;
    let fb: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| f[i][j] * b[j]).sum());
    let fta: [f64; 3] = std::array::from_fn(|j| (0..3).map(|i| f[i][j] * a[i]).sum());
    let r: f64 = (0..3).map(|i| a[i] * fb[i]).sum();
    let den = fb[0] * fb[0] + fb[1] * fb[1] + fta[0] * fta[0] + fta[1] * fta[1];
    if !(den > f64::MIN_POSITIVE) {
        return Err(TriangulateError::EpipoleDegenerate);
    }
    Ok(r * r / den)
}

/// Differentiable Sampson term for points with unit last coordinate.
pub fn sampson<S: Scalar>(f: &Mat3<S>, a: &[f64; 3], b: &[f64; 3]) -> S {
    let fb: [S; 3] = std::array::from_fn(|i| S::lincomb(b, &f[i]));
    let fta: [S; 3] = std::array::from_fn(|j| S::lincomb(a, &[f[0][j], f[1][j], f[2][j]]));
    let r = S::lincomb(a, &fb);
    r * r / S::sum_squares(&[fb[0], fb[1], fta[0], fta[1]])
}

/// Similarity that moves the points' centroid to the origin and their mean
/// distance from it to `√2`.
pub fn hartley_normalization(pts: &[[f64; 2]]) -> Result<Mat3<f64>, TriangulateError> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let d = pts.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(d > 0.0) {
        return Err(TriangulateError::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / d;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn apply_h(t: &Mat3<f64>, p: &[f64; 2]) -> [f64; 3] {
    std::array::from_fn(|i| t[i][0] * p[0] + t[i][1] * p[1] + t[i][2])
}

fn unit_frobenius(f: &Mat3<f64>) -> Mat3<f64> {
    let n = f.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let flat: Vec<f64> = f.iter().flatten().copied().collect();
    let big = flat.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    let s = big.signum() / n;
    f.map(|row| row.map(|x| x * s))
}

/// Linear estimate of `F` with `m_μᵀ F m_ν = 0` from pixel pairs `(m_μ, m_ν)`.
///
/// Rank 2 is enforced by zeroing the smallest singular value; the result has
/// unit Frobenius norm and a positive largest-magnitude entry.
pub fn eight_point(pairs: &[([f64; 2], [f64; 2])]) -> Result<Mat3<f64>, TriangulateError> {
    eight_point_with(pairs, true)
}

/// [`eight_point`] with the coordinate normalization optional.
pub fn eight_point_with(pairs: &[([f64; 2], [f64; 2])], normalize: bool) -> Result<Mat3<f64>, TriangulateError> {
    if pairs.len() < 8 {
        return Err(TriangulateError::InsufficientViews(pairs.len()));
    }
    let ident = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let (t_mu, t_nu) = if normalize {
        let a: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<[f64; 2]> = pairs.iter().map(|p| p.1).collect();
        (hartley_normalization(&a)?, hartley_normalization(&b)?)
    } else {
        (ident, ident)
    };
    let rows: Vec<[f64; 9]> = pairs
        .iter()
        .map(|(a, b)| bilinear_row(&apply_h(&t_mu, a), &apply_h(&t_nu, b)))
        .collect();
    let a = Matrix::from_rows(&rows)?;
    let sv = svd(&a)?.singular_values;
    if sv.len() < 9 || !(sv[7] > EIGHT_POINT_DEGENERACY * sv[0]) {
        return Err(TriangulateError::Degenerate(
            "correspondences do not determine a unique fundamental matrix".into(),
        ));
    }
    let v = least_null(&a)?;
    let fh = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
    let (u, s, w) = svd3(&fh)?;
    let d = [[s[0], 0.0, 0.0], [0.0, s[1], 0.0], [0.0, 0.0, 0.0]];
    let f2 = matmul3(&matmul3(&u, &d), &transpose3(&w));
    let f = matmul3(&matmul3(&transpose3(&t_mu), &f2), &t_nu);
    Ok(unit_frobenius(&f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub f: Mat3<f64>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub iterations: usize,
}

fn consensus(f: &Mat3<f64>, pairs: &[([f64; 2], [f64; 2])], thr2: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|(a, b)| {
            sampson_distance(f, &[a[0], a[1], 1.0], &[b[0], b[1], 1.0]).is_ok_and(|d| d <= thr2)
        })
        .collect()
}

/// Best-consensus 8-point model, with inliers decided by Sampson distance
/// `≤ threshold_px²`. The winning model is refit on its inliers.
pub fn ransac_eight_point(
    pairs: &[([f64; 2], [f64; 2])],
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
) -> Result<RansacResult, TriangulateError> {
    let n = pairs.len();
    if n < 8 {
        return Err(TriangulateError::InsufficientViews(n));
    }
    let thr2 = threshold_px * threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Mat3<f64>, Vec<bool>, usize)> = None;
    let mut budget = max_iters;
    let mut it = 0;
    while it < budget.min(max_iters) {
        it += 1;
        let idx = sample(&mut rng, n, 8);
        let minimal: Vec<_> = idx.iter().map(|i| pairs[i]).collect();
        let Ok(f) = eight_point(&minimal) else { continue };
        let mask = consensus(&f, pairs, thr2);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            let ratio = count as f64 / n as f64;
            let p_fail = 1.0 - ratio.powi(8);
            if p_fail <= f64::EPSILON {
                budget = it;
            } else if ratio > 0.0 {
                let need = ((1.0 - RANSAC_CONFIDENCE).ln() / p_fail.ln()).ceil();
                budget = budget.min(need.max(1.0) as usize);
            }
            best = Some((f, mask, count));
        }
    }
    let best_count = best.as_ref().map_or(0, |b| b.2);
    let Some((mut f, mut mask, mut count)) = best.filter(|b| b.2 >= 8) else {
        return Err(TriangulateError::RansacFailure { best: best_count });
    };
    let chosen: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pairs[i]).collect();
    if let Ok(refit) = eight_point(&chosen) {
        let m2 = consensus(&refit, pairs, thr2);
        let c2 = m2.iter().filter(|&&b| b).count();
        if c2 >= count {
            f = refit;
            mask = m2;
            count = c2;
        }
    }
    Ok(RansacResult {
        f,
        inliers: mask,
        inlier_count: count,
        iterations: it,
    })
}
