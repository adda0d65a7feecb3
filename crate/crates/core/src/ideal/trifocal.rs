use super::{check_full_rank, levi_civita, quadratic_form, third, IdealError};
use crate::numerics::small::Mat34;
use crate::numerics::{det, kron, Matrix, Scalar};

/// `T[α][β][γ]`, zero-based.
pub type Trifocal<S> = [[[S; 3]; 3]; 3];

/// `T[α][β][γ] = (−1)^α det[P_μ without row α; row β of P_ν; row γ of P_ω]`
/// with zero-based `α`.
pub fn trifocal<S: Scalar>(ps: &[Mat34<S>; 3]) -> Result<Trifocal<S>, IdealError> {
    for (i, p) in ps.iter().enumerate() {
        check_full_rank(p, i)?;
    }
    let [pm, pn, po] = ps;
    let z = pm[0][0].lift(0.0);
    let mut t = [[[z; 3]; 3]; 3];
    for a in 0..3 {
        let keep: Vec<usize> = (0..3).filter(|&r| r != a).collect();
        for b in 0..3 {
            for c in 0..3 {
                let rows = [pm[keep[0]], pm[keep[1]], pn[b], po[c]];
                let m = Matrix::from_fn(4, 4, |r, col| rows[r][col]);
                let d = det(&m)?;
                t[a][b][c] = if a % 2 == 0 { d } else { -d };
            }
        }
    }
    Ok(t)
}

/// The 9×27 coefficient matrix of the point-point-point incidences
/// `Σ x_i y_j z_k ε_{jqs} ε_{krt} T[i][q][r]`.
///
/// Row `(s,t)` sits at `3s+t`; column `(i,j,k)` at `9i+3j+k`, the order of
/// [`segre3`].
pub fn macaulay3<S: Scalar>(t: &Trifocal<S>) -> Matrix<S> {
    let z = t[0][0][0].lift(0.0);
    let mut m = Matrix::from_fn(9, 27, |_, _| z);
    for s in 0..3 {
        for tt in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        if let (Some(q), Some(r)) = (third(j, s), third(k, tt)) {
                            let sign = levi_civita(j, q, s) * levi_civita(k, r, tt);
                            m[(3 * s + tt, 9 * i + 3 * j + k)] = t[i][q][r] * sign;
                        }
                    }
                }
            }
        }
    }
    m
}

/// `m_μ ⊗ m_ν ⊗ m_ω`.
pub fn segre3(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> Vec<f64> {
    kron(&kron(a, b), c)
}

pub fn residual3<S: Scalar>(m: &Matrix<S>, s: &[f64]) -> Result<Vec<S>, IdealError> {
    if m.rows() != 9 || m.cols() != 27 || s.len() != 27 {
        return Err(IdealError::Dimension(format!(
            "residual3 expects 9x27 and 27, got {}x{} and {}",
            m.rows(),
            m.cols(),
            s.len()
        )));
    }
    Ok(m.apply(s)?)
}

/// `Σ_j ‖M₃ s_j‖² / ‖M₃‖²_F`.
pub fn gb3_loss<S: Scalar>(ps: &[Mat34<S>; 3], obs: &[[[f64; 3]; 3]]) -> Result<S, IdealError> {
    let t = trifocal(ps)?;
    let m = macaulay3(&t);
    let eta2 = m.frobenius_sq();
    if !(eta2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb3_loss"));
    }
    let mut terms = Vec::with_capacity(obs.len());
    for o in obs {
        let r = residual3(&m, &segre3(&o[0], &o[1], &o[2]))?;
        terms.push(S::sum_squares(&r));
    }
    if terms.is_empty() {
        return Ok(eta2.lift(0.0));
    }
    Ok(S::sum(&terms) / eta2)
}

/// `Σ_j w_j L_jᵀ L_j` where `R₃(j) = L_j·vec(T)`; turns the trilinear data
/// term into a 27×27 quadratic form in the tensor entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrilinearGram {
    pub g: Vec<f64>,
    pub count: usize,
}

/// `X[q][s] = Σ_j x_j ε_{jqs}`.
pub(crate) fn eps_contract(x: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (q, row) in out.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|j| x[j] * levi_civita(j, q, s)).sum();
        }
    }
    out
}

pub(crate) fn outer_rows(x: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = (0..3).map(|s| x[a][s] * x[b][s]).sum();
        }
    }
    out
}

impl TrilinearGram {
    pub fn new(obs: &[[[f64; 3]; 3]], weights: Option<&[f64]>) -> Self {
        let mut g = vec![0.0; 27 * 27];
        for (n, o) in obs.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[n]);
            let x = o[0];
            let yy = outer_rows(&eps_contract(&o[1]));
            let zz = outer_rows(&eps_contract(&o[2]));
            for i in 0..3 {
                for q in 0..3 {
                    for r in 0..3 {
                        let row = 9 * i + 3 * q + r;
                        for i2 in 0..3 {
                            let xi = w * x[i] * x[i2];
                            for q2 in 0..3 {
                                let xy = xi * yy[q][q2];
                                for r2 in 0..3 {
                                    g[row * 27 + 9 * i2 + 3 * q2 + r2] += xy * zz[r][r2];
                                }
                            }
                        }
                    }
                }
            }
        }
        TrilinearGram {
            g,
            count: obs.len(),
        }
    }
}

/// The nine incidences of one correspondence written as linear forms in the
/// 27 tensor entries: `R₃ = L·vec(T)` with `vec` in `[α][β][γ]` order.
///
/// `L = x ⊗ [y]× ⊗ [z]×` up to index placement, so its rank is 4 for every
/// finite point triple.
pub fn trilinear_design(obs: &[[f64; 3]; 3]) -> Matrix<f64> {
    let x = obs[0];
    let y = eps_contract(&obs[1]);
    let z = eps_contract(&obs[2]);
    Matrix::from_fn(9, 27, |row, col| {
        let (s, t) = (row / 3, row % 3);
        let (i, q, r) = (col / 9, (col / 3) % 3, col % 3);
        x[i] * y[q][s] * z[r][t]
    })
}

/// [`gb3_loss`] via the Gram form; `‖M₃‖²_F = 4‖T‖²` because every tensor
/// entry appears in exactly four Macaulay cells.
pub fn gb3_loss_gram<S: Scalar>(ps: &[Mat34<S>; 3], gram: &TrilinearGram) -> Result<S, IdealError> {
    let t = trifocal(ps)?;
    let flat: Vec<S> = t.iter().flatten().flatten().copied().collect();
    let eta2 = S::sum_squares(&flat) * 4.0;
    if !(eta2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb3_loss"));
    }
    Ok(quadratic_form(&gram.g, 27, &flat) / eta2)
}
