use super::trifocal::{eps_contract, outer_rows};
use super::{check_full_rank, levi_civita, quadratic_form, third, IdealError};
use crate::numerics::small::Mat34;
use crate::numerics::{det, kron, Matrix, Scalar};

/// `Q[α][β][γ][δ]`, zero-based.
pub type Quadrifocal<S> = [[[[S; 3]; 3]; 3]; 3];

fn parity(a: usize, b: usize, c: usize, d: usize) -> f64 {
    if (a + b + c + d) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `Q[α][β][γ][δ] = (−1)^{α+β+γ+δ} det[row α of P_μ; row β of P_ν; row γ of P_ω; row δ of P_ψ]`.
pub fn quadrifocal<S: Scalar>(ps: &[Mat34<S>; 4]) -> Result<Quadrifocal<S>, IdealError> {
    for (i, p) in ps.iter().enumerate() {
        check_full_rank(p, i)?;
    }
    let z = ps[0][0][0].lift(0.0);
    let mut q = [[[[z; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let rows = [ps[0][a], ps[1][b], ps[2][c], ps[3][d]];
                    let m = Matrix::from_fn(4, 4, |r, col| rows[r][col]);
                    q[a][b][c][d] = det(&m)? * parity(a, b, c, d);
                }
            }
        }
    }
    Ok(q)
}

/// The 81×81 coefficient matrix of the point-point-point-point incidences.
///
/// The alternating sign carried by `Q` is undone before contracting with
/// `ε`, so each row is `Σ x_i y_j z_k w_l ε_{i i' a} ε_{j j' b} ε_{k k' c}
/// ε_{l l' d} (−1)^{i'+j'+k'+l'} Q[i'][j'][k'][l']`. Row `(a,b,c,d)` sits at
/// `27a+9b+3c+d`, columns follow [`segre4`].
pub fn macaulay4<S: Scalar>(q: &Quadrifocal<S>) -> Matrix<S> {
    let z = q[0][0][0][0].lift(0.0);
    let mut m = Matrix::from_fn(81, 81, |_, _| z);
    let idx = |a: usize, b: usize, c: usize, d: usize| 27 * a + 9 * b + 3 * c + d;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let row = idx(a, b, c, d);
                    for i in 0..3 {
                        let Some(i2) = third(i, a) else { continue };
                        for j in 0..3 {
                            let Some(j2) = third(j, b) else { continue };
                            for k in 0..3 {
                                let Some(k2) = third(k, c) else { continue };
                                for l in 0..3 {
                                    let Some(l2) = third(l, d) else { continue };
                                    let sign = levi_civita(i, i2, a)
                                        * levi_civita(j, j2, b)
                                        * levi_civita(k, k2, c)
                                        * levi_civita(l, l2, d)
                                        * parity(i2, j2, k2, l2);
                                    m[(row, idx(i, j, k, l))] = q[i2][j2][k2][l2] * sign;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

pub fn segre4(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> Vec<f64> {
    kron(&kron(&kron(a, b), c), d)
}

pub fn residual4<S: Scalar>(m: &Matrix<S>, s: &[f64]) -> Result<Vec<S>, IdealError> {
    if m.rows() != 81 || m.cols() != 81 || s.len() != 81 {
        return Err(IdealError::Dimension(format!(
            "residual4 expects 81x81 and 81, got {}x{} and {}",
            m.rows(),
            m.cols(),
            s.len()
        )));
    }
    Ok(m.apply(s)?)
}

/// `Σ_j ‖M₄ s_j‖² / ‖M₄‖²_F`.
pub fn gb4_loss<S: Scalar>(ps: &[Mat34<S>; 4], obs: &[[[f64; 3]; 4]]) -> Result<S, IdealError> {
    let q = quadrifocal(ps)?;
    let m = macaulay4(&q);
    let eta2 = m.frobenius_sq();
    if !(eta2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb4_loss"));
    }
    let mut terms = Vec::with_capacity(obs.len());
    for o in obs {
        let r = residual4(&m, &segre4(&o[0], &o[1], &o[2], &o[3]))?;
        terms.push(S::sum_squares(&r));
    }
    if terms.is_empty() {
        return Ok(eta2.lift(0.0));
    }
    Ok(S::sum(&terms) / eta2)
}

/// Quadrilinear analogue of [`TrilinearGram`](super::TrilinearGram): an
/// 81×81 quadratic form in the entries of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrilinearGram {
    pub g: Vec<f64>,
    pub count: usize,
}

impl QuadrilinearGram {
    pub fn new(obs: &[[[f64; 3]; 4]], weights: Option<&[f64]>) -> Self {
        let mut g = vec![0.0; 81 * 81];
        let mut sign = [0.0; 81];
        for (n, s) in sign.iter_mut().enumerate() {
            *s = parity(n / 27, (n / 9) % 3, (n / 3) % 3, n % 3);
        }
        for (n, o) in obs.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[n]);
            let gr = o.map(|m| outer_rows(&eps_contract(&m)));
            // Kronecker product of the four 3×3 Gram blocks.
            let mut ab = [[0.0; 9]; 9];
            let mut cd = [[0.0; 9]; 9];
            for r in 0..9 {
                for c in 0..9 {
                    ab[r][c] = gr[0][r / 3][c / 3] * gr[1][r % 3][c % 3];
                    cd[r][c] = gr[2][r / 3][c / 3] * gr[3][r % 3][c % 3];
                }
            }
            for r in 0..81 {
                let (r1, r2) = (r / 9, r % 9);
                let wr = w * sign[r];
                for c in 0..81 {
                    g[r * 81 + c] += wr * sign[c] * ab[r1][c / 9] * cd[r2][c % 9];
                }
            }
        }
        QuadrilinearGram {
            g,
            count: obs.len(),
        }
    }
}

/// [`gb4_loss`] via the Gram form; `‖M₄‖²_F = 16‖Q‖²`.
pub fn gb4_loss_gram<S: Scalar>(ps: &[Mat34<S>; 4], gram: &QuadrilinearGram) -> Result<S, IdealError> {
    let q = quadrifocal(ps)?;
    let flat: Vec<S> = q.iter().flatten().flatten().flatten().copied().collect();
    let eta2 = S::sum_squares(&flat) * 16.0;
    if !(eta2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb4_loss"));
    }
    Ok(quadratic_form(&gram.g, 81, &flat) / eta2)
}
