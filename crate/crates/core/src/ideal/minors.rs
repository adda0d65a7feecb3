use super::IdealError;
use crate::numerics::small::{Mat3, Mat34};
use crate::numerics::{det, Matrix, Scalar};

/// The `3k × (4+k)` block matrix with camera `i` in rows `3i..3i+3`,
/// columns `0..4`, and its image point in column `4+i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartiallySymbolic {
    pub k: usize,
    pub matrix: Matrix<f64>,
}

impl PartiallySymbolic {
    pub fn new(cams: &[Mat34<f64>], points: &[[f64; 3]]) -> Result<Self, IdealError> {
        let k = cams.len();
        if !(2..=4).contains(&k) {
            return Err(IdealError::UnsupportedOrder(k));
        }
        if points.len() != k {
            return Err(IdealError::Dimension(format!(
                "{k} cameras but {} points",
                points.len()
            )));
        }
        let matrix = Matrix::from_fn(3 * k, 4 + k, |r, c| {
            let view = r / 3;
            if c < 4 {
                cams[view][r % 3][c]
            } else if c - 4 == view {
                points[view][r % 3]
            } else {
                0.0
            }
        });
        Ok(PartiallySymbolic { k, matrix })
    }
}

/// One maximal minor: which rows were kept, how many came from each view,
/// its value and the Hadamard bound `∏‖row‖` used to make it relative.
#[derive(Debug, Clone, PartialEq)]
pub struct Minor {
    pub rows: Vec<usize>,
    pub partition: Vec<usize>,
    pub value: f64,
    pub scale: f64,
}

impl Minor {
    /// Row counts sorted in decreasing order, e.g. `[3, 2, 2]`.
    pub fn partition_type(&self) -> Vec<usize> {
        let mut p = self.partition.clone();
        p.sort_unstable_by(|a, b| b.cmp(a));
        p
    }

    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.value.abs() / self.scale
        }
    }
}

/// Every `(4+k)×(4+k)` minor of `P_(σ,j)` by exhaustive row selection,
/// evaluated by exact cofactor expansion.
pub fn enumerate_minors(p: &PartiallySymbolic) -> Result<Vec<Minor>, IdealError> {
    let k = p.k;
    if !(2..=4).contains(&k) {
        return Err(IdealError::UnsupportedOrder(k));
    }
    let n = 3 * k;
    let size = 4 + k;
    let cols: Vec<usize> = (0..size).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let rows: Vec<usize> = (0..n).filter(|&r| mask & (1 << r) != 0).collect();
        let mut partition = vec![0; k];
        for &r in &rows {
            partition[r / 3] += 1;
        }
        let sub = p.matrix.select(&rows, &cols);
        let value = det(&sub)?;
        let scale = rows
            .iter()
            .map(|&r| p.matrix.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .product();
        out.push(Minor {
            rows,
            partition,
            value,
            scale,
        });
    }
    Ok(out)
}

/// `F[a][b] = (−1)^{a+b} det[P_μ without row a; P_ν without row b]`, the
/// bilinear coefficients of the 6×6 determinant, so that `m_μᵀ F m_ν` equals it.
pub fn fundamental_from_projections<S: Scalar>(pm: &Mat34<S>, pn: &Mat34<S>) -> Result<Mat3<S>, IdealError> {
    let z = pm[0][0].lift(0.0);
    let mut f = [[z; 3]; 3];
    for a in 0..3 {
        let ka: Vec<usize> = (0..3).filter(|&r| r != a).collect();
        for b in 0..3 {
            let kb: Vec<usize> = (0..3).filter(|&r| r != b).collect();
            let rows = [pm[ka[0]], pm[ka[1]], pn[kb[0]], pn[kb[1]]];
            let d = det(&Matrix::from_fn(4, 4, |r, c| rows[r][c]))?;
            f[a][b] = if (a + b) % 2 == 0 { d } else { -d };
        }
    }
    Ok(f)
}

/// Smallest `|4×4 minor|` of the stacked `[P₁ᵀ … P_nᵀ]` over all column
/// selections, after scaling every camera row to unit length.
pub fn genericity_certificate(cams: &[Mat34<f64>]) -> f64 {
    let rows: Vec<[f64; 4]> = cams
        .iter()
        .flat_map(|p| {
            p.iter().map(|r| {
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    r.map(|x| x / n)
                } else {
                    *r
                }
            })
        })
        .collect();
    let m = rows.len();
    if m < 4 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                for d in c + 1..m {
                    let sel = [rows[a], rows[b], rows[c], rows[d]];
                    let v = det(&Matrix::from_fn(4, 4, |r, col| sel[r][col]))
                        .expect("4x4 determinant")
                        .abs();
                    best = best.min(v);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ideal::{bilinear_row, macaulay3, macaulay4, residual3, residual4, segre3, segre4, trifocal, quadrifocal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_p(rng: &mut ChaCha8Rng) -> Mat34<f64> {
        [[0.0; 4]; 3].map(|r| r.map(|_: f64| rng.random_range(-1.0..1.0)))
    }

    fn project(p: &Mat34<f64>, x: &[f64; 3]) -> [f64; 3] {
        let h: [f64; 3] = [0, 1, 2].map(|i| p[i][0] * x[0] + p[i][1] * x[1] + p[i][2] * x[2] + p[i][3]);
        [h[0] / h[2], h[1] / h[2], 1.0]
    }

    fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0]
    }

    #[test]
    fn counts_and_order_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (k, count) in [(2, 1), (3, 36), (4, 495)] {
            let cams: Vec<_> = (0..k).map(|_| random_p(&mut rng)).collect();
            let pts: Vec<_> = (0..k).map(|_| random_point(&mut rng)).collect();
            let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
            assert_eq!((ps.matrix.rows(), ps.matrix.cols()), (3 * k, 4 + k));
            assert_eq!(enumerate_minors(&ps).unwrap().len(), count);
        }
        let cams = vec![random_p(&mut rng); 5];
        let pts = vec![random_point(&mut rng); 5];
        assert_eq!(PartiallySymbolic::new(&cams, &pts), Err(IdealError::UnsupportedOrder(5)));
        assert_eq!(
            PartiallySymbolic::new(&cams[..1], &pts[..1]),
            Err(IdealError::UnsupportedOrder(1))
        );
    }

    #[test]
    fn noiseless_pair_minors_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let cams = [random_p(&mut rng), random_p(&mut rng)];
        let x = [0.3, -0.2, 0.4];
        let pts = cams.map(|p| project(&p, &x));
        let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
        for m in enumerate_minors(&ps).unwrap() {
            assert!(m.relative() < 1e-9);
        }
    }

    #[test]
    fn bilinear_determinant_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cams = [random_p(&mut rng), random_p(&mut rng)];
        let pts = [random_point(&mut rng), random_point(&mut rng)];
        let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
        let full = det(&ps.matrix).unwrap();
        let f = fundamental_from_projections(&cams[0], &cams[1]).unwrap();
        let a = bilinear_row(&pts[0], &pts[1]);
        let v: f64 = (0..9).map(|i| a[i] * f[i / 3][i % 3]).sum();
        assert!((full - v).abs() < 1e-12);
    }

    #[test]
    fn three_three_one_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let cams = [random_p(&mut rng), random_p(&mut rng), random_p(&mut rng)];
        let pts = [random_point(&mut rng), random_point(&mut rng), random_point(&mut rng)];
        let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
        let mut checked = 0;
        for m in enumerate_minors(&ps).unwrap() {
            if m.partition_type() != vec![3, 3, 1] {
                continue;
            }
            let single = m.partition.iter().position(|&c| c == 1).unwrap();
            let full: Vec<usize> = (0..3).filter(|&v| v != single).collect();
            let row = *m.rows.iter().find(|&&r| r / 3 == single).unwrap();
            let coord = pts[single][row % 3];
            let f = fundamental_from_projections(&cams[full[0]], &cams[full[1]]).unwrap();
            let a = bilinear_row(&pts[full[0]], &pts[full[1]]);
            let b: f64 = (0..9).map(|i| a[i] * f[i / 3][i % 3]).sum();
            let ratio = m.value / coord / b;
            assert!((ratio.abs() - 1.0).abs() < 1e-9, "{ratio}");
            checked += 1;
        }
        assert_eq!(checked, 9);
    }

    /// Checks that `a[i] = c_i·b[i]` with one constant per index across samples.
    fn per_row_ratio(samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let n = samples[0].0.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let ratios: Vec<f64> = samples.iter().map(|(a, b)| a[i] / b[i]).collect();
            for r in &ratios {
                worst = worst.max((r - ratios[0]).abs() / ratios[0].abs());
            }
        }
        worst
    }

    #[test]
    fn three_two_two_minors_match_macaulay_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let cams = [random_p(&mut rng), random_p(&mut rng), random_p(&mut rng)];
        let m3 = macaulay3(&trifocal(&cams).unwrap());
        let mut samples = Vec::new();
        for _ in 0..5 {
            let pts = [random_point(&mut rng), random_point(&mut rng), random_point(&mut rng)];
            let res = residual3(&m3, &segre3(&pts[0], &pts[1], &pts[2])).unwrap();
            let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
            let mut minors = vec![0.0; 9];
            for m in enumerate_minors(&ps).unwrap() {
                if m.partition == vec![3, 2, 2] {
                    let s = (0..3).find(|r| !m.rows.contains(&(3 + r))).unwrap();
                    let t = (0..3).find(|r| !m.rows.contains(&(6 + r))).unwrap();
                    minors[3 * s + t] = m.value;
                }
            }
            samples.push((minors, res));
        }
        assert!(per_row_ratio(&samples) < 1e-8);
    }

    #[test]
    fn two_two_two_two_minors_match_macaulay_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let cams = [0; 4].map(|_| random_p(&mut rng));
        let m4 = macaulay4(&quadrifocal(&cams).unwrap());
        let mut samples = Vec::new();
        for _ in 0..4 {
            let pts = [0; 4].map(|_| random_point(&mut rng));
            let res = residual4(&m4, &segre4(&pts[0], &pts[1], &pts[2], &pts[3])).unwrap();
            let ps = PartiallySymbolic::new(&cams, &pts).unwrap();
            let mut minors = vec![0.0; 81];
            for m in enumerate_minors(&ps).unwrap() {
                if m.partition == vec![2, 2, 2, 2] {
                    let om: Vec<usize> = (0..4)
                        .map(|v| (0..3).find(|r| !m.rows.contains(&(3 * v + r))).unwrap())
                        .collect();
                    minors[27 * om[0] + 9 * om[1] + 3 * om[2] + om[3]] = m.value;
                }
            }
            samples.push((minors, res));
        }
        assert!(per_row_ratio(&samples) < 1e-8);
    }

    #[test]
    fn certificate_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let cams: Vec<_> = (0..3).map(|_| random_p(&mut rng)).collect();
        let c = genericity_certificate(&cams);
        assert!(c > 1e-6);
        let scaled: Vec<_> = cams
            .iter()
            .enumerate()
            .map(|(i, p)| p.map(|r| r.map(|x| x * (i as f64 + 0.5))))
            .collect();
        assert!((genericity_certificate(&scaled) - c).abs() < 1e-14);
        let dup = vec![cams[0], cams[0], cams[1]];
        assert!(genericity_certificate(&dup) < 1e-12);
    }
}
