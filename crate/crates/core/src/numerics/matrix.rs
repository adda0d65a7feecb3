use std::ops::{Index, IndexMut};

use super::{NumericError, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NumericError::Dimension(format!(
                "{rows}x{cols} matrix from {} entries",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(NumericError::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Submatrix built from the listed rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |r, c| self[(rows[r], cols[c])])
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Matrix<f64> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.rows, other.cols, |r, c| {
            (0..self.cols).map(|k| self[(r, k)] * other[(k, c)]).sum()
        }))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl<S: Scalar> Matrix<S> {
    /// Product with a constant vector; one fused node per output row.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<S>, NumericError> {
        if v.len() != self.cols {
            return Err(NumericError::Dimension(format!(
                "{}x{} matrix applied to {}-vector",
                self.rows, self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| S::lincomb(v, self.row(r)))
            .collect())
    }

    pub fn frobenius_sq(&self) -> S {
        S::sum_squares(&self.data)
    }
}

/// Kronecker product of two vectors: `out[i·|b| + j] = a[i]·b[j]`.
pub fn kron<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

/// Largest size accepted by the cofactor determinant.
pub const MAX_COFACTOR_N: usize = 8;

/// Determinant by exact cofactor (Laplace) expansion along rows.
///
/// Sub-minors on the same column set are shared through a bitmask table, so
/// the cost is `O(n·2ⁿ)` products instead of `n!`. Every product of the
/// expansion is still formed explicitly, which keeps the tape graph a plain
/// polynomial in the entries.
pub fn det<S: Scalar>(m: &Matrix<S>) -> Result<S, NumericError> {
    if !m.is_square() {
        return Err(NumericError::Dimension(format!(
            "determinant of non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    if n > MAX_COFACTOR_N {
        return Err(NumericError::UnsupportedSize(n));
    }
    let ctx = m[(0, 0)];
    let full = (1usize << n) - 1;
    // table[mask] = det of the bottom popcount(mask) rows restricted to columns `mask`.
    let mut table: Vec<Option<S>> = vec![None; full + 1];
    table[0] = Some(ctx.lift(1.0));
    let mut masks: Vec<usize> = (1..=full).collect();
    masks.sort_by_key(|m| m.count_ones());
    for mask in masks {
        let k = mask.count_ones() as usize;
        let row = n - k;
        let mut terms: Vec<S> = Vec::with_capacity(k);
        let mut pos = 0;
        for col in 0..n {
            if mask & (1 << col) == 0 {
                continue;
            }
            let entry = m[(row, col)];
            let sub = table[mask & !(1 << col)].expect("sub-minor computed");
            if !entry.is_zero_const() && !sub.is_zero_const() {
                let t = entry * sub;
                terms.push(if pos % 2 == 0 { t } else { -t });
            }
            pos += 1;
        }
        table[mask] = Some(if terms.is_empty() {
            ctx.lift(0.0)
        } else {
            S::sum(&terms)
        });
    }
    Ok(table[full].expect("full determinant"))
}

/// Determinant by LU factorisation with partial pivoting.
pub fn det_lu(m: &Matrix<f64>) -> Result<f64, NumericError> {
    if !m.is_square() {
        return Err(NumericError::Dimension(format!(
            "determinant of non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut d = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .expect("non-empty pivot range");
        if a[(p, k)] == 0.0 {
            return Ok(0.0);
        }
        if p != k {
            for c in 0..n {
                let tmp = a[(k, c)];
                a[(k, c)] = a[(p, c)];
                a[(p, c)] = tmp;
            }
            d = -d;
        }
        let pivot = a[(k, k)];
        d *= pivot;
        for r in k + 1..n {
            let f = a[(r, k)] / pivot;
            if f != 0.0 {
                for c in k + 1..n {
                    a[(r, c)] -= f * a[(k, c)];
                }
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn small_determinants() {
        assert_eq!(det(&Matrix::identity(3)).unwrap(), 1.0);
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(det(&m).unwrap(), -2.0);
        assert_eq!(det_lu(&m).unwrap(), -2.0);
        let dup = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(det(&dup).unwrap(), 0.0);
    }

    #[test]
    fn non_square_is_rejected() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert!(matches!(det(&m), Err(NumericError::Dimension(_))));
        assert!(matches!(det_lu(&m), Err(NumericError::Dimension(_))));
        assert!(matches!(
            det(&Matrix::identity(9)),
            Err(NumericError::UnsupportedSize(9))
        ));
    }

    #[test]
    fn cofactor_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..5 {
                let m = random(n, &mut rng);
                let a = det(&m).unwrap();
                let b = det_lu(&m).unwrap();
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn multiplicative_up_to_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=5 {
            for _ in 0..20 {
                let a = random(n, &mut rng);
                let b = random(n, &mut rng);
                let ab = a.matmul(&b).unwrap();
                let lhs = det(&ab).unwrap();
                let rhs = det(&a).unwrap() * det(&b).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn det_gradient_is_cofactor_matrix() {
        // Jacobi: d det(A) / dA_ij = adj(A)_ji = cofactor C_ij.
        let a = [[2.0, -1.0, 0.5], [0.3, 1.7, -2.0], [1.1, 0.4, 0.9]];
        let tape = Tape::new();
        let vars = Matrix::from_fn(3, 3, |r, c| tape.var(a[r][c]));
        let d = det(&vars).unwrap();
        let g = tape.gradient(d);
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
                let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
                // cyclic index choice yields the signed cofactor directly
                let cof = a[r1][c1] * a[r2][c2] - a[r1][c2] * a[r2][c1];
                assert!((g.wrt(&vars[(r, c)]) - cof).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kron_layout() {
        let e = kron(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(e.len(), 9);
        assert_eq!(e.iter().position(|&x| x == 1.0), Some(1));
        assert_eq!(e.iter().filter(|&&x| x != 0.0).count(), 1);
        let v = [0.3, -1.0, 2.0];
        assert_eq!(kron(&kron(&v, &v), &v).len(), 27);
        assert_eq!(kron(&kron(&kron(&v, &v), &v), &v).len(), 81);
    }
}
