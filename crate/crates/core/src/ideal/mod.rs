//! Residuals of the multiview ideal: bilinear, trilinear and quadrilinear
//! generators, their Macaulay matrices and the brute-force minor oracle.

mod minors;
mod quadrifocal;
mod trifocal;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{fundamental_between, Camera, CameraError};
use crate::numerics::small::{det3, Mat3, Mat34};
use crate::numerics::{NumericError, Scalar};

pub use minors::{
    enumerate_minors, fundamental_from_projections, genericity_certificate, Minor,
    PartiallySymbolic,
};
pub use quadrifocal::{
    gb4_loss, gb4_loss_gram, macaulay4, quadrifocal, residual4, segre4, QuadrilinearGram,
    Quadrifocal,
};
pub use trifocal::{
    gb3_loss, gb3_loss_gram, macaulay3, residual3, segre3, trifocal, trilinear_design, Trifocal,
    TrilinearGram,
};

/// Default stabilising constant added to every two-view loss.
pub const GB2_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdealError {
    #[error("zero normalizer in {0}")]
    ZeroNormalizer(&'static str),
    #[error("camera {0} is rank deficient")]
    InvalidCamera(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported subset size {0}, expected 2..=4")]
    UnsupportedOrder(usize),
    #[error("no subset contributed a loss term")]
    EmptySampling,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Levi-Civita symbol on `{0,1,2}`.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    if i == j || j == k || i == k {
        0.0
    } else if (i + 1) % 3 == j {
        1.0
    } else {
        -1.0
    }
}

/// The index completing `{a, b}` to `{0, 1, 2}`, if `a ≠ b`.
pub(crate) fn third(a: usize, b: usize) -> Option<usize> {
    (a != b).then(|| 3 - a - b)
}

/// `|P Pᵀ| / ‖P‖⁶` must clear this for a camera to count as full rank.
const RANK_TOL: f64 = 1e-20;

pub(crate) fn check_full_rank<S: Scalar>(p: &Mat34<S>, index: usize) -> Result<(), IdealError> {
    let mut g = [[0.0; 3]; 3];
    let mut fro2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = (0..4).map(|c| p[i][c].value() * p[j][c].value()).sum();
        }
        fro2 += g[i][i];
    }
    if !(fro2 > 0.0) || !(det3(&g) / fro2.powi(3) > RANK_TOL) {
        return Err(IdealError::InvalidCamera(index));
    }
    Ok(())
}

/// Coefficients `a` with `aᵀ·vec(F) = m_μᵀ F m_ν` for row-major `vec`.
pub fn bilinear_row(m_mu: &[f64; 3], m_nu: &[f64; 3]) -> [f64; 9] {
    let mut a = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            a[3 * i + j] = m_mu[i] * m_nu[j];
        }
    }
    a
}

/// Stacked bilinear rows of a set of correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<[f64; 9]>,
}

impl DesignMatrix {
    pub fn new(pairs: &[([f64; 3], [f64; 3])]) -> Self {
        DesignMatrix {
            rows: pairs.iter().map(|(a, b)| bilinear_row(a, b)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn vec_f<S: Scalar>(f: &Mat3<S>) -> [S; 9] {
    [
        f[0][0], f[0][1], f[0][2], f[1][0], f[1][1], f[1][2], f[2][0], f[2][1], f[2][2],
    ]
}

fn gb2_tail<S: Scalar>(f: &Mat3<S>, fro2: S, eps: f64) -> S {
    let d = det3(f);
    d * d / (fro2 * fro2 * fro2) + eps
}

/// `‖A·vec F‖² / ‖F‖²_F + det(F)² / ‖F‖⁶_F + eps`.
pub fn gb2_loss<S: Scalar>(f: &Mat3<S>, a: &DesignMatrix, eps: f64) -> Result<S, IdealError> {
    let v = vec_f(f);
    let fro2 = S::sum_squares(&v);
    if !(fro2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb2_loss"));
    }
    let tail = gb2_tail(f, fro2, eps);
    if a.is_empty() {
        return Ok(tail);
    }
    let res: Vec<S> = a.rows.iter().map(|row| S::lincomb(row, &v)).collect();
    Ok(S::sum_squares(&res) / fro2 + tail)
}

/// Weighted Gram matrix `Σ w·a aᵀ` of bilinear rows, for evaluating
/// `‖A vec F‖²` as a quadratic form independent of the number of points.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGram {
    pub g: [[f64; 9]; 9],
    pub count: usize,
}

impl BilinearGram {
    pub fn new(pairs: &[([f64; 3], [f64; 3])], weights: Option<&[f64]>) -> Self {
        let mut g = [[0.0; 9]; 9];
        for (n, (a, b)) in pairs.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[n]);
            let r = bilinear_row(a, b);
            for i in 0..9 {
                for j in 0..9 {
                    g[i][j] += w * r[i] * r[j];
                }
            }
        }
        BilinearGram {
            g,
            count: pairs.len(),
        }
    }
}

pub(crate) fn quadratic_form<S: Scalar>(g: &[f64], n: usize, x: &[S]) -> S {
    let gx: Vec<S> = (0..n).map(|i| S::lincomb(&g[i * n..(i + 1) * n], x)).collect();
    S::dot(x, &gx)
}

/// [`gb2_loss`] with the data term taken from a precomputed Gram matrix.
pub fn gb2_loss_gram<S: Scalar>(f: &Mat3<S>, gram: &BilinearGram, eps: f64) -> Result<S, IdealError> {
    let v = vec_f(f);
    let fro2 = S::sum_squares(&v);
    if !(fro2.value() > 0.0) {
        return Err(IdealError::ZeroNormalizer("gb2_loss"));
    }
    let flat: Vec<f64> = gram.g.iter().flatten().copied().collect();
    Ok(quadratic_form(&flat, 9, &v) / fro2 + gb2_tail(f, fro2, eps))
}

/// Relative bilinear residual `|aᵀ vec F| / (‖a‖·‖F‖)`.
pub fn bilinear_relative(f: &Mat3<f64>, m_mu: &[f64; 3], m_nu: &[f64; 3]) -> f64 {
    let a = bilinear_row(m_mu, m_nu);
    let v = vec_f(f);
    let r: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    r.abs() / (na * nf)
}

/// Homogeneous observations indexed `[camera][point]`; `None` marks a
/// missing detection.
pub type Correspondences = Vec<Vec<Option<[f64; 3]>>>;

/// View subsets over which the aggregate loss is summed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Subsets {
    pub pairs: Vec<[usize; 2]>,
    pub triples: Vec<[usize; 3]>,
    pub quads: Vec<[usize; 4]>,
}

fn combos(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

impl Subsets {
    /// Every pair, triple and quadruple of `n` cameras.
    pub fn all(n: usize) -> Self {
        Subsets {
            pairs: combos(n, 2).into_iter().map(|c| [c[0], c[1]]).collect(),
            triples: combos(n, 3).into_iter().map(|c| [c[0], c[1], c[2]]).collect(),
            quads: combos(n, 4)
                .into_iter()
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
        }
    }

    /// All subsets when `n ≤ 5`; otherwise at most `max_each` seeded uniform
    /// draws per order, kept in lexicographic order.
    pub fn sampled(n: usize, max_each: usize, seed: u64) -> Self {
        let all = Self::all(n);
        if n <= 5 {
            return all;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fn pick<T: Copy>(v: &[T], m: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
            if v.len() <= m {
                return v.to_vec();
            }
            let mut idx = sample(rng, v.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| v[i]).collect()
        }
        Subsets {
            pairs: pick(&all.pairs, max_each, &mut rng),
            triples: pick(&all.triples, max_each, &mut rng),
            quads: pick(&all.quads, max_each, &mut rng),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.triples.is_empty() && self.quads.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcWeights {
    pub gb2: f64,
    pub gb3: f64,
    pub gb4: f64,
}

impl Default for GcWeights {
    fn default() -> Self {
        GcWeights {
            gb2: 1.0,
            gb3: 1.0,
            gb4: 1.0,
        }
    }
}

/// Points observed in every camera of `views`, in point order.
pub fn common_points<const K: usize>(obs: &Correspondences, views: &[usize; K]) -> Vec<[[f64; 3]; K]> {
    let npts = views.iter().map(|&v| obs[v].len()).min().unwrap_or(0);
    (0..npts)
        .filter_map(|j| {
            let mut out = [[0.0; 3]; K];
            for (slot, &v) in out.iter_mut().zip(views) {
                *slot = obs[v][j]?;
            }
            Some(out)
        })
        .collect()
}

/// `Σ w₂·GB-2 + Σ w₃·GB-3 + Σ w₄·GB-4` over the given subsets.
///
/// Subsets without a common observation are skipped.
pub fn gc_aggregate<S: Scalar>(
    cams: &[Camera<S>],
    obs: &Correspondences,
    subsets: &Subsets,
    weights: &GcWeights,
    eps: f64,
) -> Result<S, IdealError> {
    if obs.len() != cams.len() {
        return Err(IdealError::Dimension(format!(
            "{} cameras but {} observation tracks",
            cams.len(),
            obs.len()
        )));
    }
    let mut terms: Vec<S> = Vec::new();
    for pair in &subsets.pairs {
        let pts = common_points(obs, pair);
        if pts.is_empty() {
            continue;
        }
        let f = fundamental_between(&cams[pair[0]], &cams[pair[1]])?;
        let a = DesignMatrix::new(&pts.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>());
        terms.push(gb2_loss(&f, &a, eps)? * weights.gb2);
    }
    for tri in &subsets.triples {
        let pts = common_points(obs, tri);
        if pts.is_empty() {
            continue;
        }
        let ps = tri.map(|i| cams[i].p);
        terms.push(gb3_loss(&ps, &pts)? * weights.gb3);
    }
    for quad in &subsets.quads {
        let pts = common_points(obs, quad);
        if pts.is_empty() {
            continue;
        }
        let ps = quad.map(|i| cams[i].p);
        terms.push(gb4_loss(&ps, &pts)? * weights.gb4);
    }
    if terms.is_empty() {
        return Err(IdealError::EmptySampling);
    }
    Ok(S::sum(&terms))
}
