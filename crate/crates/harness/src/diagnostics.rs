//! Consistency diagnostics of a camera rig against its 2D tracks.

use mvgc_core::camera::Camera;
use mvgc_core::ideal::{
    bilinear_relative, common_points, enumerate_minors, fundamental_from_projections, macaulay3, macaulay4,
    quadrifocal, residual3, residual4, segre3, segre4, trifocal, PartiallySymbolic, Subsets,
};
use mvgc_core::numerics::rank_estimate;
use mvgc_core::numerics::small::{Mat3, Mat34};
use mvgc_core::scenegen::{image_normalization, ObservationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const RANK_TOLERANCE: f64 = 1e-8;
/// Per-order cap on checked subsets beyond five cameras.
pub const MAX_SUBSETS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcCheckOptions {
    pub tolerance: f64,
    /// Points per subset whose maximal minors are enumerated.
    pub minor_points: usize,
    /// Random correspondences per subset for the minor-oracle comparison.
    pub oracle_samples: usize,
    pub seed: u64,
}

impl Default for GcCheckOptions {
    fn default() -> Self {
        GcCheckOptions {
            tolerance: DEFAULT_TOLERANCE,
            minor_points: 8,
            oracle_samples: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetDiagnostic {
    pub views: Vec<usize>,
    pub points: usize,
    /// Largest residual norm relative to its normalizer.
    pub max_relative_residual: f64,
    pub rms_relative_residual: f64,
    /// Numerical rank of the fundamental or Macaulay matrix.
    pub rank: usize,
    pub max_relative_minor: f64,
    /// Per-row ratio spread between Macaulay rows and partition minors;
    /// absent for pairs.
    pub oracle_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcDiagnostic {
    pub cameras: usize,
    pub points: usize,
    pub coordinates: String,
    pub options: GcCheckOptions,
    pub subsets: Vec<SubsetDiagnostic>,
    pub max_relative_residual: f64,
    pub max_relative_minor: f64,
    pub minor_oracle_max_deviation: f64,
    pub passed: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat3_apply(n: &Mat3<f64>, m: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| n[i][0] * m[0] + n[i][1] * m[1] + n[i][2] * m[2])
}

fn normalize_camera(n: &Mat3<f64>, p: &Mat34<f64>) -> Mat34<f64> {
    std::array::from_fn(|i| std::array::from_fn(|c| (0..3).map(|k| n[i][k] * p[k][c]).sum()))
}

/// `maxᵢ maxₛ |rₛᵢ − r₀ᵢ| / |r₀ᵢ|` with `rₛᵢ = minorₛᵢ / residualₛᵢ`: zero
/// when every row agrees with its minor up to a fixed factor.
pub fn per_row_ratio_spread(samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let Some(first) = samples.first() else {
        return 0.0;
    };
    let mut worst: f64 = 0.0;
    for i in 0..first.0.len() {
        let r0 = first.0[i] / first.1[i];
        for (a, b) in samples {
            worst = worst.max((a[i] / b[i] - r0).abs() / r0.abs());
        }
    }
    worst
}

fn missing_row(rows: &[usize], view: usize) -> usize {
    (0..3).find(|r| !rows.contains(&(3 * view + r))).expect("two rows kept")
}

/// Compares `residual3` against the (3,2,2) minors of the stacked matrix
/// (first view full) at the given correspondences.
pub fn triple_oracle_deviation(ps: &[Mat34<f64>; 3], pts: &[[[f64; 3]; 3]]) -> Result<f64> {
    let m3 = macaulay3(&trifocal(ps)?);
    let mut samples = Vec::with_capacity(pts.len());
    for p in pts {
        let res = residual3(&m3, &segre3(&p[0], &p[1], &p[2]))?;
        let mut minors = vec![0.0; 9];
        for m in enumerate_minors(&PartiallySymbolic::new(ps, p)?)? {
            if m.partition == [3, 2, 2] {
                minors[3 * missing_row(&m.rows, 1) + missing_row(&m.rows, 2)] = m.value;
            }
        }
        samples.push((minors, res));
    }
    Ok(per_row_ratio_spread(&samples))
}

/// Compares `residual4` against the (2,2,2,2) minors of the stacked matrix.
pub fn quad_oracle_deviation(ps: &[Mat34<f64>; 4], pts: &[[[f64; 3]; 4]]) -> Result<f64> {
    let m4 = macaulay4(&quadrifocal(ps)?);
    let mut samples = Vec::with_capacity(pts.len());
    for p in pts {
        let res = residual4(&m4, &segre4(&p[0], &p[1], &p[2], &p[3]))?;
        let mut minors = vec![0.0; 81];
        for m in enumerate_minors(&PartiallySymbolic::new(ps, p)?)? {
            if m.partition == [2, 2, 2, 2] {
                let idx = (0..4).fold(0, |acc, v| 3 * acc + missing_row(&m.rows, v));
                minors[idx] = m.value;
            }
        }
        samples.push((minors, res));
    }
    Ok(per_row_ratio_spread(&samples))
}

fn random_points<const K: usize>(rng: &mut ChaCha8Rng, n: usize) -> Vec<[[f64; 3]; K]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0]))
        .collect()
}

struct Accum {
    max: f64,
    sq: f64,
    n: usize,
}

impl Accum {
    fn new() -> Self {
        Accum { max: 0.0, sq: 0.0, n: 0 }
    }

    fn push(&mut self, x: f64) {
        self.max = self.max.max(x);
        self.sq += x * x;
        self.n += 1;
    }

    fn rms(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sq / self.n as f64).sqrt()
        }
    }
}

fn max_minor(ps: &[Mat34<f64>], pts: &[[f64; 3]]) -> Result<f64> {
    let minors = enumerate_minors(&PartiallySymbolic::new(ps, pts)?)?;
    Ok(minors.iter().map(|m| m.relative()).fold(0.0, f64::max))
}

/// Residuals of every generator over every subset of at most four views,
/// evaluated in normalized image coordinates.
pub fn gc_check(cams: &[Camera], obs: &ObservationSet, opts: &GcCheckOptions) -> Result<GcDiagnostic> {
    if cams.len() != obs.cameras() {
        return Err(HarnessError::Config(format!(
            "{} cameras but {} observed views",
            cams.len(),
            obs.cameras()
        )));
    }
    if cams.len() < 2 {
        return Err(HarnessError::Config("need at least two cameras".into()));
    }
    let n = image_normalization(obs.image_size);
    let ps: Vec<Mat34<f64>> = cams.iter().map(|c| normalize_camera(&n, &c.p)).collect();
    let tracks: Vec<Vec<Option<[f64; 3]>>> = obs
        .correspondences(0.0)
        .into_iter()
        .map(|v| v.into_iter().map(|m| m.map(|m| mat3_apply(&n, &m))).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let subsets = Subsets::sampled(cams.len(), MAX_SUBSETS, opts.seed);
    let mut out = Vec::new();

    for pair in &subsets.pairs {
        let pts = common_points(&tracks, pair);
        let f = fundamental_from_projections(&ps[pair[0]], &ps[pair[1]])?;
        let mut acc = Accum::new();
        let mut minor: f64 = 0.0;
        for (i, p) in pts.iter().enumerate() {
            acc.push(bilinear_relative(&f, &p[0], &p[1]));
            if i < opts.minor_points {
                minor = minor.max(max_minor(&[ps[pair[0]], ps[pair[1]]], p)?);
            }
        }
        let fm = mvgc_core::numerics::Matrix::from_rows(&f)?;
        out.push(SubsetDiagnostic {
            views: pair.to_vec(),
            points: pts.len(),
            max_relative_residual: acc.max,
            rms_relative_residual: acc.rms(),
            rank: rank_estimate(&fm, RANK_TOLERANCE)?,
            max_relative_minor: minor,
            oracle_deviation: None,
        });
    }
    for tri in &subsets.triples {
        let pts = common_points(&tracks, tri);
        let cam3 = tri.map(|i| ps[i]);
        let m3 = macaulay3(&trifocal(&cam3)?);
        let scale = m3.frobenius_norm();
        let mut acc = Accum::new();
        let mut minor: f64 = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let s = segre3(&p[0], &p[1], &p[2]);
            acc.push(norm(&residual3(&m3, &s)?) / (scale * norm(&s)));
            if i < opts.minor_points {
                minor = minor.max(max_minor(&cam3, p)?);
            }
        }
        out.push(SubsetDiagnostic {
            views: tri.to_vec(),
            points: pts.len(),
            max_relative_residual: acc.max,
            rms_relative_residual: acc.rms(),
            rank: rank_estimate(&m3, RANK_TOLERANCE)?,
            max_relative_minor: minor,
            oracle_deviation: Some(triple_oracle_deviation(&cam3, &random_points(&mut rng, opts.oracle_samples))?),
        });
    }
    for quad in &subsets.quads {
        let pts = common_points(&tracks, quad);
        let cam4 = quad.map(|i| ps[i]);
        let m4 = macaulay4(&quadrifocal(&cam4)?);
        let scale = m4.frobenius_norm();
        let mut acc = Accum::new();
        let mut minor: f64 = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let s = segre4(&p[0], &p[1], &p[2], &p[3]);
            acc.push(norm(&residual4(&m4, &s)?) / (scale * norm(&s)));
            if i < opts.minor_points {
                minor = minor.max(max_minor(&cam4, p)?);
            }
        }
        out.push(SubsetDiagnostic {
            views: quad.to_vec(),
            points: pts.len(),
            max_relative_residual: acc.max,
            rms_relative_residual: acc.rms(),
            rank: rank_estimate(&m4, RANK_TOLERANCE)?,
            max_relative_minor: minor,
            oracle_deviation: Some(quad_oracle_deviation(&cam4, &random_points(&mut rng, opts.oracle_samples))?),
        });
    }

    let fold = |f: fn(&SubsetDiagnostic) -> f64| out.iter().map(f).fold(0.0, f64::max);
    let max_relative_residual = fold(|s| s.max_relative_residual);
    let max_relative_minor = fold(|s| s.max_relative_minor);
    let minor_oracle_max_deviation = fold(|s| s.oracle_deviation.unwrap_or(0.0));
    Ok(GcDiagnostic {
        cameras: cams.len(),
        points: obs.frames() * obs.joints(),
        coordinates: "normalized".into(),
        options: *opts,
        passed: max_relative_residual < opts.tolerance && max_relative_minor < opts.tolerance,
        subsets: out,
        max_relative_residual,
        max_relative_minor,
        minor_oracle_max_deviation,
    })
}
