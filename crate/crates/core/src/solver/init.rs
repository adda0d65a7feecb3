use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{so3_exp, Camera, Intrinsics, Pose};
use crate::numerics::small::{det3, matmul3, matvec3, scale3, transpose3, Mat3, Mat34, Vec3};
use crate::numerics::svd3;
use crate::scenegen::ObservationSet;
use crate::triangulate::{dlt_triangulate, ransac_eight_point, signed_depth};

use super::{median, Problem, SolveConfig, SolveError};

type PixelPair = ([f64; 2], [f64; 2]);

fn pixel_pairs(obs: &ObservationSet, a: usize, b: usize, min_conf: f64) -> (Vec<PixelPair>, Vec<usize>) {
    let va = obs.views[a].iter().flatten();
    let vb = obs.views[b].iter().flatten();
    let usable = |c: f64| c > 0.0 && c >= min_conf;
    let mut pairs = Vec::new();
    let mut idx = Vec::new();
    for (j, (oa, ob)) in va.zip(vb).enumerate() {
        if usable(oa.confidence) && usable(ob.confidence) {
            pairs.push((oa.uv, ob.uv));
            idx.push(j);
        }
    }
    (pairs, idx)
}

fn projection(r: &Mat3<f64>, t: &Vec3<f64>) -> Mat34<f64> {
    std::array::from_fn(|i| [r[i][0], r[i][1], r[i][2], t[i]])
}

const CANONICAL: Mat34<f64> = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

/// Depth in the first camera of each ray pair triangulated with `[I|0]`
/// and `[R|t]`, or `None` when the point lands behind either camera.
fn depths(r: &Mat3<f64>, t: &Vec3<f64>, rays: &[([f64; 3], [f64; 3])]) -> Vec<Option<f64>> {
    let p = projection(r, t);
    rays.iter()
        .map(|(a, b)| {
            let tr = dlt_triangulate(&[CANONICAL, p], &[*a, *b], &[1.0, 1.0]).ok()?;
            let d0 = signed_depth(&CANONICAL, &tr.point);
            let d1 = signed_depth(&p, &tr.point);
            (d0 > 0.0 && d1 > 0.0).then_some(d0)
        })
        .collect()
}

/// Pose `(R, t)` with `x_b = R x_a + t` and unit `t`, from an essential
/// matrix in the standard form `x_bᵀ E x_a = 0`.
fn decompose_essential(e: &Mat3<f64>, rays: &[([f64; 3], [f64; 3])]) -> Option<(Mat3<f64>, Vec3<f64>)> {
    let (mut u, _, mut v) = svd3(e).ok()?;
    if det3(&u) < 0.0 {
        u.iter_mut().for_each(|row| row[2] = -row[2]);
    }
    if det3(&v) < 0.0 {
        v.iter_mut().for_each(|row| row[2] = -row[2]);
    }
    let w = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let vt = transpose3(&v);
    let u3 = [u[0][2], u[1][2], u[2][2]];
    let mut best: Option<(usize, Mat3<f64>, Vec3<f64>)> = None;
    for r in [matmul3(&matmul3(&u, &w), &vt), matmul3(&matmul3(&u, &transpose3(&w)), &vt)] {
        for t in [u3, scale3(&u3, -1.0)] {
            let front = depths(&r, &t, rays).iter().filter(|d| d.is_some()).count();
            if best.as_ref().is_none_or(|b| front > b.0) {
                best = Some((front, r, t));
            }
        }
    }
    best.filter(|b| b.0 > 0).map(|b| (b.1, b.2))
}

fn ring_fallback(v: usize, n: usize, rng: &mut ChaCha8Rng) -> Pose {
    let theta = std::f64::consts::TAU * v as f64 / n as f64;
    let q = so3_exp(&[0.0, theta, 0.0]);
    let c = [0.0, 0.0, 5.0];
    let qc = matvec3(&q, &c);
    let center = [c[0] - qc[0], c[1] - qc[1], c[2] - qc[2]];
    let jitter = so3_exp(&[0; 3].map(|_| rng.random_range(-0.05..0.05)));
    let r = matmul3(&jitter, &transpose3(&q));
    let t = scale3(&matvec3(&r, &center), -1.0);
    Pose { r, t }
}

/// Pixel-unit starting cameras: the prior calibration for every view and
/// poses from pairwise RANSAC 8-point against the anchor.
pub(super) fn initial_cameras(
    obs: &ObservationSet,
    problem: &Problem,
    cfg: &SolveConfig,
    attempt: usize,
) -> Result<Vec<Camera>, SolveError> {
    let n = problem.n;
    let a = cfg.gauge.anchor;
    let sref = cfg.gauge.scale_ref;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_0000 + attempt as u64));
    let f0 = if attempt == 0 {
        cfg.prior_focal_px
    } else {
        cfg.prior_focal_px * (1.0 + rng.random_range(-0.2..0.2))
    };
    let k0 = Intrinsics::new(f0, f0, obs.image_size[0] / 2.0, obs.image_size[1] / 2.0)?;
    let kinv = k0.inverse_matrix();
    let km = k0.matrix();
    let ray = |m: &[f64; 2]| matvec3(&kinv, &[m[0], m[1], 1.0]);

    let mut poses: Vec<Option<Pose>> = vec![None; n];
    poses[a] = Some(Pose::identity());
    // Depth of each point in the anchor frame for the reference pair.
    let mut ref_depth: Vec<Option<f64>> = vec![None; obs.frames() * obs.joints()];
    let mut unit_depths: Vec<Vec<Option<f64>>> = vec![Vec::new(); n];
    for v in (0..n).filter(|&v| v != a) {
        let (pairs, idx) = pixel_pairs(obs, a, v, cfg.min_confidence);
        let seed = cfg.seed ^ ((v as u64) << 32) ^ attempt as u64;
        let Ok(res) = ransac_eight_point(&pairs, cfg.init_ransac_threshold_px, cfg.init_ransac_iters, seed) else {
            continue;
        };
        let e = transpose3(&matmul3(&matmul3(&transpose3(&km), &res.f), &km));
        let rays: Vec<_> = pairs.iter().map(|(p, q)| (ray(p), ray(q))).collect();
        let inlier_rays: Vec<_> = rays.iter().zip(&res.inliers).filter(|(_, &ok)| ok).map(|(r, _)| *r).collect();
        let Some((r, t)) = decompose_essential(&e, &inlier_rays) else { continue };
        let d = depths(&r, &t, &rays);
        let mut full = vec![None; ref_depth.len()];
        for ((&j, dj), &ok) in idx.iter().zip(&d).zip(&res.inliers) {
            if ok {
                full[j] = *dj;
            }
        }
        if v == sref {
            ref_depth = full.clone();
        }
        unit_depths[v] = full;
        poses[v] = Some(Pose { r, t });
    }
    for v in (0..n).filter(|&v| v != a && v != sref) {
        let Some(p) = poses[v].as_mut() else { continue };
        let ratios: Vec<f64> = ref_depth
            .iter()
            .zip(&unit_depths[v])
            .filter_map(|(r, u)| Some(r.as_ref()? / u.as_ref()?))
            .filter(|x| x.is_finite() && *x > 0.0)
            .collect();
        let s = if ratios.is_empty() { 1.0 } else { median(&ratios) };
        p.t = scale3(&p.t, s);
    }
    let cams = (0..n)
        .map(|v| {
            let mut pose = poses[v].unwrap_or_else(|| ring_fallback(v, n, &mut rng));
            if attempt > 0 && v != a {
                let jitter = so3_exp(&[0; 3].map(|_| rng.random_range(-0.02..0.02)));
                pose.r = matmul3(&jitter, &pose.r);
            }
            Camera::new(k0, pose)
        })
        .collect();
    Ok(cams)
}
