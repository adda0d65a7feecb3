use serde::{Deserialize, Serialize};

use crate::camera::{relative_pose, Camera, Pose};
use crate::numerics::small::{cross, dot3, matmul3, matvec3, norm3, scale3, sub3, transpose3, Mat3, Vec3};
use crate::numerics::svd3;

use super::SolveError;

/// `x ↦ s·R·x + τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, x: &Vec3<f64>) -> Vec3<f64> {
        let r = matvec3(&self.rotation, x);
        std::array::from_fn(|i| self.scale * r[i] + self.translation[i])
    }
}

fn centroid(p: &[Vec3<f64>]) -> Vec3<f64> {
    let n = p.len() as f64;
    std::array::from_fn(|i| p.iter().map(|x| x[i]).sum::<f64>() / n)
}

/// Least-squares similarity taking `pred` onto `gt`, with the aligned points.
pub fn procrustes_align(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> Result<(Similarity, Vec<Vec3<f64>>), SolveError> {
    if pred.len() != gt.len() {
        return Err(SolveError::Shape(format!("{} vs {} points", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(SolveError::AlignmentDegenerate);
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let mut cov = [[0.0; 3]; 3];
    let mut var_p = 0.0;
    let mut scatter = [[0.0; 3]; 3];
    for (p, g) in pred.iter().zip(gt) {
        let (a, b) = (sub3(p, &mp), sub3(g, &mg));
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += b[i] * a[j];
                scatter[i][j] += a[i] * a[j];
            }
        }
        var_p += dot3(&a, &a);
    }
    let (_, sp, _) = svd3(&scatter)?;
    if !(sp[1] > 1e-12 * sp[0].max(f64::MIN_POSITIVE)) {
        return Err(SolveError::AlignmentDegenerate);
    }
    let (u, s, v) = svd3(&cov)?;
    let d = crate::numerics::small::det3(&matmul3(&u, &transpose3(&v)));
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let dm = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, sign]];
    let rotation = matmul3(&matmul3(&u, &dm), &transpose3(&v));
    let scale = (s[0] + s[1] + sign * s[2]) / var_p;
    let rp = matvec3(&rotation, &mp);
    let translation = std::array::from_fn(|i| mg[i] - scale * rp[i]);
    let sim = Similarity {
        scale,
        rotation,
        translation,
    };
    let aligned = pred.iter().map(|p| sim.apply(p)).collect();
    Ok((sim, aligned))
}

fn check_shapes(a: &[Vec<Vec3<f64>>], b: &[Vec<Vec3<f64>>]) -> Result<usize, SolveError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(SolveError::Shape("prediction and ground truth differ in shape".into()));
    }
    let n: usize = a.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(SolveError::Shape("empty sequence".into()));
    }
    Ok(n)
}

/// Mean per-joint Euclidean error, in the units of the inputs.
pub fn mpjpe(pred: &[Vec<Vec3<f64>>], gt: &[Vec<Vec3<f64>>]) -> Result<f64, SolveError> {
    let n = check_shapes(pred, gt)?;
    let total: f64 = pred
        .iter()
        .flatten()
        .zip(gt.iter().flatten())
        .map(|(p, g)| norm3(&sub3(p, g)))
        .sum();
    Ok(total / n as f64)
}

/// Mean per-joint L1 error.
pub fn l1_pose_loss(pred: &[Vec<Vec3<f64>>], gt: &[Vec<Vec3<f64>>]) -> Result<f64, SolveError> {
    let n = check_shapes(pred, gt)?;
    let total: f64 = pred
        .iter()
        .flatten()
        .zip(gt.iter().flatten())
        .map(|(p, g)| (0..3).map(|i| (p[i] - g[i]).abs()).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_geodesic_error(r_pred: &Mat3<f64>, r_gt: &Mat3<f64>) -> f64 {
    let m = matmul3(&transpose3(r_pred), r_gt);
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    norm3(&v).atan2(m[0][0] + m[1][1] + m[2][2] - 1.0).to_degrees()
}

/// Angle between two translation directions, in degrees.
pub fn translation_angle_error(t_pred: &Vec3<f64>, t_gt: &Vec3<f64>) -> Result<f64, SolveError> {
    let (a, b) = (norm3(t_pred), norm3(t_gt));
    if !(a > 0.0 && b > 0.0) {
        return Err(SolveError::UndefinedDirection);
    }
    Ok(norm3(&cross(t_pred, t_gt)).atan2(dot3(t_pred, t_gt)).to_degrees())
}

/// Poses expressed in the frame of camera `anchor`, with the translation of
/// camera `scale_ref` scaled to unit length.
pub fn gauge_poses(poses: &[Pose], anchor: usize, scale_ref: usize) -> Result<Vec<Pose>, SolveError> {
    let rel: Vec<Pose> = poses.iter().map(|p| relative_pose(&poses[anchor], p)).collect();
    let s = norm3(&rel[scale_ref].t);
    if !(s > 0.0) {
        return Err(SolveError::UndefinedDirection);
    }
    Ok(rel
        .into_iter()
        .map(|p| Pose {
            r: p.r,
            t: scale3(&p.t, 1.0 / s),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Per non-anchor camera, degrees.
    pub rotation_deg: Vec<f64>,
    pub translation_deg: Vec<f64>,
    pub mean_rotation_deg: f64,
    pub mean_translation_deg: f64,
    pub max_rotation_deg: f64,
}

/// Rotation and translation-direction errors after bringing both camera
/// sets into the same anchor gauge.
pub fn camera_errors(pred: &[Camera], gt: &[Camera], anchor: usize, scale_ref: usize) -> Result<PoseMetrics, SolveError> {
    if pred.len() != gt.len() {
        return Err(SolveError::Shape(format!("{} vs {} cameras", pred.len(), gt.len())));
    }
    let gp = gauge_poses(&pred.iter().map(|c| c.pose).collect::<Vec<_>>(), anchor, scale_ref)?;
    let gg = gauge_poses(&gt.iter().map(|c| c.pose).collect::<Vec<_>>(), anchor, scale_ref)?;
    let mut rotation_deg = Vec::new();
    let mut translation_deg = Vec::new();
    for v in (0..pred.len()).filter(|&v| v != anchor) {
        rotation_deg.push(rotation_geodesic_error(&gp[v].r, &gg[v].r));
        translation_deg.push(translation_angle_error(&gp[v].t, &gg[v].t)?);
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
    Ok(PoseMetrics {
        mean_rotation_deg: mean(&rotation_deg),
        mean_translation_deg: mean(&translation_deg),
        max_rotation_deg: rotation_deg.iter().copied().fold(0.0, f64::max),
        rotation_deg,
        translation_deg,
    })
}

/// Median of a non-empty sample; NaN for an empty one.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::so3_exp;

    #[test]
    fn planted_similarity() {
        let gt: Vec<Vec3<f64>> = (0..10)
            .map(|i| {
                let t = i as f64;
                [t.sin(), (1.3 * t).cos(), 0.1 * t]
            })
            .collect();
        let (id, _) = procrustes_align(&gt, &gt).unwrap();
        assert!((id.scale - 1.0).abs() < 1e-12);
        let r = so3_exp(&[0.3, -0.2, 0.9]);
        let truth = Similarity {
            scale: 2.0,
            rotation: r,
            translation: [0.5, -1.0, 3.0],
        };
        let moved: Vec<_> = gt.iter().map(|p| truth.apply(p)).collect();
        let (est, aligned) = procrustes_align(&gt, &moved).unwrap();
        assert!((est.scale - 2.0).abs() < 1e-10);
        for i in 0..3 {
            assert!((est.translation[i] - truth.translation[i]).abs() < 1e-10);
            for j in 0..3 {
                assert!((est.rotation[i][j] - r[i][j]).abs() < 1e-10);
            }
        }
        for (a, b) in aligned.iter().zip(&moved) {
            assert!(norm3(&sub3(a, b)) < 1e-10);
        }
        let line: Vec<Vec3<f64>> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(procrustes_align(&line, &line), Err(SolveError::AlignmentDegenerate)));
    }

    #[test]
    fn pose_errors() {
        let gt = vec![vec![[0.0; 3]; 17]];
        let mut pred = gt.clone();
        assert_eq!(mpjpe(&pred, &gt).unwrap(), 0.0);
        pred[0][4] = [3.0, 4.0, 0.0];
        assert!((mpjpe(&pred, &gt).unwrap() - 5.0 / 17.0).abs() < 1e-15);
        assert!((l1_pose_loss(&pred, &gt).unwrap() - 7.0 / 17.0).abs() < 1e-15);
        assert!(mpjpe(&pred, &[vec![[0.0; 3]; 3]]).is_err());
    }

    #[test]
    fn angle_errors() {
        let i = so3_exp(&[0.0, 0.0, 0.0]);
        assert_eq!(rotation_geodesic_error(&i, &i), 0.0);
        let z = so3_exp(&[0.0, 0.0, 10f64.to_radians()]);
        assert!((rotation_geodesic_error(&z, &i) - 10.0).abs() < 1e-10);
        assert!(translation_angle_error(&[1.0, 2.0, 3.0], &[3.0, 6.0, 9.0]).unwrap().abs() < 1e-12);
        assert!(translation_angle_error(&[0.0; 3], &[1.0, 0.0, 0.0]).is_err());
    }
}
