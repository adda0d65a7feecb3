//! Pinhole cameras: intrinsics, rotation parametrizations, projection and
//! fundamental matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::small::{
    compose_projection, cross, dot3, identity3, inv_upper3, matmul3, matvec3, norm3, scale3, skew,
    sub3, to_f64_3, to_f64_33, transpose3, Mat3, Mat34, Vec3,
};
use crate::numerics::Scalar;

/// Minimum angle between the two 6D columns before Gram-Schmidt is refused.
pub const MIN_6D_ANGLE: f64 = 1e-6;
/// Below this rotation-vector norm `so3_exp` switches to its Taylor series.
pub const SO3_TAYLOR_THRESHOLD: f64 = 1e-8;
/// Smallest admissible magnitude of the third homogeneous coordinate.
pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("degenerate 6D rotation: columns are (nearly) parallel or zero")]
    DegenerateRotation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point projects onto the principal plane (w = {0:e})")]
    DegenerateProjection(f64),
    #[error("zero baseline between cameras")]
    ZeroBaseline,
    #[error("not a rotation matrix: {0}")]
    InvalidRotation(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<S = f64> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
}

impl<S: Scalar> Intrinsics<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S) -> Result<Self, CameraError> {
        if !(fx.value() > 0.0 && fy.value() > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                fx.value(),
                fy.value()
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Mat3<S> {
        let z = self.fx.lift(0.0);
        let o = self.fx.lift(1.0);
        [[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, o]]
    }

    pub fn to_f64(&self) -> Intrinsics<f64> {
        Intrinsics {
            fx: self.fx.value(),
            fy: self.fy.value(),
            cx: self.cx.value(),
            cy: self.cy.value(),
        }
    }

    /// Inverse calibration matrix, written out explicitly for zero skew.
    pub fn inverse_matrix(&self) -> Mat3<S> {
        let z = self.fx.lift(0.0);
        let o = self.fx.lift(1.0);
        [
            [o / self.fx, z, -self.cx / self.fx],
            [z, o / self.fy, -self.cy / self.fy],
            [z, z, o],
        ]
    }
}

impl Intrinsics<f64> {
    pub fn lift<S: Scalar>(&self, like: S) -> Intrinsics<S> {
        Intrinsics {
            fx: like.lift(self.fx),
            fy: like.lift(self.fy),
            cx: like.lift(self.cx),
            cy: like.lift(self.cy),
        }
    }
}

/// `K̂ = K_shared ⊕ ΔK` acting on `(fx, fy, cx, cy)`.
pub fn apply_intrinsic_delta<S: Scalar>(
    shared: &Intrinsics<S>,
    delta: &[S; 4],
) -> Result<Intrinsics<S>, CameraError> {
    Intrinsics::new(
        shared.fx + delta[0],
        shared.fy + delta[1],
        shared.cx + delta[2],
        shared.cy + delta[3],
    )
}

/// World-to-camera pose: `x_cam = R·X + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<S = f64> {
    pub r: Mat3<S>,
    pub t: Vec3<S>,
}

impl<S: Scalar> Pose<S> {
    pub fn to_f64(&self) -> Pose<f64> {
        Pose {
            r: to_f64_33(&self.r),
            t: to_f64_3(&self.t),
        }
    }

    /// Camera centre in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3<S> {
        let c = matvec3(&transpose3(&self.r), &self.t);
        [-c[0], -c[1], -c[2]]
    }

    pub fn apply(&self, x: &Vec3<S>) -> Vec3<S> {
        let rx = matvec3(&self.r, x);
        [rx[0] + self.t[0], rx[1] + self.t[1], rx[2] + self.t[2]]
    }
}

impl Pose<f64> {
    pub fn identity() -> Self {
        Pose {
            r: identity3(0.0),
            t: [0.0; 3],
        }
    }

    /// Checks `RᵀR = I` and `det R = +1` within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), CameraError> {
        let rtr = matmul3(&transpose3(&self.r), &self.r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                if (x - e).abs() > tol {
                    return Err(CameraError::InvalidRotation(format!(
                        "RᵀR[{i}][{j}] = {x}"
                    )));
                }
            }
        }
        let d = crate::numerics::small::det3(&self.r);
        if (d - 1.0).abs() > tol {
            return Err(CameraError::InvalidRotation(format!("det R = {d}")));
        }
        Ok(())
    }

    pub fn lift<S: Scalar>(&self, like: S) -> Pose<S> {
        Pose {
            r: self.r.map(|row| row.map(|x| like.lift(x))),
            t: self.t.map(|x| like.lift(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<S = f64> {
    pub k: Intrinsics<S>,
    pub pose: Pose<S>,
    pub p: Mat34<S>,
}

impl<S: Scalar> Camera<S> {
    pub fn new(k: Intrinsics<S>, pose: Pose<S>) -> Self {
        let p = compose_projection(&k.matrix(), &pose.r, &pose.t);
        Camera { k, pose, p }
    }

    pub fn to_f64(&self) -> Camera<f64> {
        Camera::new(self.k.to_f64(), self.pose.to_f64())
    }
}

impl Camera<f64> {
    pub fn lift<S: Scalar>(&self, like: S) -> Camera<S> {
        Camera::new(self.k.lift(like), self.pose.lift(like))
    }

    pub fn to_record(&self) -> CameraRecord {
        let r = self.pose.r;
        CameraRecord {
            fx: self.k.fx,
            fy: self.k.fy,
            cx: self.k.cx,
            cy: self.k.cy,
            r: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            t: self.pose.t,
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self, CameraError> {
        let k = Intrinsics::new(rec.fx, rec.fy, rec.cx, rec.cy)?;
        let r = &rec.r;
        let pose = Pose {
            r: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            t: rec.t,
        };
        pose.validate(1e-6)?;
        Ok(Camera::new(k, pose))
    }
}

/// Serialized camera: intrinsics, row-major rotation and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

/// Rotation from a 6D vector `(a₁, a₂)`; the first output column is `a₁/‖a₁‖`.
pub fn gram_schmidt_6d<S: Scalar>(r6: &[S; 6]) -> Result<Mat3<S>, CameraError> {
    let a1 = [r6[0], r6[1], r6[2]];
    let a2 = [r6[3], r6[4], r6[5]];
    let n1 = norm3(&a1).value();
    let n2 = norm3(&a2).value();
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(CameraError::DegenerateRotation);
    }
    let sin_angle = norm3(&to_f64_3(&cross(&a1, &a2))) / (n1 * n2);
    if !(sin_angle > MIN_6D_ANGLE.sin()) {
        return Err(CameraError::DegenerateRotation);
    }
    let b1 = scale3(&a1, norm3(&a1).lift(1.0) / norm3(&a1));
    let u2 = sub3(&a2, &scale3(&b1, dot3(&b1, &a2)));
    let b2 = scale3(&u2, norm3(&u2).lift(1.0) / norm3(&u2));
    let b3 = cross(&b1, &b2);
    Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
}

/// Inverse of [`gram_schmidt_6d`]: the first two columns of `r`.
pub fn rotation_to_6d(r: &Mat3<f64>) -> [f64; 6] {
    [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]]
}

/// Rodrigues' formula `exp([ω]×)`.
pub fn so3_exp<S: Scalar>(w: &Vec3<S>) -> Mat3<S> {
    let theta2 = dot3(w, w);
    let k = skew(w);
    let k2 = matmul3(&k, &k);
    let (a, b) = if theta2.value().sqrt() < SO3_TAYLOR_THRESHOLD {
        (theta2.lift(1.0) - theta2 / 6.0, theta2.lift(0.5) - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (theta.lift(1.0) - theta.cos()) / theta2)
    };
    let mut out = identity3(theta2);
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = out[i][j] + a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

/// Rotation vector of `r` (principal branch, angle in `[0, π]`).
pub fn so3_log(r: &Mat3<f64>) -> Vec3<f64> {
    let c = ((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = c.acos();
    let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    if theta < 1e-8 {
        return scale3(&v, 0.5);
    }
    if std::f64::consts::PI - theta < 1e-3 {
        // Near π the antisymmetric part vanishes; use the symmetric part.
        let diag = [r[0][0], r[1][1], r[2][2]];
        let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap();
        let mut axis = [0.0; 3];
        axis[i] = ((diag[i] - c) / (1.0 - c)).max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = (r[i][j] + r[j][i]) / (2.0 * (1.0 - c) * axis[i]);
            }
        }
        let n = norm3(&axis);
        let sign = if dot3(&axis, &v) < 0.0 { -1.0 } else { 1.0 };
        return scale3(&axis, sign * theta / n);
    }
    scale3(&v, theta / (2.0 * theta.sin()))
}

/// Pixel coordinates and camera-frame depth of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<S = f64> {
    pub uv: [S; 2],
    pub depth: S,
}

pub fn project<S: Scalar>(cam: &Camera<S>, x: &Vec3<S>) -> Result<Projection<S>, CameraError> {
    let p = &cam.p;
    let h: [S; 3] = [0, 1, 2].map(|i| p[i][0] * x[0] + p[i][1] * x[1] + p[i][2] * x[2] + p[i][3]);
    let w = h[2];
    if !(w.value().abs() > PROJECTION_EPS) {
        return Err(CameraError::DegenerateProjection(w.value()));
    }
    let depth = cam.pose.apply(x)[2];
    Ok(Projection {
        uv: [h[0] / w, h[1] / w],
        depth,
    })
}

/// Relative pose of camera `ν` with respect to camera `μ`:
/// `R_rel = R_ν R_μᵀ`, `t_rel = t_ν − R_rel t_μ`.
pub fn relative_pose<S: Scalar>(mu: &Pose<S>, nu: &Pose<S>) -> Pose<S> {
    let r = matmul3(&nu.r, &transpose3(&mu.r));
    let t = sub3(&nu.t, &matvec3(&r, &mu.t));
    Pose { r, t }
}

/// `F = K_μ⁻ᵀ · R_relᵀ [t_rel]× · K_ν⁻¹`, satisfying `m_μᵀ F m_ν = 0`.
///
/// The relative pose maps camera-`μ` coordinates to camera-`ν` coordinates.
pub fn fundamental_from_cameras<S: Scalar>(
    k_mu: &Intrinsics<S>,
    k_nu: &Intrinsics<S>,
    r_rel: &Mat3<S>,
    t_rel: &Vec3<S>,
) -> Result<Mat3<S>, CameraError> {
    if !(norm3(&to_f64_3(t_rel)) > 1e-12) {
        return Err(CameraError::ZeroBaseline);
    }
    let e = matmul3(&transpose3(r_rel), &skew(t_rel));
    let f = matmul3(
        &matmul3(&transpose3(&k_mu.inverse_matrix()), &e),
        &k_nu.inverse_matrix(),
    );
    Ok(f)
}

/// Fundamental matrix between two full cameras.
pub fn fundamental_between<S: Scalar>(mu: &Camera<S>, nu: &Camera<S>) -> Result<Mat3<S>, CameraError> {
    let rel = relative_pose(&mu.pose, &nu.pose);
    fundamental_from_cameras(&mu.k, &nu.k, &rel.r, &rel.t)
}

/// `K⁻¹` for a numeric upper-triangular calibration matrix.
pub fn inverse_calibration(k: &Mat3<f64>) -> Mat3<f64> {
    inv_upper3(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::small::det3;
    use crate::numerics::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close33(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() <= tol))
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3<f64> {
        let w: [f64; 3] = [0; 3].map(|_| rng.random_range(-2.0..2.0));
        so3_exp(&w)
    }

    #[test]
    fn gram_schmidt_basics() {
        let id: Mat3<f64> = identity3(0.0);
        assert!(close33(&gram_schmidt_6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), &id, 1e-15));
        assert!(close33(&gram_schmidt_6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap(), &id, 1e-15));
        assert_eq!(
            gram_schmidt_6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(CameraError::DegenerateRotation)
        );
        assert!(gram_schmidt_6d(&[1.0, 0.0, 0.0, 1.0, 1e-9, 0.0]).is_err());
    }

    #[test]
    fn gram_schmidt_random_is_rotation_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r6: [f64; 6] = [0; 6].map(|_| rng.random_range(-1.0..1.0));
            let r = gram_schmidt_6d(&r6).unwrap();
            Pose { r, t: [0.0; 3] }.validate(1e-10).unwrap();
            let n = (r6[0] * r6[0] + r6[1] * r6[1] + r6[2] * r6[2]).sqrt();
            assert!((r[0][0] - r6[0] / n).abs() < 1e-14);
            let (s1, s2) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
            let scaled = [
                r6[0] * s1, r6[1] * s1, r6[2] * s1, r6[3] * s2, r6[4] * s2, r6[5] * s2,
            ];
            assert!(close33(&gram_schmidt_6d(&scaled).unwrap(), &r, 1e-12));
            assert!(close33(&gram_schmidt_6d(&rotation_to_6d(&r)).unwrap(), &r, 1e-12));
        }
    }

    #[test]
    fn so3_exp_cases() {
        let id: Mat3<f64> = identity3(0.0);
        assert!(close33(&so3_exp(&[0.0; 3]), &id, 0.0));
        let rz = so3_exp(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let e = matvec3(&rz, &[1.0, 0.0, 0.0]);
        assert!((e[0]).abs() < 1e-15 && (e[1] - 1.0).abs() < 1e-15 && e[2].abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let w: [f64; 3] = [0; 3].map(|_| rng.random_range(-3.0..3.0));
            let nw = w.map(|x| -x);
            let r = so3_exp(&w);
            assert!(close33(&matmul3(&r, &so3_exp(&nw)), &id, 1e-12));
            assert!(close33(&transpose3(&r), &so3_exp(&nw), 1e-12));
            let back = so3_log(&r);
            assert!(close33(&so3_exp(&back), &r, 1e-10));
        }
        // Continuity across the Taylor switch.
        for th in [0.999e-8, 1.001e-8] {
            let exact = [[1.0, 0.0, 0.0], [0.0, th.cos(), -th.sin()], [0.0, th.sin(), th.cos()]];
            assert!(close33(&so3_exp(&[th, 0.0, 0.0]), &exact, 1e-16));
        }
    }

    #[test]
    fn so3_exp_gradient_matches_fd_near_zero() {
        let tape = Tape::new();
        let w = tape.vars(&[3e-9, -1e-9, 2e-9]);
        let r = so3_exp(&[w[0], w[1], w[2]]);
        let g = tape.gradient(r[1][0]);
        // d R[1][0] / d ω_z = 1 at ω = 0.
        assert!((g.wrt(&w[2]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn intrinsic_delta() {
        let k = Intrinsics::new(1000.0, 1000.0, 500.0, 500.0).unwrap();
        assert_eq!(apply_intrinsic_delta(&k, &[0.0; 4]).unwrap(), k);
        let out = apply_intrinsic_delta(&k, &[10.0, -10.0, 1.0, 2.0]).unwrap();
        assert_eq!(out, Intrinsics { fx: 1010.0, fy: 990.0, cx: 501.0, cy: 502.0 });
        let m = out.matrix();
        assert_eq!((m[1][0], m[2][0], m[2][1], m[0][1], m[2][2]), (0.0, 0.0, 0.0, 0.0, 1.0));
        assert!(matches!(
            apply_intrinsic_delta(&k, &[-1000.0, 0.0, 0.0, 0.0]),
            Err(CameraError::InvalidIntrinsics(_))
        ));
    }

    #[test]
    fn projection_cases() {
        let cam = Camera::new(Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap(), Pose::identity());
        let p = project(&cam, &[0.0, 0.0, 5.0]).unwrap();
        assert_eq!((p.uv, p.depth), ([0.0, 0.0], 5.0));
        let cam2 = Camera::new(Intrinsics::new(2.0, 2.0, 0.0, 0.0).unwrap(), Pose::identity());
        assert_eq!(project(&cam2, &[0.0, 0.0, 5.0]).unwrap().uv, [0.0, 0.0]);
        let cam3 = Camera::new(
            Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap(),
            Pose { r: identity3(0.0), t: [1.0, 0.0, 0.0] },
        );
        let p3 = project(&cam3, &[0.0, 0.0, 5.0]).unwrap();
        assert!((p3.uv[0] - 0.2).abs() < 1e-15 && p3.uv[1] == 0.0);
        assert!(matches!(
            project(&cam, &[1.0, 0.0, 0.0]),
            Err(CameraError::DegenerateProjection(_))
        ));
    }

    #[test]
    fn fundamental_hand_example() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let f = fundamental_from_cameras(&k, &k, &identity3(0.0), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]);
        assert_eq!(
            fundamental_from_cameras(&k, &k, &identity3(0.0), &[0.0; 3]),
            Err(CameraError::ZeroBaseline)
        );
    }

    #[test]
    fn fundamental_annihilates_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cams: Vec<Camera> = (0..2)
                .map(|_| {
                    let k = Intrinsics::new(
                        rng.random_range(800.0..1200.0),
                        rng.random_range(800.0..1200.0),
                        rng.random_range(400.0..600.0),
                        rng.random_range(400.0..600.0),
                    )
                    .unwrap();
                    let r = random_rotation(&mut rng);
                    let c: [f64; 3] = [0; 3].map(|_| rng.random_range(-3.0..3.0));
                    let t = matvec3(&r, &c).map(|x| -x);
                    Camera::new(k, Pose { r, t: sub3(&t, &[0.0, 0.0, -8.0]) })
                })
                .collect();
            let f = fundamental_between(&cams[0], &cams[1]).unwrap();
            let fro = f.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            let fnorm = f.map(|r| r.map(|x| x / fro));
            assert!(det3(&fnorm).abs() < 1e-12);
            for _ in 0..20 {
                let x: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
                let a = project(&cams[0], &x).unwrap().uv;
                let b = project(&cams[1], &x).unwrap().uv;
                let ma = [a[0], a[1], 1.0];
                let mb = [b[0], b[1], 1.0];
                let r = dot3(&ma, &matvec3(&fnorm, &mb));
                assert!(r.abs() < 1e-9, "{r}");
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = Camera::new(
            Intrinsics::new(900.0, 950.0, 510.0, 490.0).unwrap(),
            Pose { r: random_rotation(&mut rng), t: [0.1, -0.2, 4.0] },
        );
        let rec = cam.to_record();
        assert_eq!(Camera::from_record(&rec).unwrap(), cam);
        let bad = CameraRecord { fx: -1.0, ..rec };
        assert!(Camera::from_record(&bad).is_err());
    }
}
