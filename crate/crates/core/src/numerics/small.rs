//! Fixed-size vector and matrix helpers, generic over [`Scalar`].

use super::Scalar;

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];
pub type Mat34<S> = [[S; 4]; 3];

pub fn cross<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3<S: Scalar>(a: &Vec3<S>) -> S {
    dot3(a, a).sqrt()
}

pub fn scale3<S: Scalar>(a: &Vec3<S>, s: S) -> Vec3<S> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn sub3<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn matvec3<S: Scalar>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [dot3(&m[0], v), dot3(&m[1], v), dot3(&m[2], v)]
}

pub fn matmul3<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = *a;
    for (r, row) in out.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn transpose3<S: Scalar>(m: &Mat3<S>) -> Mat3<S> {
    let mut out = *m;
    for (r, row) in out.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = m[c][r];
        }
    }
    out
}

/// `[v]×` so that `skew(v)·w = v × w`.
pub fn skew<S: Scalar>(v: &Vec3<S>) -> Mat3<S> {
    let z = v[0].lift(0.0);
    [[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]]
}

pub fn det3<S: Scalar>(m: &Mat3<S>) -> S {
    dot3(&m[0], &cross(&m[1], &m[2]))
}

pub fn identity3<S: Scalar>(like: S) -> Mat3<S> {
    let (o, z) = (like.lift(1.0), like.lift(0.0));
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn to_f64_3<S: Scalar>(v: &Vec3<S>) -> [f64; 3] {
    [v[0].value(), v[1].value(), v[2].value()]
}

pub fn to_f64_33<S: Scalar>(m: &Mat3<S>) -> [[f64; 3]; 3] {
    [to_f64_3(&m[0]), to_f64_3(&m[1]), to_f64_3(&m[2])]
}

/// `K·[R | t]`.
pub fn compose_projection<S: Scalar>(k: &Mat3<S>, r: &Mat3<S>, t: &Vec3<S>) -> Mat34<S> {
    let kr = matmul3(k, r);
    let kt = matvec3(k, t);
    let mut p = [[kt[0]; 4]; 3];
    for i in 0..3 {
        p[i] = [kr[i][0], kr[i][1], kr[i][2], kt[i]];
    }
    p
}

/// Inverse of an upper-triangular calibration matrix.
pub fn inv_upper3(k: &Mat3<f64>) -> Mat3<f64> {
    let (a, b, c) = (k[0][0], k[0][1], k[0][2]);
    let (d, e) = (k[1][1], k[1][2]);
    let f = k[2][2];
    [
        [1.0 / a, -b / (a * d), (b * e - c * d) / (a * d * f)],
        [0.0, 1.0 / d, -e / (d * f)],
        [0.0, 0.0, 1.0 / f],
    ]
}
