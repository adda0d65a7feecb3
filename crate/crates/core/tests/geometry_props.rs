use mvgc_core::camera::*;
use mvgc_core::numerics::small::{matmul3, matvec3, transpose3, Mat3};
use mvgc_core::scenegen::{random_generic_rig, synth_scene, SceneBundle, SceneConfig};
use mvgc_core::triangulate::*;
use proptest::prelude::*;

fn orthonormality_error(r: &Mat3<f64>) -> f64 {
    let g = matmul3(&transpose3(r), r);
    let mut e: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            e = e.max((g[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    e
}

fn arb_vec3(r: f64) -> impl Strategy<Value = [f64; 3]> {
    proptest::array::uniform3(-r..r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_schmidt_gives_rotations(a in arb_vec3(2.0), b in arb_vec3(2.0)) {
        let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(na > 1e-2 && nc > 1e-2 * na);
        let r = gram_schmidt_6d(&[a[0], a[1], a[2], b[0], b[1], b[2]]).unwrap();
        prop_assert!(orthonormality_error(&r) < 1e-12);
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        prop_assert!((det - 1.0).abs() < 1e-12);
        let back = gram_schmidt_6d(&rotation_to_6d(&r)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((back[i][j] - r[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn so3_exp_and_log_are_inverse(w in arb_vec3(1.8)) {
        let r = so3_exp(&w);
        prop_assert!(orthonormality_error(&r) < 1e-12);
        let back = so3_log(&r);
        for i in 0..3 {
            prop_assert!((back[i] - w[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn fundamental_annihilates_projections(seed in 0u64..500, x in arb_vec3(0.8)) {
        let rig = random_generic_rig(4, seed).unwrap();
        let (a, b) = (&rig.cameras[0], &rig.cameras[2]);
        let f = fundamental_between(a, b).unwrap();
        let ma = project(a, &x).unwrap().uv;
        let mb = project(b, &x).unwrap().uv;
        let epi = sampson_distance(&f, &[ma[0], ma[1], 1.0], &[mb[0], mb[1], 1.0]).unwrap();
        prop_assert!(epi < 1e-12);
    }

    #[test]
    fn triangulation_is_rigidly_equivariant(seed in 0u64..500, w in arb_vec3(1.0), tau in arb_vec3(3.0), x in arb_vec3(0.8)) {
        let rig = random_generic_rig(4, seed).unwrap();
        let uv: Vec<[f64; 2]> = rig.cameras.iter().map(|c| project(c, &x).unwrap().uv).collect();
        let conf = vec![1.0; 4];
        let base = triangulate_pixels(&rig.cameras, &uv, &conf).unwrap().point;
        prop_assert!((0..3).all(|i| (base[i] - x[i]).abs() < 1e-9));

        // Moving the world by (R, t) moves cameras by the inverse and leaves images fixed.
        let r = so3_exp(&w);
        let moved: Vec<Camera> = rig
            .cameras
            .iter()
            .map(|c| {
                let r2 = matmul3(&c.pose.r, &transpose3(&r));
                let rt = matvec3(&r2, &tau);
                Camera::new(c.k, Pose { r: r2, t: [c.pose.t[0] - rt[0], c.pose.t[1] - rt[1], c.pose.t[2] - rt[2]] })
            })
            .collect();
        let y = triangulate_pixels(&moved, &uv, &conf).unwrap().point;
        let expect = matvec3(&r, &base);
        for i in 0..3 {
            prop_assert!((y[i] - expect[i] - tau[i]).abs() < 1e-9);
        }
    }
}

fn noisy_scene(seed: u64, sigma: f64, outliers: f64) -> SceneBundle {
    synth_scene(&SceneConfig {
        seed,
        sigma_px: sigma,
        outlier_rate: outliers,
        frames: 20,
        ..Default::default()
    })
    .unwrap()
}

fn pairs(b: &SceneBundle, a: usize, c: usize) -> Vec<([f64; 2], [f64; 2])> {
    let o = &b.observations.views;
    o[a].iter().flatten().zip(o[c].iter().flatten()).map(|(p, q)| (p.uv, q.uv)).collect()
}

#[test]
fn noiseless_sequence_triangulates_exactly() {
    let b = noisy_scene(11, 0.0, 0.0);
    let cams = b.rig().unwrap().cameras;
    for (f, frame) in b.motion.frames.iter().enumerate() {
        for (j, x) in frame.iter().enumerate() {
            let uv: Vec<[f64; 2]> = (0..4).map(|v| b.observations.views[v][f][j].uv).collect();
            let p = triangulate_pixels(&cams, &uv, &[1.0; 4]).unwrap();
            assert!((0..3).all(|i| (p.point[i] - x[i]).abs() < 1e-9));
            assert!(p.cheirality);
        }
    }
}

#[test]
fn eight_point_recovers_epipolar_geometry() {
    let b = noisy_scene(12, 0.0, 0.0);
    let cams = b.rig().unwrap().cameras;
    let p = pairs(&b, 0, 1);
    let f = eight_point(&p).unwrap();
    let truth = fundamental_between(&cams[0], &cams[1]).unwrap();
    let scale = |m: &Mat3<f64>| m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let (sf, st) = (scale(&f), scale(&truth));
    let sign = if (0..9).map(|i| f[i / 3][i % 3] * truth[i / 3][i % 3]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for i in 0..9 {
        assert!((sign * f[i / 3][i % 3] / sf - truth[i / 3][i % 3] / st).abs() < 1e-6);
    }
}

#[test]
fn ransac_rejects_outliers_deterministically() {
    let b = noisy_scene(13, 1.0, 0.2);
    let p = pairs(&b, 1, 3);
    let r1 = ransac_eight_point(&p, 4.0, 500, 3).unwrap();
    let r2 = ransac_eight_point(&p, 4.0, 500, 3).unwrap();
    assert_eq!(r1, r2);
    let flags: Vec<bool> = {
        let o = &b.observations.views;
        o[1].iter().flatten().zip(o[3].iter().flatten()).map(|(a, c)| a.outlier || c.outlier).collect()
    };
    let clean_kept = r1.inliers.iter().zip(&flags).filter(|(i, o)| **i && !**o).count();
    let clean = flags.iter().filter(|o| !**o).count();
    assert!(clean_kept as f64 > 0.9 * clean as f64);
    let outliers_kept = r1.inliers.iter().zip(&flags).filter(|(i, o)| **i && **o).count();
    assert!((outliers_kept as f64) < 0.2 * (flags.len() - clean) as f64);
}

#[test]
fn refinement_does_not_increase_reprojection_error() {
    let b = noisy_scene(14, 2.0, 0.0);
    let cams = b.rig().unwrap().cameras;
    let ps: Vec<_> = cams.iter().map(|c| c.p).collect();
    for j in 0..17 {
        let uv: Vec<[f64; 2]> = (0..4).map(|v| b.observations.views[v][0][j].uv).collect();
        let dlt = triangulate_pixels(&cams, &uv, &[1.0; 4]).unwrap().point;
        let refined = refine_point(&ps, &uv, &[1.0; 4], dlt).unwrap();
        let err = |x: &[f64; 3]| -> f64 {
            cams.iter()
                .zip(&uv)
                .map(|(c, m)| {
                    let q = project(c, x).unwrap().uv;
                    (q[0] - m[0]).powi(2) + (q[1] - m[1]).powi(2)
                })
                .sum()
        };
        assert!(err(&refined) <= err(&dlt) + 1e-9);
    }
}
