use super::*;
use crate::numerics::small::{det3, matmul3, transpose3};
use crate::numerics::{finite_difference, relative_inf_error};
use crate::scenegen::{synth_motion, MotionStyle};

fn motion(j: usize, t: usize, seed: u64) -> Vec<Vec<Vec3<f64>>> {
    synth_motion(j, t, seed, MotionStyle::Sinusoidal).unwrap().frames
}

fn max_dev(a: &[Vec<Vec3<f64>>], b: &[Vec<Vec3<f64>>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .flat_map(|(p, q)| (0..3).map(move |i| (p[i] - q[i]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn two_joint_normalization() {
    let n = normalize_pose(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
    assert_eq!(n.c, [0.0, 0.0, 1.0]);
    assert_eq!(n.s, 2.0);
    assert_eq!(n.y, vec![0.0, 0.0, -0.5, 0.0, 0.0, 0.5]);
    assert_eq!(n.denormalize(), vec![[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]);
}

#[test]
fn normalization_rejects_collapsed_and_tiny_poses() {
    assert!(matches!(normalize_pose(&[[1.0; 3]; 4]), Err(TerError::DegeneratePose(_))));
    assert!(matches!(normalize_pose(&[[1.0; 3]]), Err(TerError::TooFewJoints(1))));
}

#[test]
fn dynamic_feature_blocks() {
    let v = [0.5, -1.0, 2.0];
    let a = [0.1, 0.2, -0.3];
    let lin = |t: f64| v.map(|x| t * x).to_vec();
    let x = dynamic_features(&lin(3.0), &lin(2.0), &lin(1.0));
    assert_eq!(&x[3..6], &v);
    assert!(x[6..].iter().all(|e| e.abs() < 1e-15));
    let quad = |t: f64| a.map(|x| t * t * x).to_vec();
    let x = dynamic_features(&quad(3.0), &quad(2.0), &quad(1.0));
    for i in 0..3 {
        assert!((x[6 + i] - 2.0 * a[i]).abs() < 1e-15);
    }
}

#[test]
fn zero_weight_gru_halves_the_state() {
    let p = TerParams::zeros(4, 8).unwrap();
    let h: Vec<f64> = (0..8).map(|i| i as f64 / 10.0 - 0.3).collect();
    let out = gru_step(&p, &h, &[0.7; 36], &[0.2; 12]).unwrap();
    for (o, i) in out.iter().zip(&h) {
        assert!((o - 0.5 * i).abs() < 1e-15);
    }
    assert!(gru_step(&p, &h, &[0.0; 35], &[0.0; 12]).is_err());
}

#[test]
fn zero_network_is_the_identity() {
    let seq = motion(6, 12, 1);
    let p = TerParams::zeros(6, 8).unwrap();
    let r = rectify_sequence(&p, &seq).unwrap();
    assert!(max_dev(&r.poses, &seq) < 1e-12);
    let (rot, t) = sample_rigid(3);
    assert!(equiv_loss(&p, &seq, &rot, &t).unwrap() < 1e-24);
}

#[test]
fn online_and_batch_rectification_agree() {
    let seq = motion(5, 9, 2);
    let p = TerParams::random(5, 8, 4).unwrap();
    let batch = rectify_sequence(&p, &seq).unwrap();
    let mut st = TerState::new(&p);
    let online: Vec<_> = seq.iter().map(|m| rectify_frame(&p, &mut st, m).unwrap()).collect();
    assert!(max_dev(&batch.poses, &online) < 1e-14);
    assert!(st.history.len() == 2);
}

#[test]
fn rectification_is_translation_equivariant() {
    let seq = motion(6, 10, 3);
    let p = TerParams::random(6, 8, 5).unwrap();
    let tau = [3.5, -12.0, 0.25];
    let moved: Vec<Vec<Vec3<f64>>> = seq
        .iter()
        .map(|m| m.iter().map(|q| std::array::from_fn(|i| q[i] + tau[i])).collect())
        .collect();
    let a = rectify_sequence(&p, &seq).unwrap();
    let b = rectify_sequence(&p, &moved).unwrap();
    let shifted: Vec<Vec<Vec3<f64>>> = a
        .poses
        .iter()
        .map(|m| m.iter().map(|q| std::array::from_fn(|i| q[i] + tau[i])).collect())
        .collect();
    assert!(max_dev(&b.poses, &shifted) < 1e-12);
}

#[test]
fn rigid_head_outputs_rotations() {
    let p = TerParams::random(4, 8, 6).unwrap();
    for k in 0..5 {
        let h: Vec<f64> = (0..8).map(|i| ((i * 7 + k * 3) as f64).sin() * 5.0).collect();
        let r = rigid_rotation(&p, &h).unwrap();
        let rtr = matmul3(&transpose3(&r), &r);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((rtr[i][j] - e).abs() < 1e-10);
            }
        }
        assert!((det3(&r) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn identity_motion_has_no_equivariance_error() {
    let seq = motion(4, 6, 7);
    let p = TerParams::random(4, 8, 1).unwrap();
    let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert_eq!(equiv_loss(&p, &seq, &eye, &[0.0; 3]).unwrap(), 0.0);
    let (r, t) = sample_rigid(11);
    assert!(equiv_loss(&p, &seq, &r, &t).unwrap() > 0.0);
}

#[test]
fn difference_losses() {
    let c = vec![vec![0.3, -0.1, 0.2]; 5];
    assert_eq!(vel_loss(&c).unwrap(), 0.0);
    assert!(jerk_loss(&c).unwrap() < 1e-30);
    let v = [0.5, 1.0, -2.0];
    let lin: Vec<Vec<f64>> = (0..6).map(|t| v.iter().map(|x| t as f64 * x).collect()).collect();
    assert!((vel_loss(&lin).unwrap() - 5.25).abs() < 1e-12);
    assert!(jerk_loss(&lin).unwrap().abs() < 1e-24);
    assert!(matches!(vel_loss(&lin[..1]), Err(TerError::InsufficientLength { need: 2, got: 1 })));
    assert!(matches!(jerk_loss(&lin[..3]), Err(TerError::InsufficientLength { need: 4, got: 3 })));
}

#[test]
fn loss_is_the_weighted_sum_of_its_parts() {
    let seq = motion(4, 6, 8);
    let p = TerParams::random(4, 8, 2).unwrap();
    let w = TerWeights { vel: 0.7, jerk: 0.3, equiv: 2.0 };
    let l = ter_loss(&p, &seq, &w, 5).unwrap();
    assert!((l.total - (0.7 * l.vel + 0.3 * l.jerk + 2.0 * l.equiv)).abs() < 1e-14);
    let (r, t) = sample_rigid(5);
    assert!((l.equiv - equiv_loss(&p, &seq, &r, &t).unwrap()).abs() < 1e-14);
    let zero = TerWeights { vel: 0.0, jerk: 0.0, equiv: 0.0 };
    assert_eq!(ter_loss(&p, &seq, &zero, 5).unwrap().total, 0.0);
    assert!(ter_loss(&p, &seq, &TerWeights { vel: -1.0, ..w }, 5).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let seq = motion(4, 6, 9);
    let p = TerParams::random(4, 8, 3).unwrap();
    let w = TerWeights::default();
    let (_, g) = ter_loss_and_gradient(&p, &seq, &w, 17).unwrap();
    let f = |x: &[f64]| ter_loss(&TerParams::from_flat(4, 8, x.to_vec()).unwrap(), &seq, &w, 17).unwrap().total;
    let fd = finite_difference(f, p.as_slice(), 1e-6);
    let err = relative_inf_error(&g, &fd, 1e-8);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn hidden_state_gradient_matches_finite_differences() {
    let p = TerParams::random(4, 8, 12).unwrap();
    let h: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos() * 0.5).collect();
    let x: Vec<f64> = (0..36).map(|i| (i as f64 * 1.3).sin()).collect();
    let delta: Vec<f64> = (0..12).map(|i| (i as f64 * 0.4).cos() * 0.2).collect();
    let c: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 * 0.25).collect();
    let f = |th: &[f64]| -> f64 {
        let out = gru_step_with(4, 8, th, &h, &x, &delta).unwrap();
        out.iter().zip(&c).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let th = tape.vars(p.as_slice());
    let hv: Vec<_> = h.iter().map(|&v| tape.constant(v)).collect();
    let dv: Vec<_> = delta.iter().map(|&v| tape.constant(v)).collect();
    let out = gru_step_with(4, 8, &th, &hv, &x, &dv).unwrap();
    let y = Scalar::lincomb(&c, &out);
    let g = tape.gradient(y).collect(&th);
    let fd = finite_difference(f, p.as_slice(), 1e-6);
    assert!(relative_inf_error(&g, &fd, 1e-8) < 1e-4);
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let p = TerParams::random(3, 5, 21).unwrap();
    let ck = p.to_checkpoint();
    assert_eq!(TerParams::from_checkpoint(&ck).unwrap(), p);
    let json = serde_json::to_string(&ck).unwrap();
    let back: TerCheckpoint = serde_json::from_str(&json).unwrap();
    assert_eq!(TerParams::from_checkpoint(&back).unwrap(), p);

    let mut bad = ck.clone();
    bad.weights.insert("G".into(), WeightArray::Vector(vec![0.0; 3]));
    let err = TerParams::from_checkpoint(&bad).unwrap_err();
    assert!(err.to_string().contains("G"), "{err}");
    let mut missing = ck;
    missing.weights.remove("b_h");
    assert!(TerParams::from_checkpoint(&missing).unwrap_err().to_string().contains("b_h"));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let seqs = vec![motion(4, 6, 1), motion(4, 6, 2)];
    let p = TerParams::random(4, 8, 1).unwrap();
    for optimizer in [TerOptimizer::Sgd, TerOptimizer::default()] {
        let cfg = TerTrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            optimizer,
            ..Default::default()
        };
        let rep = train_ter(&p, &seqs, &cfg).unwrap();
        assert_eq!(rep.params, p);
        assert_eq!(rep.losses.len(), 3);
    }
}

#[test]
fn training_is_deterministic_and_tracks_best_loss() {
    let seqs = vec![motion(4, 8, 3)];
    let p = TerParams::random(4, 8, 2).unwrap();
    let cfg = TerTrainConfig {
        epochs: 15,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let a = train_ter(&p, &seqs, &cfg).unwrap();
    let b = train_ter(&p, &seqs, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.best_losses.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(a.best_losses[a.best_epoch], a.losses[a.best_epoch]);
    assert!(train_ter(&p, &[motion(4, 3, 1)], &cfg).is_err());
}

#[test]
fn divergence_is_reported() {
    let seqs = vec![motion(4, 8, 3)];
    let p = TerParams::random(4, 8, 2).unwrap();
    let cfg = TerTrainConfig {
        epochs: 50,
        learning_rate: 1e4,
        clip_norm: 1e12,
        optimizer: TerOptimizer::Sgd,
        ..Default::default()
    };
    assert!(matches!(train_ter(&p, &seqs, &cfg), Err(TerError::Diverged { .. })));
}

#[test]
fn jitter_scales_with_the_pose() {
    let seq = motion(6, 20, 4);
    let noisy = jitter_sequence(&seq, 0.02, 1).unwrap();
    let mut sq = 0.0;
    let mut ss = 0.0;
    for (a, b) in seq.iter().zip(&noisy) {
        let s = normalize_pose(a).unwrap().s;
        for (p, q) in a.iter().zip(b) {
            sq += (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>();
            ss += 3.0 * (0.02 * s).powi(2);
        }
    }
    assert!((sq / ss - 1.0).abs() < 0.3);
    assert_eq!(jitter_sequence(&seq, 0.0, 1).unwrap(), seq);
}
