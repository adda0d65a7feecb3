//! The desk-scale TER refinement experiment: jitter a clean synthetic motion,
//! train on the jittered copy and compare both against the clean motion.

use mvgc_core::numerics::small::Vec3;
use mvgc_core::scenegen::{synth_motion_scaled, MotionStyle};
use mvgc_core::solver::mpjpe;
use mvgc_core::ter::{equiv_loss, jitter_sequence, rectify_sequence, sample_rigid, train_ter, TerParams, TerTrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::report::TerSummary;

/// Seeds of the fixed rigid motions used to measure equivariance.
pub const EQUIV_PROBE_SEED: u64 = 9000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerExperiment {
    pub joints: usize,
    pub frames: usize,
    pub motion_seed: u64,
    /// Frame-time multiplier of the synthetic motion; `0.5` doubles the frame rate.
    pub time_scale: f64,
    /// Jitter standard deviation relative to the per-frame pose scale.
    pub jitter: f64,
    pub jitter_seed: u64,
    pub hidden: usize,
    pub init_seed: u64,
    pub equiv_probes: usize,
    pub train: TerTrainConfig,
}

impl Default for TerExperiment {
    fn default() -> Self {
        TerExperiment {
            joints: 17,
            frames: 100,
            motion_seed: 100,
            time_scale: 0.5,
            jitter: 0.02,
            jitter_seed: 7,
            hidden: 64,
            init_seed: 1,
            equiv_probes: 5,
            train: TerTrainConfig::default(),
        }
    }
}

/// Mean of `equiv_loss` over `probes` fixed rigid motions.
pub fn mean_equiv_loss(params: &TerParams, seq: &[Vec<Vec3<f64>>], probes: usize) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..probes {
        let (r, t) = sample_rigid(EQUIV_PROBE_SEED + k as u64);
        total += equiv_loss(params, seq, &r, &t)?;
    }
    Ok(total / probes.max(1) as f64)
}

fn frame_errors(pred: &[Vec<Vec3<f64>>], gt: &[Vec<Vec3<f64>>]) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let d: f64 = p
                .iter()
                .zip(g)
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .sum();
            d / p.len().max(1) as f64
        })
        .collect()
}

/// Trains on the jittered copy of `clean`, or of a generated motion when
/// `clean` is `None`, and returns the trained parameters with a summary.
pub fn run_ter_experiment(exp: &TerExperiment, clean: Option<Vec<Vec<Vec3<f64>>>>) -> Result<(TerParams, TerSummary)> {
    let clean = match clean {
        Some(c) => c,
        None => synth_motion_scaled(exp.joints, exp.frames, exp.motion_seed, MotionStyle::Sinusoidal, exp.time_scale)?.frames,
    };
    let joints = clean.first().map_or(0, Vec::len);
    if clean.iter().any(|f| f.len() != joints) {
        return Err(HarnessError::Config("frames carry different joint counts".into()));
    }
    let noisy = jitter_sequence(&clean, exp.jitter, exp.jitter_seed)?;
    let init = TerParams::random(joints, exp.hidden, exp.init_seed)?;
    let initial_equiv = mean_equiv_loss(&init, &noisy, exp.equiv_probes)?;
    let rep = train_ter(&init, std::slice::from_ref(&noisy), &exp.train)?;
    let final_equiv = mean_equiv_loss(&rep.params, &noisy, exp.equiv_probes)?;
    let rectified = rectify_sequence(&rep.params, &noisy)?.poses;
    let summary = TerSummary {
        joints,
        hidden: exp.hidden,
        frames: clean.len(),
        epochs: exp.train.epochs,
        losses: rep.losses,
        best_losses: rep.best_losses,
        best_epoch: rep.best_epoch,
        initial_equiv,
        final_equiv,
        noisy_mpjpe: mpjpe(&noisy, &clean)?,
        rectified_mpjpe: mpjpe(&rectified, &clean)?,
        frame_errors: frame_errors(&rectified, &clean),
    };
    Ok((rep.params, summary))
}
