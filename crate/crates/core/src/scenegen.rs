//! Seeded synthetic scenes: generic camera rings, articulated motion and
//! noisy 2D observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, so3_exp, Camera, CameraError, CameraRecord, Intrinsics, Pose};
use crate::ideal::{genericity_certificate, Correspondences};
use crate::numerics::small::{add3, cross, matmul3, matvec3, norm3, scale3, sub3, Mat3, Vec3};

pub const IMAGE_SIZE: f64 = 1000.0;
pub const GENERICITY_THRESHOLD: f64 = 1e-6;
pub const MAX_RESAMPLES: usize = 20;
pub const FOCAL_RANGE: (f64, f64) = (800.0, 1200.0);
/// Observation covariances never shrink below this standard deviation (px).
pub const MIN_SIGMA_PX: f64 = 1e-3;
/// Radius (m) and angular rate (rad per frame) of the root's circular walk.
pub const TRAJECTORY_RADIUS: f64 = 1.0;
pub const TRAJECTORY_RATE: f64 = 0.06;
pub const OUTLIER_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("camera count {0} outside 2..=8")]
    CameraCount(usize),
    #[error("no generic rig after {0} attempts (best certificate {1:e})")]
    GenerationFailed(usize, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub cameras: Vec<Camera>,
    pub genericity_certificate: f64,
    pub image_size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigRecord {
    pub cameras: Vec<CameraRecord>,
    pub genericity_certificate: f64,
    pub image_size: [f64; 2],
}

impl Rig {
    pub fn to_record(&self) -> RigRecord {
        RigRecord {
            cameras: self.cameras.iter().map(Camera::to_record).collect(),
            genericity_certificate: self.genericity_certificate,
            image_size: self.image_size,
        }
    }

    pub fn from_record(rec: &RigRecord) -> Result<Self, SceneError> {
        let cameras = rec
            .cameras
            .iter()
            .map(Camera::from_record)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Rig {
            cameras,
            genericity_certificate: rec.genericity_certificate,
            image_size: rec.image_size,
        })
    }
}

/// Minimum absolute 4×4 minor of the stacked camera transposes.
pub fn genericity_check(cameras: &[Camera]) -> f64 {
    let ps: Vec<_> = cameras.iter().map(|c| c.p).collect();
    genericity_certificate(&ps)
}

/// Rotation whose camera looks from `center` towards `target`, with image
/// `y` pointing down and a roll about the optical axis.
pub fn look_at(center: &Vec3<f64>, target: &Vec3<f64>, roll: f64) -> Result<Mat3<f64>, SceneError> {
    let d = sub3(target, center);
    let n = norm3(&d);
    let fwd = scale3(&d, 1.0 / n);
    let side = cross(&fwd, &[0.0, 0.0, 1.0]);
    let ns = norm3(&side);
    if !(n > 0.0 && ns > 1e-9) {
        return Err(SceneError::InvalidParameter("viewing direction parallel to up".into()));
    }
    let right = scale3(&side, 1.0 / ns);
    let down = cross(&fwd, &right);
    let r0 = [right, down, fwd];
    Ok(matmul3(&so3_exp(&[0.0, 0.0, roll]), &r0))
}

/// Ring geometry and intrinsic spread of a generated rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigOptions {
    /// Relative per-camera focal deviation from the rig's base focal length.
    pub focal_jitter: f64,
    /// Per-camera principal point deviation from the image centre (px).
    pub principal_jitter: f64,
    /// Camera distance from the origin, metres.
    pub radius: (f64, f64),
    /// Camera elevation above the ground plane, radians.
    pub elevation: (f64, f64),
    /// Half-width of the box around the origin each camera aims into.
    pub target_jitter: f64,
}

impl Default for RigOptions {
    fn default() -> Self {
        RigOptions {
            focal_jitter: 0.0,
            principal_jitter: 0.0,
            radius: (4.5, 6.0),
            elevation: (-0.15, 0.35),
            target_jitter: 0.2,
        }
    }
}

fn ring_rig(n: usize, rng: &mut ChaCha8Rng, opts: &RigOptions) -> Result<Vec<Camera>, SceneError> {
    let base_f = rng.random_range(FOCAL_RANGE.0..FOCAL_RANGE.1);
    let offset = rng.random_range(0.0..std::f64::consts::TAU);
    let spacing = std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|v| {
            let az = offset + spacing * v as f64 + rng.random_range(-0.25..0.25) * spacing;
            let el: f64 = rng.random_range(opts.elevation.0..opts.elevation.1);
            let radius = rng.random_range(opts.radius.0..opts.radius.1);
            let center = [radius * el.cos() * az.cos(), radius * el.cos() * az.sin(), radius * el.sin()];
            let tj = opts.target_jitter;
            let target = [0; 3].map(|_| rng.random_range(-tj..=tj));
            let roll = rng.random_range(-0.05..0.05);
            let r = look_at(&center, &target, roll)?;
            let t = scale3(&matvec3(&r, &center), -1.0);
            let f = (base_f * (1.0 + opts.focal_jitter * rng.random_range(-1.0..1.0)))
                .clamp(FOCAL_RANGE.0, FOCAL_RANGE.1);
            let pj = opts.principal_jitter;
            let cx = IMAGE_SIZE / 2.0 + pj * rng.random_range(-1.0..1.0);
            let cy = IMAGE_SIZE / 2.0 + pj * rng.random_range(-1.0..1.0);
            Ok(Camera::new(Intrinsics::new(f, f, cx, cy)?, Pose { r, t }))
        })
        .collect()
}

/// Cameras on a randomized ring around the origin, resampled until the
/// genericity certificate clears [`GENERICITY_THRESHOLD`].
pub fn random_generic_rig(n: usize, seed: u64) -> Result<Rig, SceneError> {
    random_generic_rig_with(n, seed, &RigOptions::default())
}

pub fn random_generic_rig_with(n: usize, seed: u64, opts: &RigOptions) -> Result<Rig, SceneError> {
    if !(2..=8).contains(&n) {
        return Err(SceneError::CameraCount(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..MAX_RESAMPLES {
        let cameras = ring_rig(n, &mut rng, opts)?;
        let cert = genericity_check(&cameras);
        if cert > GENERICITY_THRESHOLD {
            return Ok(Rig {
                cameras,
                genericity_certificate: cert,
                image_size: [IMAGE_SIZE, IMAGE_SIZE],
            });
        }
        best = best.max(cert);
    }
    Err(SceneError::GenerationFailed(MAX_RESAMPLES, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MotionStyle {
    Static,
    #[default]
    Sinusoidal,
}

impl std::str::FromStr for MotionStyle {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(MotionStyle::Static),
            "sinusoidal" => Ok(MotionStyle::Sinusoidal),
            other => Err(SceneError::InvalidParameter(format!("unknown motion style {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    /// `frames[t][j]` is the world position of joint `j` at frame `t`.
    pub frames: Vec<Vec<[f64; 3]>>,
    /// Parent of each joint; the root is its own parent.
    pub parents: Vec<usize>,
    pub seed: u64,
    pub style: MotionStyle,
}

impl MotionSequence {
    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    /// Largest deviation of any bone length from its first-frame value.
    pub fn bone_length_drift(&self) -> f64 {
        let len = |f: &Vec<[f64; 3]>, j: usize| norm3(&sub3(&f[j], &f[self.parents[j]]));
        let mut worst = 0.0f64;
        for f in &self.frames {
            for j in 1..self.joints() {
                worst = worst.max((len(f, j) - len(&self.frames[0], j)).abs());
            }
        }
        worst
    }
}

/// Seventeen-joint body: pelvis, right and left legs, spine to head, arms.
const BODY_PARENTS: [usize; 17] = [0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];
const BODY_OFFSETS: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],
    [0.0, -0.13, 0.0],
    [0.02, 0.0, -0.45],
    [-0.01, 0.0, -0.44],
    [0.0, 0.13, 0.0],
    [0.02, 0.0, -0.45],
    [-0.01, 0.0, -0.44],
    [0.0, 0.0, 0.23],
    [0.01, 0.0, 0.25],
    [0.02, 0.0, 0.11],
    [0.03, 0.0, 0.12],
    [0.0, 0.16, 0.02],
    [0.05, 0.02, -0.28],
    [0.08, 0.0, -0.25],
    [0.0, -0.16, 0.02],
    [0.05, -0.02, -0.28],
    [0.08, 0.0, -0.25],
];

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v: Vec3<f64> = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = norm3(&v);
        if n > 1e-6 {
            return scale3(&v, 1.0 / n);
        }
    }
}

struct JointDrive {
    axis: Vec3<f64>,
    amp: f64,
    freq: f64,
    phase: f64,
}

/// Forward kinematics of a kinematic chain driven by seeded joint-angle
/// sinusoids plus a smooth root trajectory.
pub fn synth_motion(joints: usize, frames: usize, seed: u64, style: MotionStyle) -> Result<MotionSequence, SceneError> {
    synth_motion_scaled(joints, frames, seed, style, 1.0)
}

/// [`synth_motion`] with time advanced by `time_scale` per frame; values
/// below one emulate a higher frame rate.
pub fn synth_motion_scaled(
    joints: usize,
    frames: usize,
    seed: u64,
    style: MotionStyle,
    time_scale: f64,
) -> Result<MotionSequence, SceneError> {
    if joints < 2 || frames < 1 {
        return Err(SceneError::InvalidParameter(format!(
            "need J ≥ 2 and T ≥ 1, got J={joints}, T={frames}"
        )));
    }
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(SceneError::InvalidParameter(format!("time scale must be positive, got {time_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (parents, offsets): (Vec<usize>, Vec<Vec3<f64>>) = if joints == BODY_PARENTS.len() {
        (BODY_PARENTS.to_vec(), BODY_OFFSETS.to_vec())
    } else {
        let mut p = vec![0];
        let mut o = vec![[0.0; 3]];
        for j in 1..joints {
            p.push(rng.random_range(0..j));
            let len = rng.random_range(0.15..0.45);
            o.push(scale3(&unit_vector(&mut rng), len));
        }
        (p, o)
    };
    let drives: Vec<JointDrive> = (0..joints)
        .map(|_| JointDrive {
            axis: unit_vector(&mut rng),
            amp: rng.random_range(0.1..0.5),
            freq: rng.random_range(0.05..0.2),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let yaw0 = rng.random_range(0.0..std::f64::consts::TAU);
    let path_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let still = style == MotionStyle::Static;
    let frames = (0..frames)
        .map(|t| {
            let t = if still { 0.0 } else { t as f64 * time_scale };
            let a = TRAJECTORY_RATE * t + path_phase;
            let root_pos = [TRAJECTORY_RADIUS * a.cos(), TRAJECTORY_RADIUS * a.sin(), 0.05 * (0.05 * t).sin()];
            let root_rot = so3_exp(&[0.0, 0.0, yaw0 + 0.01 * t]);
            let mut world_rot: Vec<Mat3<f64>> = Vec::with_capacity(joints);
            let mut pos: Vec<[f64; 3]> = Vec::with_capacity(joints);
            for j in 0..joints {
                let d = &drives[j];
                let local = if still {
                    so3_exp(&scale3(&d.axis, d.amp * d.phase.sin()))
                } else {
                    so3_exp(&scale3(&d.axis, d.amp * (d.freq * t + d.phase).sin()))
                };
                if j == 0 {
                    world_rot.push(matmul3(&root_rot, &local));
                    pos.push(root_pos);
                } else {
                    let p = parents[j];
                    pos.push(add3(&pos[p], &matvec3(&world_rot[p], &offsets[j])));
                    world_rot.push(matmul3(&world_rot[p], &local));
                }
            }
            pos
        })
        .collect();
    Ok(MotionSequence {
        frames,
        parents,
        seed,
        style,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub sigma_px: f64,
    pub outlier_rate: f64,
    pub outlier_px: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub uv: [f64; 2],
    pub confidence: f64,
    /// `[s_uu, s_uv, s_vv]`.
    pub cov: [f64; 3],
    #[serde(default)]
    pub outlier: bool,
    #[serde(default)]
    pub behind: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// `views[camera][frame][joint]`.
    pub views: Vec<Vec<Vec<Observation>>>,
    #[serde(default = "default_image_size")]
    pub image_size: [f64; 2],
    pub noise: NoiseMeta,
}

fn default_image_size() -> [f64; 2] {
    [IMAGE_SIZE, IMAGE_SIZE]
}

impl ObservationSet {
    pub fn cameras(&self) -> usize {
        self.views.len()
    }

    pub fn frames(&self) -> usize {
        self.views.first().map_or(0, Vec::len)
    }

    pub fn joints(&self) -> usize {
        self.views.first().and_then(|v| v.first()).map_or(0, Vec::len)
    }

    /// Homogeneous pixel tracks indexed `[camera][frame·J + joint]`, keeping
    /// observations with confidence at least `min_confidence`.
    pub fn correspondences(&self, min_confidence: f64) -> Correspondences {
        self.views
            .iter()
            .map(|view| {
                view.iter()
                    .flatten()
                    .map(|o| (o.confidence >= min_confidence && o.confidence > 0.0).then_some([o.uv[0], o.uv[1], 1.0]))
                    .collect()
            })
            .collect()
    }

    /// Confidences indexed like [`ObservationSet::correspondences`].
    pub fn confidences(&self) -> Vec<Vec<f64>> {
        self.views
            .iter()
            .map(|view| view.iter().flatten().map(|o| o.confidence).collect())
            .collect()
    }

    pub fn outlier_fraction(&self) -> f64 {
        let all: Vec<&Observation> = self.views.iter().flatten().flatten().collect();
        all.iter().filter(|o| o.outlier).count() as f64 / all.len().max(1) as f64
    }
}

/// Similarity taking pixels to centred coordinates in roughly `[-1, 1]`.
pub fn image_normalization(image_size: [f64; 2]) -> Mat3<f64> {
    let s = 2.0 / image_size[0].max(image_size[1]);
    [
        [s, 0.0, -s * image_size[0] / 2.0],
        [0.0, s, -s * image_size[1] / 2.0],
        [0.0, 0.0, 1.0],
    ]
}

/// Exact projections plus seeded isotropic noise; a fraction of detections
/// is displaced by `outlier_px` in a uniform direction.
pub fn observe(
    rig: &Rig,
    motion: &MotionSequence,
    sigma_px: f64,
    outlier_rate: f64,
    outlier_px: f64,
    seed: u64,
) -> Result<ObservationSet, SceneError> {
    if !(sigma_px >= 0.0) || !(0.0..=1.0).contains(&outlier_rate) || !(outlier_px >= 0.0) {
        return Err(SceneError::InvalidParameter(format!(
            "sigma {sigma_px}, outlier rate {outlier_rate}, outlier magnitude {outlier_px}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = sigma_px.max(MIN_SIGMA_PX).powi(2);
    let outlier_var = var + outlier_px * outlier_px;
    let mut views = Vec::with_capacity(rig.cameras.len());
    for cam in &rig.cameras {
        let mut per_frame = Vec::with_capacity(motion.frames.len());
        for frame in &motion.frames {
            let mut per_joint = Vec::with_capacity(frame.len());
            for x in frame {
                let n0: f64 = StandardNormal.sample(&mut rng);
                let n1: f64 = StandardNormal.sample(&mut rng);
                let is_outlier = rng.random::<f64>() < outlier_rate;
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let proj = project(cam, x);
                let (clean, depth) = match proj {
                    Ok(p) => (p.uv, p.depth),
                    Err(_) => ([0.0, 0.0], 0.0),
                };
                let behind = !(depth > 0.0);
                let mut o = if is_outlier {
                    Observation {
                        uv: [clean[0] + outlier_px * ang.cos(), clean[1] + outlier_px * ang.sin()],
                        confidence: OUTLIER_CONFIDENCE,
                        cov: [outlier_var, 0.0, outlier_var],
                        outlier: true,
                        behind,
                    }
                } else {
                    Observation {
                        uv: [clean[0] + sigma_px * n0, clean[1] + sigma_px * n1],
                        confidence: 1.0,
                        cov: [var, 0.0, var],
                        outlier: false,
                        behind,
                    }
                };
                if behind {
                    o.confidence = 0.0;
                }
                per_joint.push(o);
            }
            per_frame.push(per_joint);
        }
        views.push(per_frame);
    }
    Ok(ObservationSet {
        views,
        image_size: rig.image_size,
        noise: NoiseMeta {
            sigma_px,
            outlier_rate,
            outlier_px,
            seed,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSeeds {
    pub master: u64,
    pub rig: u64,
    pub motion: u64,
    pub observe: u64,
}

impl SceneSeeds {
    /// Independent streams derived from one master seed.
    pub fn derive(master: u64) -> Self {
        let mix = |k: u64| {
            let mut z = master.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        SceneSeeds {
            master,
            rig: mix(1),
            motion: mix(2),
            observe: mix(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub cameras: usize,
    pub joints: usize,
    pub frames: usize,
    pub sigma_px: f64,
    pub outlier_rate: f64,
    pub outlier_px: f64,
    pub style: MotionStyle,
    pub rig: RigOptions,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            cameras: 4,
            joints: 17,
            frames: 100,
            sigma_px: 0.0,
            outlier_rate: 0.0,
            outlier_px: 50.0,
            style: MotionStyle::Sinusoidal,
            rig: RigOptions::default(),
            seed: 0,
        }
    }
}

/// Interchange record: ground-truth rig and motion with their observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub rig: RigRecord,
    pub motion: MotionSequence,
    pub observations: ObservationSet,
    pub seeds: SceneSeeds,
}

impl SceneBundle {
    pub fn rig(&self) -> Result<Rig, SceneError> {
        Rig::from_record(&self.rig)
    }
}

pub fn synth_scene(cfg: &SceneConfig) -> Result<SceneBundle, SceneError> {
    let seeds = SceneSeeds::derive(cfg.seed);
    let rig = random_generic_rig_with(cfg.cameras, seeds.rig, &cfg.rig)?;
    let motion = synth_motion(cfg.joints, cfg.frames, seeds.motion, cfg.style)?;
    let observations = observe(&rig, &motion, cfg.sigma_px, cfg.outlier_rate, cfg.outlier_px, seeds.observe)?;
    Ok(SceneBundle {
        rig: rig.to_record(),
        motion,
        observations,
        seeds,
    })
}
