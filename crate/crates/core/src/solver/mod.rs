//! Uncalibrated camera recovery by minimizing multiview-ideal residuals over
//! explicit camera parameters, plus evaluation metrics and ablations.

pub mod ablation;
mod init;
pub mod metrics;
mod optimize;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{fundamental_between, gram_schmidt_6d, rotation_to_6d, Camera, CameraError, Intrinsics, Pose};
use crate::ideal::{
    gb2_loss_gram, gb3_loss_gram, gb4_loss_gram, BilinearGram, IdealError, QuadrilinearGram, Subsets, TrilinearGram,
};
use crate::numerics::small::{cross, det3, identity3, matmul3, matvec3, norm3, scale3, Mat3, Mat34};
use crate::numerics::{Scalar, Tape};
use crate::scenegen::{MotionSequence, ObservationSet, Rig, SceneBundle};
use crate::triangulate::{dlt_triangulate, refine_point, sampson, TriangulateError};

pub use ablation::{
    intrinsic_grid, loss_grid, run_ablation, AblationConfig, AblationRow, AblationSuite, AblationSummary, AblationTable,
    FAILURE_ERROR_DEG,
};
pub use metrics::{
    camera_errors, gauge_poses, l1_pose_loss, median, mpjpe, procrustes_align, rotation_geodesic_error,
    translation_angle_error, PoseMetrics, Similarity,
};
pub use optimize::{minimize, OptimizerConfig, Outcome};

pub const MAX_REINITIALIZATIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("need at least 2 cameras, got {0}")]
    TooFewCameras(usize),
    #[error("pair ({0}, {1}) shares {2} correspondences, need at least 8")]
    TooFewCorrespondences(usize, usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initialization degenerate after {attempts} attempts (certificate {certificate:e})")]
    DegenerateInit { attempts: usize, certificate: f64 },
    #[error("objective could not be evaluated at the initial point: {0}")]
    InitialEvaluation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("alignment needs at least three non-collinear points")]
    AlignmentDegenerate,
    #[error("translation direction undefined for a zero vector")]
    UndefinedDirection,
    #[error(transparent)]
    Ideal(#[from] IdealError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Triangulate(#[from] TriangulateError),
    #[error(transparent)]
    Numeric(#[from] crate::numerics::NumericError),
    #[error(transparent)]
    Scene(#[from] crate::scenegen::SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicMode {
    /// A learnable shared calibration plus a regularized per-camera update.
    #[default]
    SharedPlusDelta,
    SharedOnly,
    /// Calibration frozen at the prior mean.
    Fixed,
    /// Independent calibration per camera.
    Free,
}

impl IntrinsicMode {
    pub const ALL: [IntrinsicMode; 4] = [
        IntrinsicMode::SharedPlusDelta,
        IntrinsicMode::SharedOnly,
        IntrinsicMode::Fixed,
        IntrinsicMode::Free,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IntrinsicMode::SharedPlusDelta => "shared_plus_delta",
            IntrinsicMode::SharedOnly => "shared_only",
            IntrinsicMode::Fixed => "fixed",
            IntrinsicMode::Free => "free",
        }
    }
}

impl FromStr for IntrinsicMode {
    type Err = SolveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntrinsicMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SolveError::Config(format!("unknown intrinsic mode {s}")))
    }
}

/// Weight of each loss component; zero disables it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gb2: f64,
    pub gb3: f64,
    pub gb4: f64,
    pub sampson: f64,
    pub reprojection: f64,
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        gb2: 0.0,
        gb3: 0.0,
        gb4: 0.0,
        sampson: 0.0,
        reprojection: 0.0,
    };

    pub fn full_gc() -> Self {
        LossWeights {
            gb2: 1.0,
            gb3: 1.0,
            gb4: 1.0,
            ..Self::NONE
        }
    }

    /// Parses a comma-separated list such as `gb2,gb3,reproj`.
    pub fn parse(list: &str) -> Result<Self, SolveError> {
        let mut w = Self::NONE;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "gb2" => w.gb2 = 1.0,
                "gb3" => w.gb3 = 1.0,
                "gb4" => w.gb4 = 1.0,
                "sampson" => w.sampson = 1.0,
                "reproj" | "reprojection" => w.reprojection = 1.0,
                "gc" | "full" => {
                    w.gb2 = 1.0;
                    w.gb3 = 1.0;
                    w.gb4 = 1.0;
                }
                other => return Err(SolveError::Config(format!("unknown loss component {other}"))),
            }
        }
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let all = [self.gb2, self.gb3, self.gb4, self.sampson, self.reprojection];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SolveError::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(SolveError::Config("at least one loss component must be enabled".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reprojection: 1.0,
            ..Self::full_gc()
        }
    }
}

/// The anchor camera is frozen at the world origin with identity rotation;
/// the translation of `scale_ref` has unit length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gauge {
    pub anchor: usize,
    pub scale_ref: usize,
}

impl Default for Gauge {
    fn default() -> Self {
        Gauge { anchor: 0, scale_ref: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub loss: LossWeights,
    /// Per-order cap on sampled view subsets once there are more than five cameras.
    pub max_subsets: usize,
    pub intrinsics: IntrinsicMode,
    /// Weight of `‖ΔK‖²`, in pixels², in shared-plus-delta mode.
    pub delta_reg: f64,
    pub gb2_eps: f64,
    pub optimizer: OptimizerConfig,
    pub gauge: Gauge,
    pub min_confidence: f64,
    pub init_ransac_threshold_px: f64,
    pub init_ransac_iters: usize,
    /// Focal length of the calibration prior, in pixels.
    pub prior_focal_px: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            loss: LossWeights::default(),
            max_subsets: 20,
            intrinsics: IntrinsicMode::default(),
            delta_reg: 1e-2,
            gb2_eps: 0.0,
            optimizer: OptimizerConfig::default(),
            gauge: Gauge::default(),
            min_confidence: 0.0,
            init_ransac_threshold_px: 4.0,
            init_ransac_iters: 2000,
            prior_focal_px: 1000.0,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self, n: usize) -> Result<(), SolveError> {
        self.loss.validate()?;
        if !(self.optimizer.step > 0.0) || !(self.optimizer.clip > 0.0) {
            return Err(SolveError::Config("step and clip must be positive".into()));
        }
        let g = self.gauge;
        if g.anchor >= n || g.scale_ref >= n || g.anchor == g.scale_ref {
            return Err(SolveError::Config(format!("invalid gauge {g:?} for {n} cameras")));
        }
        if !(self.delta_reg >= 0.0) || !(self.prior_focal_px > 0.0) {
            return Err(SolveError::Config("delta_reg must be ≥ 0 and prior focal > 0".into()));
        }
        Ok(())
    }
}

/// Final value of each objective component (already weighted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub gb2: f64,
    pub gb3: f64,
    pub gb4: f64,
    pub sampson: f64,
    pub reprojection: f64,
    pub intrinsic_reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub pose: PoseMetrics,
    /// Mean per-joint error after similarity alignment, in millimetres
    /// (scene units are metres).
    pub mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub cameras: Vec<crate::camera::CameraRecord>,
    pub loss: LossTerms,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
    pub reinitializations: usize,
    pub init_certificate: f64,
    pub gauge: Gauge,
    pub config: SolveConfig,
    pub metrics: Option<SceneMetrics>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn recovered(&self) -> Result<Vec<Camera>, SolveError> {
        self.cameras
            .iter()
            .map(|r| Camera::from_record(r).map_err(SolveError::from))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Layout {
    rot: Vec<Option<usize>>,
    trans: Vec<Option<usize>>,
    k_base: Option<usize>,
    k_cam: Vec<Option<usize>>,
    len: usize,
}

impl Layout {
    fn new(n: usize, gauge: Gauge, mode: IntrinsicMode) -> Self {
        let mut off = 0;
        let mut take = |k: usize| {
            let o = off;
            off += k;
            o
        };
        let mut rot = Vec::with_capacity(n);
        let mut trans = Vec::with_capacity(n);
        for v in 0..n {
            if v == gauge.anchor {
                rot.push(None);
                trans.push(None);
            } else {
                rot.push(Some(take(6)));
                trans.push(Some(take(3)));
            }
        }
        let k_base = matches!(mode, IntrinsicMode::SharedPlusDelta | IntrinsicMode::SharedOnly).then(|| take(4));
        let k_cam = (0..n)
            .map(|_| matches!(mode, IntrinsicMode::SharedPlusDelta | IntrinsicMode::Free).then(|| take(4)))
            .collect();
        Layout {
            rot,
            trans,
            k_base,
            k_cam,
            len: off,
        }
    }
}

struct ReprojObs {
    cam: usize,
    m: [f64; 2],
    w: f64,
}

/// Everything the objective needs, with image coordinates normalized to
/// roughly `[-1, 1]`.
struct Problem {
    n: usize,
    mode: IntrinsicMode,
    gauge: Gauge,
    weights: LossWeights,
    delta_reg: f64,
    eps: f64,
    prior: Intrinsics,
    /// Pixel-to-working-coordinate map shared by all views.
    norm: Mat3<f64>,
    layout: Layout,
    pairs: Vec<([usize; 2], BilinearGram)>,
    triples: Vec<([usize; 3], TrilinearGram)>,
    quads: Vec<([usize; 4], QuadrilinearGram)>,
    sampson_sets: Vec<([usize; 2], Vec<([f64; 3], [f64; 3], f64)>)>,
    /// Observations of each point seen in two or more views.
    reproj: Vec<Vec<ReprojObs>>,
    /// Pixels per working-coordinate unit.
    px: f64,
}

/// Shared similarity for all views that centres the usable observations and
/// scales their mean distance from the centroid to √2.
fn data_normalization(obs: &ObservationSet, min_conf: f64) -> Mat3<f64> {
    let pts: Vec<[f64; 2]> = obs
        .views
        .iter()
        .flatten()
        .flatten()
        .filter(|o| o.confidence > 0.0 && o.confidence >= min_conf)
        .map(|o| o.uv)
        .collect();
    let fallback = crate::scenegen::image_normalization(obs.image_size);
    if pts.len() < 2 {
        return fallback;
    }
    let n = pts.len() as f64;
    let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    let spread = pts.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).sum::<f64>() / n;
    if !(spread > 1e-9) {
        return fallback;
    }
    let s = std::f64::consts::SQRT_2 / spread;
    [[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]]
}

fn common<const K: usize>(tracks: &[Vec<Option<([f64; 3], f64)>>], views: &[usize; K]) -> (Vec<[[f64; 3]; K]>, Vec<f64>) {
    let npts = tracks[0].len();
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for j in 0..npts {
        let mut row = [[0.0; 3]; K];
        let mut w = 1.0;
        let mut ok = true;
        for (slot, &v) in row.iter_mut().zip(views) {
            match tracks[v][j] {
                Some((m, c)) => {
                    *slot = m;
                    w *= c;
                }
                None => ok = false,
            }
        }
        if ok {
            pts.push(row);
            ws.push(w);
        }
    }
    let total: f64 = ws.iter().sum();
    if total > 0.0 {
        ws.iter_mut().for_each(|w| *w /= total);
    }
    (pts, ws)
}

impl Problem {
    fn new(obs: &ObservationSet, cfg: &SolveConfig) -> Result<Self, SolveError> {
        let n = obs.cameras();
        if n < 2 {
            return Err(SolveError::TooFewCameras(n));
        }
        cfg.validate(n)?;
        let norm = data_normalization(obs, cfg.min_confidence);
        let tracks: Vec<Vec<Option<([f64; 3], f64)>>> = obs
            .views
            .iter()
            .map(|view| {
                view.iter()
                    .flatten()
                    .map(|o| {
                        (o.confidence > 0.0 && o.confidence >= cfg.min_confidence)
                            .then(|| (matvec3(&norm, &[o.uv[0], o.uv[1], 1.0]), o.confidence))
                    })
                    .collect()
            })
            .collect();
        let npts = tracks[0].len();
        if tracks.iter().any(|t| t.len() != npts) {
            return Err(SolveError::Shape("cameras disagree on the number of points".into()));
        }
        let subsets = if n <= 5 {
            Subsets::all(n)
        } else {
            Subsets::sampled(n, cfg.max_subsets, cfg.seed)
        };
        let w = cfg.loss;
        let mut pairs = Vec::new();
        let mut sampson_sets = Vec::new();
        for p in &subsets.pairs {
            let (pts, ws) = common(&tracks, p);
            if pts.len() < 8 {
                return Err(SolveError::TooFewCorrespondences(p[0], p[1], pts.len()));
            }
            if w.gb2 > 0.0 {
                let pp: Vec<_> = pts.iter().map(|x| (x[0], x[1])).collect();
                pairs.push((*p, BilinearGram::new(&pp, Some(&ws))));
            }
            if w.sampson > 0.0 {
                sampson_sets.push((*p, pts.iter().zip(&ws).map(|(x, &w)| (x[0], x[1], w)).collect()));
            }
        }
        let mut triples = Vec::new();
        if w.gb3 > 0.0 {
            for t in &subsets.triples {
                let (pts, ws) = common(&tracks, t);
                if !pts.is_empty() {
                    triples.push((*t, TrilinearGram::new(&pts, Some(&ws))));
                }
            }
        }
        let mut quads = Vec::new();
        if w.gb4 > 0.0 {
            for q in &subsets.quads {
                let (pts, ws) = common(&tracks, q);
                if !pts.is_empty() {
                    quads.push((*q, QuadrilinearGram::new(&pts, Some(&ws))));
                }
            }
        }
        let mut reproj: Vec<Vec<ReprojObs>> = Vec::new();
        if w.reprojection > 0.0 {
            for j in 0..npts {
                let track: Vec<ReprojObs> = (0..n)
                    .filter_map(|v| {
                        tracks[v][j].map(|(m, c)| ReprojObs {
                            cam: v,
                            m: [m[0], m[1]],
                            w: c,
                        })
                    })
                    .collect();
                if track.len() >= 2 {
                    reproj.push(track);
                }
            }
            let total: f64 = reproj.iter().flatten().map(|r| r.w).sum();
            reproj.iter_mut().flatten().for_each(|r| r.w /= total);
        }
        let s = norm[0][0];
        let prior = Intrinsics::new(
            s * cfg.prior_focal_px,
            s * cfg.prior_focal_px,
            s * obs.image_size[0] / 2.0 + norm[0][2],
            s * obs.image_size[1] / 2.0 + norm[1][2],
        )?;
        Ok(Problem {
            n,
            mode: cfg.intrinsics,
            gauge: cfg.gauge,
            weights: w,
            delta_reg: cfg.delta_reg,
            eps: cfg.gb2_eps,
            prior,
            norm,
            layout: Layout::new(n, cfg.gauge, cfg.intrinsics),
            pairs,
            triples,
            quads,
            sampson_sets,
            reproj,
            px: 1.0 / s,
        })
    }

    fn intrinsics<S: Scalar>(&self, x: &[S], v: usize, like: S) -> Result<Intrinsics<S>, CameraError> {
        let l = &self.layout;
        let k4 = |o: usize| [x[o], x[o + 1], x[o + 2], x[o + 3]];
        match self.mode {
            IntrinsicMode::Fixed => Ok(self.prior.lift(like)),
            IntrinsicMode::SharedOnly => {
                let b = k4(l.k_base.unwrap());
                Intrinsics::new(b[0], b[1], b[2], b[3])
            }
            IntrinsicMode::SharedPlusDelta => {
                let b = k4(l.k_base.unwrap());
                let d = k4(l.k_cam[v].unwrap());
                Intrinsics::new(b[0] + d[0], b[1] + d[1], b[2] + d[2], b[3] + d[3])
            }
            IntrinsicMode::Free => {
                let b = k4(l.k_cam[v].unwrap());
                Intrinsics::new(b[0], b[1], b[2], b[3])
            }
        }
    }

    fn cameras<S: Scalar>(&self, x: &[S]) -> Result<Vec<Camera<S>>, SolveError> {
        let like = x[0].lift(0.0);
        (0..self.n)
            .map(|v| {
                let k = self.intrinsics(x, v, like)?;
                let pose = match (self.layout.rot[v], self.layout.trans[v]) {
                    (Some(ro), Some(to)) => {
                        let r6: [S; 6] = std::array::from_fn(|i| x[ro + i]);
                        let r = gram_schmidt_6d(&r6)?;
                        let mut t = [x[to], x[to + 1], x[to + 2]];
                        if v == self.gauge.scale_ref {
                            let n = norm3(&t);
                            if !(n.value() > 0.0) {
                                return Err(SolveError::UndefinedDirection);
                            }
                            t = scale3(&t, like.lift(1.0) / n);
                        }
                        Pose { r, t }
                    }
                    _ => Pose {
                        r: identity3(like),
                        t: [like; 3],
                    },
                };
                Ok(Camera::new(k, pose))
            })
            .collect()
    }

    fn objective<S: Scalar>(&self, x: &[S]) -> Result<(S, LossTerms), SolveError> {
        let cams = self.cameras(x)?;
        let like = x[0].lift(0.0);
        let mut parts: Vec<S> = Vec::new();
        let mut terms = LossTerms::default();
        let w = self.weights;
        if !self.pairs.is_empty() {
            let mut acc = Vec::with_capacity(self.pairs.len());
            for (p, g) in &self.pairs {
                let f = fundamental_between(&cams[p[0]], &cams[p[1]])?;
                acc.push(gb2_loss_gram(&f, g, self.eps)?);
            }
            let v = S::sum(&acc) * w.gb2;
            terms.gb2 = v.value();
            parts.push(v);
        }
        if !self.triples.is_empty() {
            let mut acc = Vec::with_capacity(self.triples.len());
            for (t, g) in &self.triples {
                acc.push(gb3_loss_gram(&t.map(|i| cams[i].p), g)?);
            }
            let v = S::sum(&acc) * w.gb3;
            terms.gb3 = v.value();
            parts.push(v);
        }
        if !self.quads.is_empty() {
            let mut acc = Vec::with_capacity(self.quads.len());
            for (q, g) in &self.quads {
                acc.push(gb4_loss_gram(&q.map(|i| cams[i].p), g)?);
            }
            let v = S::sum(&acc) * w.gb4;
            terms.gb4 = v.value();
            parts.push(v);
        }
        if !self.sampson_sets.is_empty() {
            let mut acc = Vec::new();
            for (p, pts) in &self.sampson_sets {
                let f = fundamental_between(&cams[p[0]], &cams[p[1]])?;
                for (a, b, wt) in pts {
                    acc.push(sampson(&f, a, b) * *wt);
                }
            }
            let v = S::sum(&acc) * w.sampson;
            terms.sampson = v.value();
            parts.push(v);
        }
        if !self.reproj.is_empty() {
            let pf: Vec<Mat34<f64>> = cams.iter().map(|c| c.p.map(|r| r.map(|v| v.value()))).collect();
            let mut acc = Vec::new();
            for track in &self.reproj {
                let x = optimal_point(&pf, track)?.map(|v| like.lift(v));
                for r in track {
                    let p = &cams[r.cam].p;
                    let h: [S; 3] = std::array::from_fn(|i| S::dot(&p[i][..3], &x) + p[i][3]);
                    if !(h[2].value().abs() > 1e-12) {
                        return Err(CameraError::DegenerateProjection(h[2].value()).into());
                    }
                    let du = (h[0] / h[2] - r.m[0]) * self.px;
                    let dv = (h[1] / h[2] - r.m[1]) * self.px;
                    acc.push((du * du + dv * dv) * r.w);
                }
            }
            let v = S::sum(&acc) * w.reprojection;
            terms.reprojection = v.value();
            parts.push(v);
        }
        if self.mode == IntrinsicMode::SharedPlusDelta && self.delta_reg > 0.0 {
            let ds: Vec<S> = self.layout.k_cam.iter().flatten().flat_map(|&o| (0..4).map(move |i| o + i)).map(|i| x[i]).collect();
            let v = S::sum_squares(&ds) * (self.delta_reg * self.px * self.px);
            terms.intrinsic_reg = v.value();
            parts.push(v);
        }
        let total = if parts.is_empty() { like } else { S::sum(&parts) };
        terms.total = total.value();
        Ok((total, terms))
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        self.objective(x).ok().map(|(v, _)| v).filter(|v| v.is_finite())
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vars = tape.vars(x);
        let (loss, _) = self.objective(&vars).ok()?;
        let g = tape.gradient(loss).collect(&vars);
        (loss.value().is_finite() && g.iter().all(|v| v.is_finite())).then(|| (loss.value(), g))
    }

    /// Parameter vector reproducing normalized-coordinate cameras `cams`.
    fn pack(&self, cams: &[Camera]) -> Result<Vec<f64>, SolveError> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len];
        let anchor = cams[self.gauge.anchor].pose;
        let rel: Vec<Pose> = cams.iter().map(|c| crate::camera::relative_pose(&anchor, &c.pose)).collect();
        let scale = norm3(&rel[self.gauge.scale_ref].t);
        if !(scale > 0.0) {
            return Err(SolveError::UndefinedDirection);
        }
        for v in 0..self.n {
            if let (Some(ro), Some(to)) = (l.rot[v], l.trans[v]) {
                x[ro..ro + 6].copy_from_slice(&rotation_to_6d(&rel[v].r));
                let t = scale3(&rel[v].t, 1.0 / scale);
                x[to..to + 3].copy_from_slice(&t);
            }
        }
        let k4 = |k: &Intrinsics| [k.fx, k.fy, k.cx, k.cy];
        let mean: [f64; 4] = std::array::from_fn(|i| cams.iter().map(|c| k4(&c.k)[i]).sum::<f64>() / self.n as f64);
        if let Some(o) = l.k_base {
            x[o..o + 4].copy_from_slice(&mean);
        }
        for v in 0..self.n {
            if let Some(o) = l.k_cam[v] {
                let kv = k4(&cams[v].k);
                let val: [f64; 4] = match self.mode {
                    IntrinsicMode::SharedPlusDelta => std::array::from_fn(|i| kv[i] - mean[i]),
                    _ => kv,
                };
                x[o..o + 4].copy_from_slice(&val);
            }
        }
        Ok(x)
    }
}

/// Least-squares point from the DLT rows with the homogeneous coordinate
/// fixed to one; `None` when the normal equations are singular.
fn linear_point(ps: &[Mat34<f64>], obs: &[[f64; 3]], ws: &[f64]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for ((p, m), &w) in ps.iter().zip(obs).zip(ws) {
        for k in 0..2 {
            let row: [f64; 4] = std::array::from_fn(|c| m[k] * p[2][c] - m[2] * p[k][c]);
            let n2: f64 = row.iter().map(|x| x * x).sum();
            if !(n2 > 0.0) {
                return None;
            }
            let s = w * w / n2;
            for i in 0..3 {
                b[i] -= s * row[i] * row[3];
                for j in 0..3 {
                    a[i][j] += s * row[i] * row[j];
                }
            }
        }
    }
    let d = det3(&a);
    let scale = a[0][0] * a[1][1] * a[2][2];
    if !(d.abs() > 1e-12 * scale.abs()) {
        return None;
    }
    let cols = [cross(&a[1], &a[2]), cross(&a[2], &a[0]), cross(&a[0], &a[1])];
    Some(std::array::from_fn(|i| (cols[0][i] * b[0] + cols[1][i] * b[1] + cols[2][i] * b[2]) / d))
}

/// Reprojection-optimal point of one track under fixed cameras. The
/// objective's gradient treats it as a constant, which is exact at the
/// optimum.
fn optimal_point(ps: &[Mat34<f64>], track: &[ReprojObs]) -> Result<[f64; 3], SolveError> {
    let ps: Vec<Mat34<f64>> = track.iter().map(|r| ps[r.cam]).collect();
    let hom: Vec<[f64; 3]> = track.iter().map(|r| [r.m[0], r.m[1], 1.0]).collect();
    let ws: Vec<f64> = track.iter().map(|r| r.w).collect();
    let start = match linear_point(&ps, &hom, &ws) {
        Some(x) => x,
        None => dlt_triangulate(&ps, &hom, &ws)?.point,
    };
    let ms: Vec<[f64; 2]> = track.iter().map(|r| r.m).collect();
    Ok(refine_point(&ps, &ms, &ws, start)?)
}

/// Pixel-unit camera from a normalized-coordinate one.
fn to_pixels(c: &Camera, norm: &Mat3<f64>) -> Result<Camera, SolveError> {
    let s = norm[0][0];
    let k = Intrinsics::new(c.k.fx / s, c.k.fy / s, (c.k.cx - norm[0][2]) / s, (c.k.cy - norm[1][2]) / s)?;
    Ok(Camera::new(k, c.pose))
}

fn to_normalized(c: &Camera, norm: &Mat3<f64>) -> Result<Camera, SolveError> {
    let k = matmul3(norm, &c.k.matrix());
    Ok(Camera::new(Intrinsics::new(k[0][0], k[1][1], k[0][2], k[1][2])?, c.pose))
}

fn run(problem: &Problem, x0: Vec<f64>, cfg: &SolveConfig) -> Result<Outcome, SolveError> {
    if problem.value_and_gradient(&x0).is_none() {
        let why = match problem.objective(&x0) {
            Err(e) => e.to_string(),
            Ok(_) => "non-finite objective or gradient".into(),
        };
        return Err(SolveError::InitialEvaluation(why));
    }
    minimize(x0, |x| problem.value_and_gradient(x), |x| problem.value(x), &cfg.optimizer)
        .ok_or_else(|| SolveError::InitialEvaluation("objective failed".into()))
}

/// Cameras-only problem used to warm-start the point parameters, when the
/// objective mixes reprojection with a camera-only term.
/// Relative-change tolerance of the warm-start stage.
const WARM_START_REL_TOL: f64 = 1e-8;

fn warm_start_problem(obs: &ObservationSet, cfg: &SolveConfig) -> Result<Option<Problem>, SolveError> {
    let w = cfg.loss;
    if !(w.reprojection > 0.0) || !(w.gb2 + w.gb3 + w.gb4 + w.sampson > 0.0) {
        return Ok(None);
    }
    let cfg = SolveConfig {
        loss: LossWeights { reprojection: 0.0, ..w },
        ..cfg.clone()
    };
    Problem::new(obs, &cfg).map(Some)
}

/// Minimizes from normalized cameras, first over the warm-start problem
/// when there is one, then over the full objective with re-triangulated
/// points. The returned trace is that of the full objective.
fn run_staged(problem: &Problem, warm: Option<&Problem>, ncams: &[Camera], cfg: &SolveConfig) -> Result<Outcome, SolveError> {
    let Some(pre) = warm else {
        return run(problem, problem.pack(ncams)?, cfg);
    };
    let coarse = SolveConfig {
        optimizer: OptimizerConfig {
            rel_tol: cfg.optimizer.rel_tol.max(WARM_START_REL_TOL),
            ..cfg.optimizer
        },
        ..cfg.clone()
    };
    let first = run(pre, pre.pack(ncams)?, &coarse)?;
    let mid = pre.cameras(&first.x)?;
    let mut out = run(problem, problem.pack(&mid)?, cfg)?;
    out.iterations += first.iterations;
    Ok(out)
}

fn finish(
    problem: &Problem,
    out: Outcome,
    cfg: &SolveConfig,
    reinit: usize,
    cert: f64,
    start: Instant,
) -> Result<SolveReport, SolveError> {
    let norm = problem.norm;
    let cams = problem.cameras(&out.x)?;
    let (_, loss) = problem.objective(&out.x)?;
    let cameras = cams
        .iter()
        .map(|c| to_pixels(c, &norm).map(|c| c.to_record()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SolveReport {
        cameras,
        loss,
        trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        stop_reason: out.stop_reason.to_string(),
        reinitializations: reinit,
        init_certificate: cert,
        gauge: cfg.gauge,
        config: cfg.clone(),
        metrics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Recovers every camera from 2D observations alone.
pub fn recover_cameras(obs: &ObservationSet, cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let problem = Problem::new(obs, cfg)?;
    let warm = warm_start_problem(obs, cfg)?;
    let norm = problem.norm;
    let mut best_cert = 0.0f64;
    for attempt in 0..=MAX_REINITIALIZATIONS {
        let cams = init::initial_cameras(obs, &problem, cfg, attempt)?;
        let ncams: Vec<Camera> = cams.iter().map(|c| to_normalized(c, &norm)).collect::<Result<_, _>>()?;
        let cert = crate::scenegen::genericity_check(&ncams);
        best_cert = best_cert.max(cert);
        if !(cert > crate::scenegen::GENERICITY_THRESHOLD) {
            continue;
        }
        let out = match run_staged(&problem, warm.as_ref(), &ncams, cfg) {
            Ok(o) => o,
            Err(_) if attempt < MAX_REINITIALIZATIONS => continue,
            Err(e) => return Err(e),
        };
        return finish(&problem, out, cfg, attempt, cert, start);
    }
    Err(SolveError::DegenerateInit {
        attempts: MAX_REINITIALIZATIONS + 1,
        certificate: best_cert,
    })
}

/// [`recover_cameras`] started from the given pixel-unit cameras.
pub fn recover_cameras_from(obs: &ObservationSet, cfg: &SolveConfig, start_cams: &[Camera]) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let problem = Problem::new(obs, cfg)?;
    if start_cams.len() != problem.n {
        return Err(SolveError::Shape(format!("{} cameras for {} views", start_cams.len(), problem.n)));
    }
    let norm = problem.norm;
    let ncams: Vec<Camera> = start_cams.iter().map(|c| to_normalized(c, &norm)).collect::<Result<_, _>>()?;
    let cert = crate::scenegen::genericity_check(&ncams);
    let warm = warm_start_problem(obs, cfg)?;
    let out = run_staged(&problem, warm.as_ref(), &ncams, cfg)?;
    finish(&problem, out, cfg, 0, cert, start)
}

/// Points triangulated from `cams` for every frame and joint seen in two or
/// more views, as `(frame, joint, point)`.
pub fn triangulate_sequence(cams: &[Camera], obs: &ObservationSet) -> Vec<(usize, usize, [f64; 3])> {
    let mut out = Vec::new();
    for t in 0..obs.frames() {
        for j in 0..obs.joints() {
            let mut ps = Vec::new();
            let mut ms = Vec::new();
            let mut ws = Vec::new();
            for (v, view) in obs.views.iter().enumerate() {
                let o = &view[t][j];
                if o.confidence > 0.0 {
                    ps.push(cams[v].p);
                    ms.push([o.uv[0], o.uv[1], 1.0]);
                    ws.push(o.confidence);
                }
            }
            if let Ok(tr) = dlt_triangulate(&ps, &ms, &ws) {
                out.push((t, j, tr.point));
            }
        }
    }
    out
}

/// Pose errors and aligned MPJPE of a report against ground truth.
pub fn evaluate(report: &SolveReport, rig: &Rig, motion: &MotionSequence, obs: &ObservationSet) -> Result<SceneMetrics, SolveError> {
    let cams = report.recovered()?;
    let pose = camera_errors(&cams, &rig.cameras, report.gauge.anchor, report.gauge.scale_ref)?;
    let tri = triangulate_sequence(&cams, obs);
    let pred: Vec<[f64; 3]> = tri.iter().map(|e| e.2).collect();
    let gt: Vec<[f64; 3]> = tri.iter().map(|&(t, j, _)| motion.frames[t][j]).collect();
    let (_, aligned) = procrustes_align(&pred, &gt)?;
    let err = mpjpe(&[aligned], &[gt])?;
    Ok(SceneMetrics {
        pose,
        mpjpe_mm: 1000.0 * err,
    })
}

/// Solve a scene bundle and attach ground-truth metrics.
pub fn solve_scene(bundle: &SceneBundle, cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
    let mut report = recover_cameras(&bundle.observations, cfg)?;
    let rig = bundle.rig()?;
    report.metrics = Some(evaluate(&report, &rig, &bundle.motion, &bundle.observations)?);
    Ok(report)
}
