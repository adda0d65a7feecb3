//! Temporal equivariant rectifier: a recurrent filter over normalized 3D pose
//! sequences with a rigid rotation head and a non-rigid residual head, plus
//! its label-free training objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::so3_exp;
use crate::numerics::small::{Mat3, Vec3};
use crate::numerics::{Scalar, Tape};

/// Poses whose mean pairwise joint distance is at or below this are rejected.
pub const MIN_POSE_SCALE: f64 = 1e-9;
/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.08;
pub const DEFAULT_HIDDEN: usize = 64;
/// Training stops with an error once the loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerError {
    #[error("degenerate pose: mean pairwise joint distance {0:e}")]
    DegeneratePose(f64),
    #[error("need at least 2 joints, got {0}")]
    TooFewJoints(usize),
    #[error("sequence has {got} frames, need at least {need}")]
    InsufficientLength { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A pose with its centroid removed and its mean pairwise joint distance
/// scaled to one. `y` is joint-major: `[x₁, y₁, z₁, x₂, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose {
    pub y: Vec<f64>,
    pub c: Vec3<f64>,
    pub s: f64,
}

impl NormalizedPose {
    pub fn joints(&self) -> usize {
        self.y.len() / 3
    }

    pub fn denormalize(&self) -> Vec<Vec3<f64>> {
        denormalize(&self.y, &self.c, self.s)
    }
}

pub fn denormalize(y: &[f64], c: &Vec3<f64>, s: f64) -> Vec<Vec3<f64>> {
    y.chunks(3).map(|p| std::array::from_fn(|i| s * p[i] + c[i])).collect()
}

pub fn mean_pairwise_distance(m: &[Vec3<f64>]) -> f64 {
    let j = m.len();
    let mut total = 0.0;
    for a in 0..j {
        for b in a + 1..j {
            total += (0..3).map(|i| (m[a][i] - m[b][i]).powi(2)).sum::<f64>().sqrt();
        }
    }
    total / (j * (j - 1) / 2) as f64
}

pub fn normalize_pose(m: &[Vec3<f64>]) -> Result<NormalizedPose, TerError> {
    if m.len() < 2 {
        return Err(TerError::TooFewJoints(m.len()));
    }
    let n = m.len() as f64;
    let c: Vec3<f64> = std::array::from_fn(|i| m.iter().map(|p| p[i]).sum::<f64>() / n);
    let s = mean_pairwise_distance(m);
    if !(s > MIN_POSE_SCALE) {
        return Err(TerError::DegeneratePose(s));
    }
    let y = m.iter().flat_map(|p| (0..3).map(move |i| (p[i] - c[i]) / s)).collect();
    Ok(NormalizedPose { y, c, s })
}

/// `[ȳ_t; ȳ_t − ȳ_{t−1}; ȳ_t − 2ȳ_{t−1} + ȳ_{t−2}]`.
pub fn dynamic_features(y0: &[f64], y1: &[f64], y2: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * y0.len());
    x.extend_from_slice(y0);
    x.extend(y0.iter().zip(y1).map(|(a, b)| a - b));
    x.extend(y0.iter().zip(y1).zip(y2).map(|((a, b), c)| a - 2.0 * b + c));
    x
}

const NAMES: [&str; 14] = [
    "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "Q_z", "Q_r", "b_z", "b_r", "b_h", "G", "W_Omega", "W_Y",
];
const WZ: usize = 0;
const WR: usize = 1;
const WH: usize = 2;
const UZ: usize = 3;
const UR: usize = 4;
const UH: usize = 5;
const QZ: usize = 6;
const QR: usize = 7;
const BZ: usize = 8;
const BR: usize = 9;
const BH: usize = 10;
const G: usize = 11;
const WO: usize = 12;
const WY: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    j: usize,
    d: usize,
    shape: [(usize, usize); 14],
    off: [usize; 15],
}

impl Layout {
    fn new(j: usize, d: usize) -> Self {
        let shape = [
            (d, 9 * j),
            (d, 9 * j),
            (d, 9 * j),
            (d, d),
            (d, d),
            (d, d),
            (d, 3 * j),
            (d, 3 * j),
            (d, 1),
            (d, 1),
            (d, 1),
            (3 * j, d),
            (3, d),
            (3 * j, d),
        ];
        let mut off = [0; 15];
        for k in 0..14 {
            off[k + 1] = off[k] + shape[k].0 * shape[k].1;
        }
        Layout { j, d, shape, off }
    }

    fn len(&self) -> usize {
        self.off[14]
    }

    fn block<'a, S>(&self, p: &'a [S], k: usize) -> &'a [S] {
        &p[self.off[k]..self.off[k + 1]]
    }
}

/// All rectifier weights in one flat vector, blocks in a fixed order and
/// matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TerParams {
    layout: Layout,
    theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightArray {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerCheckpoint {
    pub joints: usize,
    pub hidden: usize,
    pub weights: BTreeMap<String, WeightArray>,
}

impl TerParams {
    pub fn zeros(joints: usize, hidden: usize) -> Result<Self, TerError> {
        if joints < 2 {
            return Err(TerError::TooFewJoints(joints));
        }
        if hidden == 0 {
            return Err(TerError::Config("hidden size must be positive".into()));
        }
        let layout = Layout::new(joints, hidden);
        Ok(TerParams {
            theta: vec![0.0; layout.len()],
            layout,
        })
    }

    /// Uniform in `[−INIT_SCALE, INIT_SCALE]`.
    pub fn random(joints: usize, hidden: usize, seed: u64) -> Result<Self, TerError> {
        let mut p = Self::zeros(joints, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.theta.iter_mut().for_each(|v| *v = rng.random_range(-INIT_SCALE..=INIT_SCALE));
        Ok(p)
    }

    pub fn from_flat(joints: usize, hidden: usize, theta: Vec<f64>) -> Result<Self, TerError> {
        let mut p = Self::zeros(joints, hidden)?;
        if theta.len() != p.theta.len() {
            return Err(TerError::Shape(format!(
                "expected {} parameters, got {}",
                p.theta.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(TerError::Shape("non-finite parameter".into()));
        }
        p.theta = theta;
        Ok(p)
    }

    pub fn joints(&self) -> usize {
        self.layout.j
    }

    pub fn hidden(&self) -> usize {
        self.layout.d
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// Named block as a flat row-major slice, with its `(rows, cols)`.
    pub fn block(&self, name: &str) -> Option<(&[f64], (usize, usize))> {
        let k = NAMES.iter().position(|n| *n == name)?;
        Some((self.layout.block(&self.theta, k), self.layout.shape[k]))
    }

    pub fn to_checkpoint(&self) -> TerCheckpoint {
        let weights = NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let (rows, cols) = self.layout.shape[k];
                let b = self.layout.block(&self.theta, k);
                let w = if cols == 1 {
                    WeightArray::Vector(b.to_vec())
                } else {
                    WeightArray::Matrix(b.chunks(cols).map(|r| r.to_vec()).collect())
                };
                debug_assert_eq!(b.len(), rows * cols);
                (name.to_string(), w)
            })
            .collect();
        TerCheckpoint {
            joints: self.layout.j,
            hidden: self.layout.d,
            weights,
        }
    }

    pub fn from_checkpoint(ck: &TerCheckpoint) -> Result<Self, TerError> {
        let mut p = Self::zeros(ck.joints, ck.hidden).map_err(|e| TerError::Checkpoint(e.to_string()))?;
        if let Some(extra) = ck.weights.keys().find(|k| !NAMES.contains(&k.as_str())) {
            return Err(TerError::Checkpoint(format!("unknown weight {extra}")));
        }
        for (k, name) in NAMES.iter().enumerate() {
            let (rows, cols) = p.layout.shape[k];
            let w = ck
                .weights
                .get(*name)
                .ok_or_else(|| TerError::Checkpoint(format!("missing weight {name}")))?;
            let flat: Vec<f64> = match w {
                WeightArray::Vector(v) if cols == 1 && v.len() == rows => v.clone(),
                WeightArray::Matrix(m) if m.len() == rows && m.iter().all(|r| r.len() == cols) => m.concat(),
                _ => {
                    return Err(TerError::Checkpoint(format!(
                        "weight {name} must have shape {rows}x{cols}"
                    )))
                }
            };
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(TerError::Checkpoint(format!("weight {name} has non-finite entries")));
            }
            p.theta[p.layout.off[k]..p.layout.off[k + 1]].copy_from_slice(&flat);
        }
        Ok(p)
    }
}

fn mv_data<S: Scalar>(w: &[S], cols: usize, x: &[f64]) -> Vec<S> {
    w.chunks(cols).map(|row| S::lincomb(x, row)).collect()
}

fn mv<S: Scalar>(w: &[S], cols: usize, x: &[S]) -> Vec<S> {
    w.chunks(cols).map(|row| S::dot(row, x)).collect()
}

fn gru<S: Scalar>(lay: &Layout, p: &[S], h: &[S], x: &[f64], delta: &[S]) -> Vec<S> {
    let d = lay.d;
    let nx = 9 * lay.j;
    let nd = 3 * lay.j;
    let gate = |w: usize, u: usize, q: usize, b: usize| -> Vec<S> {
        let wx = mv_data(lay.block(p, w), nx, x);
        let uh = mv(lay.block(p, u), d, h);
        let qd = mv(lay.block(p, q), nd, delta);
        let bias = lay.block(p, b);
        (0..d).map(|i| (wx[i] + uh[i] + qd[i] + bias[i]).sigmoid()).collect()
    };
    let z = gate(WZ, UZ, QZ, BZ);
    let r = gate(WR, UR, QR, BR);
    let rh: Vec<S> = r.iter().zip(h).map(|(&a, &b)| a * b).collect();
    let wx = mv_data(lay.block(p, WH), nx, x);
    let uh = mv(lay.block(p, UH), d, &rh);
    let bias = lay.block(p, BH);
    (0..d)
        .map(|i| {
            let cand = (wx[i] + uh[i] + bias[i]).tanh();
            h[i] + z[i] * (cand - h[i])
        })
        .collect()
}

/// Rotation of the rigid head for hidden state `h`.
fn rigid<S: Scalar>(lay: &Layout, p: &[S], h: &[S]) -> Mat3<S> {
    let w = mv(lay.block(p, WO), lay.d, h);
    so3_exp(&[w[0], w[1], w[2]])
}

fn head<S: Scalar>(lay: &Layout, p: &[S], h: &[S], y: &[f64]) -> Vec<S> {
    let r = rigid(lay, p, h);
    let res = mv(lay.block(p, WY), lay.d, h);
    let mut out = Vec::with_capacity(y.len());
    for (j, pj) in y.chunks(3).enumerate() {
        for i in 0..3 {
            out.push(S::lincomb(pj, &r[i]) + res[3 * j + i]);
        }
    }
    out
}

/// Previous two observations with the first one replicated as padding.
fn padded<'a>(history: &'a [Vec<f64>], current: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    match history {
        [] => (current, current),
        [a] => (a, a),
        [.., a, b] => (b, a),
    }
}

/// Normalized rectified outputs `ŷ̄_t` for a whole sequence, starting from
/// `h₀ = 0`.
fn run<S: Scalar>(lay: &Layout, p: &[S], seq: &[NormalizedPose]) -> Vec<Vec<S>> {
    let zero = p[0].lift(0.0);
    let mut h = vec![zero; lay.d];
    let mut out = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let y = &seq[t].y;
        let hist: Vec<Vec<f64>> = seq[t.saturating_sub(2)..t].iter().map(|n| n.y.clone()).collect();
        let (y1, y2) = padded(&hist, y);
        let x = dynamic_features(y, y1, y2);
        let prior = mv(lay.block(p, G), lay.d, &h);
        let delta: Vec<S> = prior.iter().zip(y).map(|(&g, &v)| -g + v).collect();
        h = gru(lay, p, &h, &x, &delta);
        out.push(head(lay, p, &h, y));
    }
    out
}

fn frame_diffs<S: Scalar>(xs: &[Vec<S>], order: usize) -> Vec<S> {
    let coefs: &[f64] = match order {
        1 => &[1.0, -1.0],
        _ => &[1.0, -3.0, 3.0, -1.0],
    };
    let k = coefs.len();
    let mut out = Vec::new();
    for t in k - 1..xs.len() {
        for i in 0..xs[t].len() {
            let terms: Vec<S> = (0..k).map(|m| xs[t - m][i]).collect();
            out.push(S::lincomb(coefs, &terms));
        }
    }
    out
}

/// `1/(T−1) Σ ‖ŷ̄_t − ŷ̄_{t−1}‖²`.
pub fn vel_loss<S: Scalar>(yhat: &[Vec<S>]) -> Result<S, TerError> {
    if yhat.len() < 2 {
        return Err(TerError::InsufficientLength { need: 2, got: yhat.len() });
    }
    Ok(S::sum_squares(&frame_diffs(yhat, 1)) / (yhat.len() - 1) as f64)
}

/// `1/(T−3) Σ ‖ŷ̄_t − 3ŷ̄_{t−1} + 3ŷ̄_{t−2} − ŷ̄_{t−3}‖²`.
pub fn jerk_loss<S: Scalar>(yhat: &[Vec<S>]) -> Result<S, TerError> {
    if yhat.len() < 4 {
        return Err(TerError::InsufficientLength { need: 4, got: yhat.len() });
    }
    Ok(S::sum_squares(&frame_diffs(yhat, 3)) / (yhat.len() - 3) as f64)
}

/// Mutable per-sequence state for online rectification.
#[derive(Debug, Clone, PartialEq)]
pub struct TerState {
    pub h: Vec<f64>,
    pub history: Vec<Vec<f64>>,
}

impl TerState {
    pub fn new(params: &TerParams) -> Self {
        TerState {
            h: vec![0.0; params.hidden()],
            history: Vec::new(),
        }
    }
}

fn check_joints(params: &TerParams, j: usize) -> Result<(), TerError> {
    if j != params.joints() {
        return Err(TerError::Shape(format!(
            "pose has {j} joints, parameters expect {}",
            params.joints()
        )));
    }
    Ok(())
}

/// One recurrent update `h_{t−1} → h_t` for dynamic features `x` and
/// innovation `delta`.
pub fn gru_step(params: &TerParams, h: &[f64], x: &[f64], delta: &[f64]) -> Result<Vec<f64>, TerError> {
    gru_step_with(params.joints(), params.hidden(), params.as_slice(), h, x, delta)
}

/// [`gru_step`] over an arbitrary scalar type, for differentiating the
/// hidden state with respect to the flat parameter vector.
pub fn gru_step_with<S: Scalar>(
    joints: usize,
    hidden: usize,
    theta: &[S],
    h: &[S],
    x: &[f64],
    delta: &[S],
) -> Result<Vec<S>, TerError> {
    let lay = Layout::new(joints, hidden);
    if theta.len() != lay.len() || h.len() != hidden || x.len() != 9 * joints || delta.len() != 3 * joints {
        return Err(TerError::Shape(format!(
            "gru step with J={joints}, d_h={hidden}: got {} params, |h|={}, |x|={}, |δ|={}",
            theta.len(),
            h.len(),
            x.len(),
            delta.len()
        )));
    }
    Ok(gru(&lay, theta, h, x, delta))
}

/// Rectifies one frame and advances `state`.
pub fn rectify_frame(params: &TerParams, state: &mut TerState, m: &[Vec3<f64>]) -> Result<Vec<Vec3<f64>>, TerError> {
    check_joints(params, m.len())?;
    if state.h.len() != params.hidden() || state.history.len() > 2 {
        return Err(TerError::Shape("state does not match parameters".into()));
    }
    let lay = &params.layout;
    let p = params.as_slice();
    let n = normalize_pose(m)?;
    let (y1, y2) = padded(&state.history, &n.y);
    let x = dynamic_features(&n.y, y1, y2);
    let prior = mv(lay.block(p, G), lay.d, &state.h);
    let delta: Vec<f64> = n.y.iter().zip(&prior).map(|(v, g)| v - g).collect();
    let h = gru(lay, p, &state.h, &x, &delta);
    let yhat = head(lay, p, &h, &n.y);
    state.h = h;
    state.history.push(n.y.clone());
    if state.history.len() > 2 {
        state.history.remove(0);
    }
    Ok(denormalize(&yhat, &n.c, n.s))
}

/// Rigid rotation produced by the rigid head for hidden state `h`.
pub fn rigid_rotation(params: &TerParams, h: &[f64]) -> Result<Mat3<f64>, TerError> {
    if h.len() != params.hidden() {
        return Err(TerError::Shape(format!("hidden state of length {}", h.len())));
    }
    Ok(rigid(&params.layout, params.as_slice(), h))
}

pub fn normalize_sequence(seq: &[Vec<Vec3<f64>>]) -> Result<Vec<NormalizedPose>, TerError> {
    seq.iter().map(|m| normalize_pose(m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub poses: Vec<Vec<Vec3<f64>>>,
    /// Normalized outputs `ŷ̄_t`.
    pub normalized: Vec<Vec<f64>>,
}

pub fn rectify_sequence(params: &TerParams, seq: &[Vec<Vec3<f64>>]) -> Result<Rectified, TerError> {
    for m in seq {
        check_joints(params, m.len())?;
    }
    let norm = normalize_sequence(seq)?;
    let normalized = run(&params.layout, params.as_slice(), &norm);
    let poses = normalized.iter().zip(&norm).map(|(y, n)| denormalize(y, &n.c, n.s)).collect();
    Ok(Rectified { poses, normalized })
}

fn apply_rigid(seq: &[Vec<Vec3<f64>>], r: &Mat3<f64>, t: &Vec3<f64>) -> Vec<Vec<Vec3<f64>>> {
    seq.iter()
        .map(|m| {
            m.iter()
                .map(|p| std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]))
                .collect()
        })
        .collect()
}

fn equiv_terms<S: Scalar>(
    lay: &Layout,
    p: &[S],
    base: &[NormalizedPose],
    out: &[Vec<S>],
    moved: &[NormalizedPose],
    r: &Mat3<f64>,
    t: &Vec3<f64>,
) -> S {
    let out_moved = run(lay, p, moved);
    let mut diffs = Vec::with_capacity(base.len() * 3 * lay.j);
    for ((a, na), (b, nb)) in out.iter().zip(base).zip(out_moved.iter().zip(moved)) {
        for (pa, pb) in a.chunks(3).zip(b.chunks(3)) {
            let ma: [S; 3] = std::array::from_fn(|i| pa[i] * na.s + na.c[i]);
            for i in 0..3 {
                let target = S::lincomb(&r[i], &ma) + t[i];
                diffs.push(pb[i] * nb.s + nb.c[i] - target);
            }
        }
    }
    S::sum_squares(&diffs) / base.len() as f64
}

/// Mean over frames of `‖rectify(R M_t + t) − (R rectify(M_t) + t)‖²`.
pub fn equiv_loss(params: &TerParams, seq: &[Vec<Vec3<f64>>], r: &Mat3<f64>, t: &Vec3<f64>) -> Result<f64, TerError> {
    if seq.is_empty() {
        return Err(TerError::InsufficientLength { need: 1, got: 0 });
    }
    for m in seq {
        check_joints(params, m.len())?;
    }
    let base = normalize_sequence(seq)?;
    let moved = normalize_sequence(&apply_rigid(seq, r, t))?;
    let lay = &params.layout;
    let p = params.as_slice();
    let out = run(lay, p, &base);
    Ok(equiv_terms(lay, p, &base, &out, &moved, r, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerWeights {
    pub vel: f64,
    pub jerk: f64,
    pub equiv: f64,
}

impl Default for TerWeights {
    fn default() -> Self {
        TerWeights {
            vel: 1.0,
            jerk: 0.5,
            equiv: 1.0,
        }
    }
}

impl TerWeights {
    fn validate(&self) -> Result<(), TerError> {
        if [self.vel, self.jerk, self.equiv].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TerError::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerLoss {
    pub vel: f64,
    pub jerk: f64,
    pub equiv: f64,
    pub total: f64,
}

/// The random rigid motion used by the equivariance term: axis uniform on the
/// sphere, angle uniform in `[0, π]`, translation uniform in `[−1, 1]³`.
pub fn sample_rigid(seed: u64) -> (Mat3<f64>, Vec3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis: Vec3<f64> = loop {
        let a: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if n > 1e-6 {
            break a.map(|v| v / n);
        }
    };
    let angle = rng.random_range(0.0..=std::f64::consts::PI);
    let t = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    (so3_exp(&axis.map(|v| v * angle)), t)
}

struct Prepared {
    base: Vec<NormalizedPose>,
    moved: Vec<NormalizedPose>,
    r: Mat3<f64>,
    t: Vec3<f64>,
}

fn prepare(params: &TerParams, seq: &[Vec<Vec3<f64>>], weights: &TerWeights, seed: u64) -> Result<Prepared, TerError> {
    weights.validate()?;
    for m in seq {
        check_joints(params, m.len())?;
    }
    let need = if weights.jerk > 0.0 {
        4
    } else if weights.vel > 0.0 {
        2
    } else {
        1
    };
    if seq.len() < need {
        return Err(TerError::InsufficientLength { need, got: seq.len() });
    }
    let (r, t) = sample_rigid(seed);
    let base = normalize_sequence(seq)?;
    let moved = if weights.equiv > 0.0 {
        normalize_sequence(&apply_rigid(seq, &r, &t))?
    } else {
        Vec::new()
    };
    Ok(Prepared { base, moved, r, t })
}

fn loss_terms<S: Scalar>(lay: &Layout, p: &[S], prep: &Prepared, w: &TerWeights) -> [S; 3] {
    let zero = p[0].lift(0.0);
    let out = run(lay, p, &prep.base);
    let vel = if w.vel > 0.0 { vel_loss(&out).unwrap_or(zero) } else { zero };
    let jerk = if w.jerk > 0.0 { jerk_loss(&out).unwrap_or(zero) } else { zero };
    let equiv = if w.equiv > 0.0 {
        equiv_terms(lay, p, &prep.base, &out, &prep.moved, &prep.r, &prep.t)
    } else {
        zero
    };
    [vel, jerk, equiv]
}

fn combine(parts: [f64; 3], w: &TerWeights) -> TerLoss {
    TerLoss {
        vel: parts[0],
        jerk: parts[1],
        equiv: parts[2],
        total: w.vel * parts[0] + w.jerk * parts[1] + w.equiv * parts[2],
    }
}

/// `λ_vel L_vel + λ_jerk L_jerk + λ_equiv L_equiv` with the rigid motion of
/// the equivariance term drawn from `seed`. Components with zero weight are
/// reported as zero.
pub fn ter_loss(params: &TerParams, seq: &[Vec<Vec3<f64>>], weights: &TerWeights, seed: u64) -> Result<TerLoss, TerError> {
    let prep = prepare(params, seq, weights, seed)?;
    Ok(combine(loss_terms(&params.layout, params.as_slice(), &prep, weights), weights))
}

/// [`ter_loss`] and its gradient with respect to the flat parameter vector.
pub fn ter_loss_and_gradient(
    params: &TerParams,
    seq: &[Vec<Vec3<f64>>],
    weights: &TerWeights,
    seed: u64,
) -> Result<(TerLoss, Vec<f64>), TerError> {
    let prep = prepare(params, seq, weights, seed)?;
    let tape = Tape::new();
    let p = tape.vars(params.as_slice());
    let parts = loss_terms(&params.layout, &p, &prep, weights);
    let total = parts[0] * weights.vel + parts[1] * weights.jerk + parts[2] * weights.equiv;
    let grads = tape.gradient(total);
    let g = grads.collect(&p);
    Ok((combine(parts.map(|v| v.value()), weights), g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerOptimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for TerOptimizer {
    fn default() -> Self {
        TerOptimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Gradients longer than this are rescaled to this length.
    pub clip_norm: f64,
    pub optimizer: TerOptimizer,
    pub weights: TerWeights,
    pub seed: u64,
}

impl Default for TerTrainConfig {
    fn default() -> Self {
        TerTrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            clip_norm: 10.0,
            optimizer: TerOptimizer::default(),
            weights: TerWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: TerParams,
    /// Mean loss over the training sequences at the start of each epoch.
    pub losses: Vec<f64>,
    /// Running minimum of `losses`.
    pub best_losses: Vec<f64>,
    pub best_epoch: usize,
}

fn epoch_seed(seed: u64, epoch: usize, seq: usize) -> u64 {
    seed ^ ((epoch as u64) << 20 | seq as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Full-batch first-order training on the label-free objective.
pub fn train_ter(params: &TerParams, sequences: &[Vec<Vec<Vec3<f64>>>], cfg: &TerTrainConfig) -> Result<TrainReport, TerError> {
    if sequences.is_empty() {
        return Err(TerError::Config("no training sequences".into()));
    }
    if let Some(s) = sequences.iter().find(|s| s.len() < 4) {
        return Err(TerError::InsufficientLength { need: 4, got: s.len() });
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) || !(cfg.clip_norm > 0.0) {
        return Err(TerError::Config(format!(
            "learning rate {} and clip norm {} must be nonnegative and positive",
            cfg.learning_rate, cfg.clip_norm
        )));
    }
    let mut p = params.clone();
    let n = p.len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best_losses = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0);
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut g = vec![0.0; n];
        for (i, s) in sequences.iter().enumerate() {
            let (l, gi) = ter_loss_and_gradient(&p, s, &cfg.weights, epoch_seed(cfg.seed, epoch, i))?;
            loss += l.total / sequences.len() as f64;
            g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b / sequences.len() as f64);
        }
        if !(loss.is_finite() && loss <= DIVERGENCE_LOSS) {
            return Err(TerError::Diverged { epoch, loss });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch);
        }
        best_losses.push(best.0);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn > cfg.clip_norm {
            g.iter_mut().for_each(|v| *v *= cfg.clip_norm / gn);
        }
        match cfg.optimizer {
            TerOptimizer::Sgd => {
                p.theta.iter_mut().zip(&g).for_each(|(x, gi)| *x -= cfg.learning_rate * gi);
            }
            TerOptimizer::Adam { beta1, beta2, eps } => {
                let k = (epoch + 1) as i32;
                let c1 = 1.0 - beta1.powi(k);
                let c2 = 1.0 - beta2.powi(k);
                for i in 0..n {
                    m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                    m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                    p.theta[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(TrainReport {
        params: p,
        losses,
        best_losses,
        best_epoch: best.1,
    })
}

/// Adds isotropic Gaussian noise with per-frame standard deviation
/// `rel_sigma · s_t` to every coordinate.
pub fn jitter_sequence(seq: &[Vec<Vec3<f64>>], rel_sigma: f64, seed: u64) -> Result<Vec<Vec<Vec3<f64>>>, TerError> {
    if !(rel_sigma >= 0.0 && rel_sigma.is_finite()) {
        return Err(TerError::Config(format!("noise level {rel_sigma} must be nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seq.iter()
        .map(|m| {
            let s = normalize_pose(m)?.s;
            let d = Normal::new(0.0, rel_sigma * s).map_err(|e| TerError::Config(e.to_string()))?;
            Ok(m.iter().map(|p| std::array::from_fn(|i| p[i] + d.sample(&mut rng))).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests;
