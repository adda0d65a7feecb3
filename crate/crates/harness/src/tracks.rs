//! JSON interchange for externally produced 2D joint tracks.
//!
//! ```json
//! {
//!   "views": ["cam0", "cam1"],
//!   "joint_names": ["pelvis", "r_hip"],
//!   "units": {"image": "px", "world": "m"},
//!   "image_size": [1000, 1000],
//!   "frames": [[[{"u": 1.0, "v": 2.0, "confidence": 0.9, "cov": [4, 0, 4]}, ...], ...], ...]
//! }
//! ```
//!
//! `frames[t][v][j]` is joint `j` at frame `t` in view `v`. Every frame must
//! list every view and every joint.

use std::collections::BTreeSet;
use std::path::Path;

use mvgc_core::scenegen::{NoiseMeta, Observation, ObservationSet, SceneBundle};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const IMAGE_UNITS: &str = "px";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub image: String,
    pub world: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            image: IMAGE_UNITS.into(),
            world: "m".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackJoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    /// `[s_uu, s_uv, s_vv]` in squared image units.
    pub cov: [f64; 3],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub outlier: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub behind: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub views: Vec<String>,
    pub joint_names: Vec<String>,
    #[serde(default)]
    pub units: Units,
    pub image_size: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMeta>,
    pub frames: Vec<Vec<Vec<TrackJoint>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    pub source: String,
    pub views: usize,
    pub frames: usize,
    pub joints: usize,
    pub zero_confidence: usize,
    pub flagged_outliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub tracks: TrackFile,
    pub observations: ObservationSet,
    pub diagnostics: IngestDiagnostics,
}

pub fn default_joint_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("joint{j}")).collect()
}

pub fn default_view_names(n: usize) -> Vec<String> {
    (0..n).map(|v| format!("cam{v}")).collect()
}

fn invalid(path: &str, field: String, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        path: path.into(),
        field,
        reason: reason.into(),
    }
}

fn unique(path: &str, field: &str, names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(invalid(path, field.into(), "must not be empty"));
    }
    let mut seen = BTreeSet::new();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || !seen.insert(n) {
            return Err(invalid(path, format!("{field}[{i}]"), format!("name {n:?} is empty or repeated")));
        }
    }
    Ok(())
}

impl TrackFile {
    pub fn from_observations(obs: &ObservationSet, views: Vec<String>, joint_names: Vec<String>) -> Self {
        let frames = (0..obs.frames())
            .map(|t| {
                obs.views
                    .iter()
                    .map(|view| {
                        view[t]
                            .iter()
                            .map(|o| TrackJoint {
                                u: o.uv[0],
                                v: o.uv[1],
                                confidence: o.confidence,
                                cov: o.cov,
                                outlier: o.outlier,
                                behind: o.behind,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TrackFile {
            views,
            joint_names,
            units: Units::default(),
            image_size: obs.image_size,
            noise: Some(obs.noise),
            frames,
        }
    }

    pub fn from_bundle(bundle: &SceneBundle) -> Self {
        let obs = &bundle.observations;
        Self::from_observations(obs, default_view_names(obs.cameras()), default_joint_names(obs.joints()))
    }

    /// Checks every field; `path` labels the errors.
    pub fn validate(&self, path: &str) -> Result<()> {
        unique(path, "views", &self.views)?;
        unique(path, "joint_names", &self.joint_names)?;
        if self.units.image != IMAGE_UNITS {
            return Err(invalid(path, "units.image".into(), format!("unsupported unit {:?}, expected \"px\"", self.units.image)));
        }
        if !self.image_size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(invalid(path, "image_size".into(), format!("{:?} must be positive", self.image_size)));
        }
        if self.frames.is_empty() {
            return Err(invalid(path, "frames".into(), "must not be empty"));
        }
        let (nv, nj) = (self.views.len(), self.joint_names.len());
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != nv {
                return Err(invalid(path, format!("frames[{t}]"), format!("partial frame: {} of {nv} views", frame.len())));
            }
            for (v, joints) in frame.iter().enumerate() {
                if joints.len() != nj {
                    return Err(invalid(
                        path,
                        format!("frames[{t}][{v}]"),
                        format!("partial frame: {} of {nj} joints", joints.len()),
                    ));
                }
                for (j, p) in joints.iter().enumerate() {
                    let field = |name: &str| format!("frames[{t}][{v}][{j}].{name}");
                    if !p.u.is_finite() {
                        return Err(invalid(path, field("u"), format!("{} is not finite", p.u)));
                    }
                    if !p.v.is_finite() {
                        return Err(invalid(path, field("v"), format!("{} is not finite", p.v)));
                    }
                    if !(0.0..=1.0).contains(&p.confidence) {
                        return Err(invalid(path, field("confidence"), format!("{} outside [0, 1]", p.confidence)));
                    }
                    let [a, b, c] = p.cov;
                    if !(a > 0.0 && c > 0.0 && a.is_finite() && b.is_finite() && c.is_finite() && a * c - b * b >= 0.0) {
                        return Err(invalid(path, field("cov"), format!("{:?} is not a positive semi-definite covariance", p.cov)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Converts a validated file; call [`TrackFile::validate`] first.
    pub fn to_observations(&self) -> ObservationSet {
        let views = (0..self.views.len())
            .map(|v| {
                self.frames
                    .iter()
                    .map(|frame| {
                        frame[v]
                            .iter()
                            .map(|p| Observation {
                                uv: [p.u, p.v],
                                confidence: p.confidence,
                                cov: p.cov,
                                outlier: p.outlier,
                                behind: p.behind,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ObservationSet {
            views,
            image_size: self.image_size,
            noise: self.noise.unwrap_or(NoiseMeta {
                sigma_px: 0.0,
                outlier_rate: 0.0,
                outlier_px: 0.0,
                seed: 0,
            }),
        }
    }
}

fn parse_error(path: &str, e: serde_json::Error) -> HarnessError {
    HarnessError::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses JSON text holding a track file or a scene bundle.
pub fn parse_tracks(text: &str, path: &str) -> Result<Ingested> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let (tracks, source) = if value.get("observations").is_some() && value.get("rig").is_some() {
        let b: SceneBundle = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
        (TrackFile::from_bundle(&b), "scene_bundle")
    } else {
        (serde_json::from_str::<TrackFile>(text).map_err(|e| parse_error(path, e))?, "track_file")
    };
    tracks.validate(path)?;
    let observations = tracks.to_observations();
    let all: Vec<&TrackJoint> = tracks.frames.iter().flatten().flatten().collect();
    let diagnostics = IngestDiagnostics {
        source: source.into(),
        views: tracks.views.len(),
        frames: tracks.frames.len(),
        joints: tracks.joint_names.len(),
        zero_confidence: all.iter().filter(|p| p.confidence == 0.0).count(),
        flagged_outliers: all.iter().filter(|p| p.outlier).count(),
    };
    Ok(Ingested {
        tracks,
        observations,
        diagnostics,
    })
}

pub fn ingest_tracks(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_tracks(&text, &path.display().to_string())
}
