//! Report files: one JSON document plus CSV tables ready for plotting.
//!
//! | file | columns |
//! |------|---------|
//! | `report.json` | the whole [`Report`] |
//! | `metrics.csv` | `group,config,scene,scene_seed,rotation_deg,translation_deg,mpjpe_mm,final_loss,iterations,failed` |
//! | `summary.csv` | `group,config,scenes,failures,median_rotation_deg,median_translation_deg,median_mpjpe_mm` |
//! | `loss_trace.csv` | `series,step,loss` |
//! | `error_histogram.csv` | `series,bin_lo,bin_hi,count` |
//! | `tracks.json` | the observations as a track file, when present |
//!
//! A single solve is written as an ablation of one configuration over one
//! scene, so `metrics.csv` always has one row per configuration and scene.

use std::fs::File;
use std::path::{Path, PathBuf};

use mvgc_core::solver::{AblationRow, AblationTable, LossWeights, SolveReport};
use serde::{Deserialize, Serialize};

use crate::diagnostics::GcDiagnostic;
use crate::error::{HarnessError, Result};
use crate::tracks::TrackFile;

pub const HISTOGRAM_BINS: usize = 20;

/// Outcome of a TER training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerSummary {
    pub joints: usize,
    pub hidden: usize,
    pub frames: usize,
    pub epochs: usize,
    pub losses: Vec<f64>,
    pub best_losses: Vec<f64>,
    pub best_epoch: usize,
    pub initial_equiv: f64,
    pub final_equiv: f64,
    pub noisy_mpjpe: f64,
    pub rectified_mpjpe: f64,
    /// Per-frame mean joint error of the rectified sequence.
    pub frame_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ter: Option<TerSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gc_check: Option<GcDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<TrackFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub series: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Equal-width bins over the finite values; empty when there are none.
pub fn histogram(series: &str, values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for v in finite {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            series: series.into(),
            bin_lo: lo + i as f64 * width,
            bin_hi: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Active loss terms joined by `+`, e.g. `gb2+gb3+reproj`.
pub fn loss_label(w: &LossWeights) -> String {
    let terms = [("gb2", w.gb2), ("gb3", w.gb3), ("gb4", w.gb4), ("sampson", w.sampson), ("reproj", w.reprojection)];
    let on: Vec<&str> = terms.iter().filter(|(_, v)| *v > 0.0).map(|(n, _)| *n).collect();
    on.join("+")
}

fn solve_row(r: &SolveReport, scene_seed: Option<u64>) -> AblationRow {
    let m = r.metrics.as_ref();
    AblationRow {
        group: "solve".into(),
        config: loss_label(&r.config.loss),
        scene: 0,
        scene_seed: scene_seed.unwrap_or(0),
        rotation_deg: m.map_or(f64::NAN, |m| m.pose.mean_rotation_deg),
        translation_deg: m.map_or(f64::NAN, |m| m.pose.mean_translation_deg),
        mpjpe_mm: m.map_or(f64::NAN, |m| m.mpjpe_mm),
        final_loss: r.loss.total,
        iterations: r.iterations,
        failed: false,
    }
}

#[derive(Serialize)]
struct TracePoint<'a> {
    series: &'a str,
    step: usize,
    loss: f64,
}

/// Writes the report under `dir`, creating it if needed, and returns the
/// written paths in a fixed order.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();

    let json = dir.join("report.json");
    write_json(&json, report)?;
    written.push(json);

    let rows: Vec<AblationRow> = match (&report.ablation, &report.solve) {
        (Some(t), _) => t.rows.clone(),
        (None, Some(s)) => vec![solve_row(s, report.scene_seed)],
        _ => Vec::new(),
    };
    if !rows.is_empty() {
        let path = dir.join("metrics.csv");
        let mut w = csv_writer(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    if let Some(t) = &report.ablation {
        let path = dir.join("summary.csv");
        let mut w = csv_writer(&path)?;
        for s in t.summary() {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }

    let mut traces: Vec<(&str, &[f64])> = Vec::new();
    if let Some(s) = &report.solve {
        traces.push(("solve", &s.trace));
    }
    if let Some(t) = &report.ter {
        traces.push(("ter_loss", &t.losses));
        traces.push(("ter_best", &t.best_losses));
    }
    if !traces.is_empty() {
        let path = dir.join("loss_trace.csv");
        let mut w = csv_writer(&path)?;
        for (series, values) in traces {
            for (step, &loss) in values.iter().enumerate() {
                w.serialize(TracePoint { series, step, loss })?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }

    let mut bins = Vec::new();
    if !rows.is_empty() {
        let configs: Vec<String> = rows.iter().fold(Vec::new(), |mut acc, r| {
            if !acc.contains(&r.config) {
                acc.push(r.config.clone());
            }
            acc
        });
        for c in &configs {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| &r.config == c).collect();
            bins.extend(histogram(&format!("{c}/rotation_deg"), &sel.iter().map(|r| r.rotation_deg).collect::<Vec<_>>(), HISTOGRAM_BINS));
            bins.extend(histogram(&format!("{c}/mpjpe_mm"), &sel.iter().map(|r| r.mpjpe_mm).collect::<Vec<_>>(), HISTOGRAM_BINS));
        }
    }
    if let Some(s) = report.solve.as_ref().and_then(|s| s.metrics.as_ref()) {
        bins.extend(histogram("camera_rotation_deg", &s.pose.rotation_deg, HISTOGRAM_BINS));
    }
    if let Some(t) = &report.ter {
        bins.extend(histogram("ter_frame_error", &t.frame_errors, HISTOGRAM_BINS));
    }
    if let Some(g) = &report.gc_check {
        let logs: Vec<f64> = g.subsets.iter().map(|s| s.max_relative_residual.max(1e-300).log10()).collect();
        bins.extend(histogram("gc_log10_residual", &logs, HISTOGRAM_BINS));
    }
    if !bins.is_empty() {
        let path = dir.join("error_histogram.csv");
        let mut w = csv_writer(&path)?;
        for b in &bins {
            w.serialize(b)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }

    if let Some(t) = &report.tracks {
        let path = dir.join("tracks.json");
        write_json(&path, t)?;
        written.push(path);
    }
    Ok(written)
}
