//! `mvgc` command-line front end.
//!
//! Exit codes: 0 on success, 1 when the command ran but the domain failed
//! (solver failure, failed consistency check, invalid input file), 2 on a
//! usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mvgc_core::camera::{Camera, CameraRecord};
use mvgc_core::scenegen::{synth_scene, MotionStyle, RigRecord, SceneBundle, SceneConfig};
use mvgc_core::solver::{
    evaluate, intrinsic_grid, loss_grid, recover_cameras, run_ablation, solve_scene, AblationSuite, AblationTable,
    IntrinsicMode, LossWeights, SolveConfig, SolveReport,
};
use mvgc_core::ter::{TerOptimizer, TerTrainConfig};
use serde::Serialize;

use crate::diagnostics::{gc_check, GcCheckOptions, GcDiagnostic, DEFAULT_TOLERANCE};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_ter_experiment, TerExperiment};
use crate::report::{emit_report, write_json, Report, TerSummary};
use crate::tracks::{ingest_tracks, TrackFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parsed command line. Every random stream is seeded from a flag.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "mvgc", version, about = "Multi-view geometric consistency toolkit")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Synth(SynthArgs),
    /// Recover cameras from a scene bundle or a track file.
    Solve(SolveArgs),
    /// Score a solve result against the scene's ground truth.
    Eval(EvalArgs),
    /// Train the temporal rectifier on jittered motion.
    TerTrain(TerArgs),
    /// Check 2D tracks against the multiview constraints of a rig.
    GcCheck(GcArgs),
    /// Run the loss and calibration comparison grids.
    Ablate(AblateArgs),
    /// Write CSV tables and plot data from a saved JSON result.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub cameras: usize,
    #[arg(long, default_value_t = 17)]
    pub joints: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observation noise, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_rate: f64,
    #[arg(long, default_value_t = 50.0)]
    pub outlier_px: f64,
    #[arg(long, default_value = "sinusoidal", value_parser = parse_style)]
    #[serde(skip)]
    pub style: MotionStyle,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["scene", "tracks"]))]
pub struct SolveArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Track file or scene bundle; no ground truth metrics are attached.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Comma-separated terms: gb2, gb3, gb4, gc, sampson, reproj.
    #[arg(long, default_value = "gb2,gb3,gb4,reproj", value_parser = parse_loss)]
    #[serde(skip)]
    pub loss: LossWeights,
    #[arg(long, default_value = "shared_plus_delta", value_parser = parse_intrinsics)]
    #[serde(skip)]
    pub intrinsics: IntrinsicMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// A SolveReport written by `solve`.
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TerArgs {
    /// Use the motion of this scene bundle instead of generating one.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    pub joints: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 100)]
    pub motion_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub time_scale: f64,
    #[arg(long, default_value_t = 0.02)]
    pub jitter: f64,
    #[arg(long, default_value_t = 7)]
    pub jitter_seed: u64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub init_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// `adam` or `sgd`.
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    pub optimizer: String,
    /// Where to write the trained weights.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["scene", "tracks"]))]
pub struct GcArgs {
    #[arg(long, conflicts_with = "cameras")]
    pub scene: Option<PathBuf>,
    /// Rig record or list of camera records; used with `--tracks`.
    #[arg(long, requires = "tracks")]
    pub cameras: Option<PathBuf>,
    #[arg(long, requires = "cameras")]
    pub tracks: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = 8)]
    pub minor_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub cameras: usize,
    #[arg(long, default_value_t = 17)]
    pub joints: usize,
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    /// `loss`, `intrinsics` or `all`.
    #[arg(long, default_value = "all", value_parser = ["loss", "intrinsics", "all"])]
    pub grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// A JSON file written by any subcommand.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dir: PathBuf,
}

fn parse_loss(s: &str) -> std::result::Result<LossWeights, String> {
    LossWeights::parse(s).map_err(|e| e.to_string())
}

fn parse_intrinsics(s: &str) -> std::result::Result<IntrinsicMode, String> {
    s.parse().map_err(|e: mvgc_core::solver::SolveError| e.to_string())
}

fn parse_style(s: &str) -> std::result::Result<MotionStyle, String> {
    s.parse().map_err(|e: mvgc_core::scenegen::SceneError| e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            writeln!(stdout, "{text}").map_err(|e| HarnessError::io("<stdout>", e))
        }
    }
}

fn synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let b = synth_scene(&SceneConfig {
        cameras: a.cameras,
        joints: a.joints,
        frames: a.frames,
        sigma_px: a.sigma,
        outlier_rate: a.outlier_rate,
        outlier_px: a.outlier_px,
        style: a.style,
        seed: a.seed,
        ..Default::default()
    })?;
    emit(&b, a.out.as_deref(), stdout)
}

fn solve(a: &SolveArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = SolveConfig {
        loss: a.loss,
        intrinsics: a.intrinsics,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.max_iters {
        cfg.optimizer.max_iters = n;
    }
    let (report, tracks, seed) = if let Some(p) = &a.scene {
        let b: SceneBundle = read_json(p)?;
        (solve_scene(&b, &cfg)?, TrackFile::from_bundle(&b), Some(b.seeds.master))
    } else {
        let ing = ingest_tracks(a.tracks.as_ref().expect("input group"))?;
        (recover_cameras(&ing.observations, &cfg)?, ing.tracks, None)
    };
    emit(&report, a.out.as_deref(), stdout)?;
    if let Some(dir) = &a.report_dir {
        emit_report(
            &Report {
                command: "solve".into(),
                scene_seed: seed,
                solve: Some(report),
                tracks: Some(tracks),
                ..Default::default()
            },
            dir,
        )?;
    }
    Ok(())
}

fn eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let b: SceneBundle = read_json(&a.scene)?;
    let r: SolveReport = read_json(&a.result)?;
    let m = evaluate(&r, &b.rig()?, &b.motion, &b.observations)?;
    emit(&m, a.out.as_deref(), stdout)
}

fn ter_train(a: &TerArgs, stdout: &mut dyn Write) -> Result<()> {
    let exp = TerExperiment {
        joints: a.joints,
        frames: a.frames,
        motion_seed: a.motion_seed,
        time_scale: a.time_scale,
        jitter: a.jitter,
        jitter_seed: a.jitter_seed,
        hidden: a.hidden,
        init_seed: a.init_seed,
        train: TerTrainConfig {
            epochs: a.epochs,
            learning_rate: a.lr,
            optimizer: if a.optimizer == "sgd" { TerOptimizer::Sgd } else { TerOptimizer::default() },
            seed: a.seed,
            ..Default::default()
        },
        ..Default::default()
    };
    let clean = match &a.scene {
        Some(p) => Some(read_json::<SceneBundle>(p)?.motion.frames),
        None => None,
    };
    let (params, summary) = run_ter_experiment(&exp, clean)?;
    if let Some(p) = &a.checkpoint {
        write_json(p, &params.to_checkpoint())?;
    }
    emit(&summary, a.out.as_deref(), stdout)?;
    if let Some(dir) = &a.report_dir {
        emit_report(
            &Report {
                command: "ter-train".into(),
                ter: Some(summary),
                ..Default::default()
            },
            dir,
        )?;
    }
    Ok(())
}

fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let records: Vec<CameraRecord> = match serde_json::from_str::<RigRecord>(&text) {
        Ok(r) => r.cameras,
        Err(_) => read_json(path)?,
    };
    records
        .iter()
        .map(|r| Camera::from_record(r).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn gc(a: &GcArgs, stdout: &mut dyn Write) -> Result<GcDiagnostic> {
    let (cams, obs) = match (&a.scene, &a.cameras, &a.tracks) {
        (Some(p), _, _) => {
            let b: SceneBundle = read_json(p)?;
            (b.rig()?.cameras, b.observations)
        }
        (None, Some(c), Some(t)) => (read_cameras(c)?, ingest_tracks(t)?.observations),
        _ => unreachable!("enforced by the argument groups"),
    };
    let opts = GcCheckOptions {
        tolerance: a.tol,
        minor_points: a.minor_points,
        seed: a.seed,
        ..Default::default()
    };
    let d = gc_check(&cams, &obs, &opts)?;
    emit(&d, a.out.as_deref(), stdout)?;
    Ok(d)
}

fn ablate(a: &AblateArgs, stdout: &mut dyn Write) -> Result<AblationTable> {
    let bundles = (0..a.scenes as u64)
        .map(|i| {
            synth_scene(&SceneConfig {
                cameras: a.cameras,
                joints: a.joints,
                frames: a.frames,
                sigma_px: a.sigma,
                seed: a.seed + i,
                ..Default::default()
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let base = SolveConfig::default();
    let mut configs = Vec::new();
    if a.grid != "intrinsics" {
        configs.extend(loss_grid(&base));
    }
    if a.grid != "loss" {
        configs.extend(intrinsic_grid(&base));
    }
    let table = run_ablation(&AblationSuite { bundles, configs });
    emit(&table, a.out.as_deref(), stdout)?;
    if let Some(dir) = &a.report_dir {
        emit_report(
            &Report {
                command: "ablate".into(),
                ablation: Some(table.clone()),
                ..Default::default()
            },
            dir,
        )?;
    }
    Ok(table)
}

/// Recognizes any JSON document written by the other subcommands.
pub fn load_any_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    if let Ok(r) = serde_json::from_str::<Report>(&text) {
        return Ok(r);
    }
    let report = if let Ok(s) = serde_json::from_str::<SolveReport>(&text) {
        Report { command: "solve".into(), solve: Some(s), ..Default::default() }
    } else if let Ok(t) = serde_json::from_str::<AblationTable>(&text) {
        Report { command: "ablate".into(), ablation: Some(t), ..Default::default() }
    } else if let Ok(t) = serde_json::from_str::<TerSummary>(&text) {
        Report { command: "ter-train".into(), ter: Some(t), ..Default::default() }
    } else if let Ok(g) = serde_json::from_str::<GcDiagnostic>(&text) {
        Report { command: "gc-check".into(), gc_check: Some(g), ..Default::default() }
    } else {
        let ing = crate::tracks::parse_tracks(&text, &path.display().to_string())?;
        Report { command: "tracks".into(), tracks: Some(ing.tracks), ..Default::default() }
    };
    Ok(report)
}

fn report(a: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let r = load_any_report(&a.input)?;
    for p in emit_report(&r, &a.dir)? {
        writeln!(stdout, "{}", p.display()).map_err(|e| HarnessError::io("<stdout>", e))?;
    }
    Ok(())
}

fn dispatch(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    match &cfg.command {
        Command::Synth(a) => synth(a, stdout),
        Command::Solve(a) => solve(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::TerTrain(a) => ter_train(a, stdout),
        Command::GcCheck(a) => {
            let d = gc(a, stdout)?;
            if d.passed {
                Ok(())
            } else {
                Err(HarnessError::CheckFailed(format!(
                    "largest relative residual {:e}, largest relative minor {:e}, tolerance {:e}",
                    d.max_relative_residual, d.max_relative_minor, a.tol
                )))
            }
        }
        Command::Ablate(a) => ablate(a, stdout).map(|_| ()),
        Command::Report(a) => report(a, stdout),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cfg, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_FAILURE
        }
    }
}
