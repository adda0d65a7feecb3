use serde::{Deserialize, Serialize};

use crate::scenegen::SceneBundle;

use super::{median, solve_scene, IntrinsicMode, LossWeights, SolveConfig};

/// One labelled solver configuration in a comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub group: String,
    pub solve: SolveConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSuite {
    pub bundles: Vec<SceneBundle>,
    pub configs: Vec<AblationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub config: String,
    pub scene: usize,
    pub scene_seed: u64,
    pub rotation_deg: f64,
    pub translation_deg: f64,
    pub mpjpe_mm: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub group: String,
    pub config: String,
    pub scenes: usize,
    pub failures: usize,
    pub median_rotation_deg: f64,
    pub median_translation_deg: f64,
    pub median_mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Penalty recorded for a failed solve so that medians stay defined.
pub const FAILURE_ERROR_DEG: f64 = 180.0;

impl AblationTable {
    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut names: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.group.clone(), r.config.clone());
            if !names.contains(&key) {
                names.push(key);
            }
        }
        names
            .into_iter()
            .map(|(group, config)| {
                let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.group == group && r.config == config).collect();
                let col = |f: fn(&AblationRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                AblationSummary {
                    scenes: rows.len(),
                    failures: rows.iter().filter(|r| r.failed).count(),
                    median_rotation_deg: col(|r| r.rotation_deg),
                    median_translation_deg: col(|r| r.translation_deg),
                    median_mpjpe_mm: col(|r| r.mpjpe_mm),
                    group,
                    config,
                }
            })
            .collect()
    }

    pub fn median_rotation(&self, config: &str) -> Option<f64> {
        self.summary().into_iter().find(|s| s.config == config).map(|s| s.median_rotation_deg)
    }
}

/// The loss-component grid: a pose-only reprojection baseline, Sampson, every
/// non-empty combination of GB-2/3/4.
pub fn loss_grid(base: &SolveConfig) -> Vec<AblationConfig> {
    let none = LossWeights::NONE;
    let grid = [
        ("a_reprojection", LossWeights { reprojection: 1.0, ..none }),
        ("b_sampson", LossWeights { sampson: 1.0, ..none }),
        ("c_gb2", LossWeights { gb2: 1.0, ..none }),
        ("d_gb3", LossWeights { gb3: 1.0, ..none }),
        ("e_gb4", LossWeights { gb4: 1.0, ..none }),
        ("f_gb2_gb3", LossWeights { gb2: 1.0, gb3: 1.0, ..none }),
        ("g_gb2_gb4", LossWeights { gb2: 1.0, gb4: 1.0, ..none }),
        ("h_gb3_gb4", LossWeights { gb3: 1.0, gb4: 1.0, ..none }),
        ("i_full_gc", LossWeights::full_gc()),
    ];
    grid.into_iter()
        .map(|(name, loss)| AblationConfig {
            name: name.into(),
            group: "loss".into(),
            solve: SolveConfig { loss, ..base.clone() },
        })
        .collect()
}

/// Full GC under each calibration mode.
pub fn intrinsic_grid(base: &SolveConfig) -> Vec<AblationConfig> {
    IntrinsicMode::ALL
        .into_iter()
        .map(|m| AblationConfig {
            name: m.name().into(),
            group: "intrinsics".into(),
            solve: SolveConfig {
                loss: LossWeights::full_gc(),
                intrinsics: m,
                ..base.clone()
            },
        })
        .collect()
}

/// Solves every bundle under every configuration, in configuration-major order.
pub fn run_ablation(suite: &AblationSuite) -> AblationTable {
    let mut rows = Vec::with_capacity(suite.configs.len() * suite.bundles.len());
    for c in &suite.configs {
        for (i, b) in suite.bundles.iter().enumerate() {
            let res = solve_scene(b, &c.solve);
            let row = match res.as_ref().ok().and_then(|r| r.metrics.as_ref().map(|m| (r, m))) {
                Some((r, m)) => AblationRow {
                    group: c.group.clone(),
                    config: c.name.clone(),
                    scene: i,
                    scene_seed: b.seeds.master,
                    rotation_deg: m.pose.mean_rotation_deg,
                    translation_deg: m.pose.mean_translation_deg,
                    mpjpe_mm: m.mpjpe_mm,
                    final_loss: r.loss.total,
                    iterations: r.iterations,
                    failed: false,
                },
                None => AblationRow {
                    group: c.group.clone(),
                    config: c.name.clone(),
                    scene: i,
                    scene_seed: b.seeds.master,
                    rotation_deg: FAILURE_ERROR_DEG,
                    translation_deg: FAILURE_ERROR_DEG,
                    mpjpe_mm: f64::NAN,
                    final_loss: f64::NAN,
                    iterations: 0,
                    failed: true,
                },
            };
            rows.push(row);
        }
    }
    AblationTable { rows }
}
