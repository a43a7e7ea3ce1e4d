use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::GraphMode;
use crate::scenekit::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFamily {
    Toggles,
    Smooth,
    Decay,
    Beta,
    Mode,
    Custom,
}

impl std::str::FromStr for AblationFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "toggles" => AblationFamily::Toggles,
            "smooth" => AblationFamily::Smooth,
            "decay" => AblationFamily::Decay,
            "beta" => AblationFamily::Beta,
            "mode" => AblationFamily::Mode,
            other => {
                return Err(Error::Config(format!(
                "unknown ablation family '{other}' (expected toggles, smooth, decay, beta or mode)"
            )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub name: String,
    /// Rows sharing a group are summarised together.
    pub group: Option<String>,
    /// Column values describing the variant, in display order.
    pub settings: Vec<(String, String)>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub family: AblationFamily,
    pub experiments: Vec<Experiment>,
}

fn mark(on: bool) -> String {
    if on { "yes" } else { "no" }.into()
}

fn fields_label(fields: &[usize]) -> String {
    fields
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

impl AblationGrid {
    pub fn family(family: AblationFamily, base: &TrainConfig) -> Result<Self> {
        Ok(match family {
            AblationFamily::Toggles => Self::toggles(base),
            AblationFamily::Smooth => Self::smooth(base),
            AblationFamily::Decay => Self::decay(base),
            AblationFamily::Beta => Self::beta(base, &Self::TABLE_BETAS),
            AblationFamily::Mode => Self::mode(base),
            AblationFamily::Custom => {
                return Err(Error::Config(
                    "custom grids are built from an experiment list".into(),
                ))
            }
        })
    }

    /// Rows A–F switch off one module each; the last row keeps all.
    pub fn toggles(base: &TrainConfig) -> Self {
        let names = ["A", "B", "C", "D", "E", "F", "original"];
        let experiments = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let mut config = base.clone();
                let mut flags = [true; 6];
                if i < 6 {
                    flags[i] = false;
                }
                let t = &mut config.model.toggles;
                t.context_attn = flags[0];
                t.object_attn = flags[1];
                t.collision_3d = flags[2];
                t.temporal_attn = flags[3];
                t.smooth = flags[4];
                t.accident_head = flags[5];
                let columns = ["IA", "OA", "3D-CM", "TA", "SM", "AM"];
                Experiment {
                    name: name.to_string(),
                    group: None,
                    settings: columns
                        .iter()
                        .zip(flags)
                        .map(|(c, f)| (c.to_string(), mark(f)))
                        .collect(),
                    config,
                }
            })
            .collect();
        AblationGrid {
            family: AblationFamily::Toggles,
            experiments,
        }
    }

    pub const SMOOTH_SETS: [&'static [usize]; 14] = [
        &[50],
        &[20],
        &[10],
        &[5],
        &[2],
        &[50, 20],
        &[20, 10],
        &[10, 5],
        &[5, 2],
        &[50, 20, 10],
        &[20, 10, 5],
        &[10, 5, 2],
        &[50, 20, 10, 5],
        &[20, 10, 5, 2],
    ];

    pub fn smooth(base: &TrainConfig) -> Self {
        let experiments = Self::SMOOTH_SETS
            .iter()
            .enumerate()
            .map(|(i, fields)| {
                let mut config = base.clone();
                config.model.smooth_fields = fields.to_vec();
                config.model.toggles.smooth = true;
                Experiment {
                    name: (i + 1).to_string(),
                    group: None,
                    settings: vec![("fields".into(), fields_label(fields))],
                    config,
                }
            })
            .collect();
        AblationGrid {
            family: AblationFamily::Smooth,
            experiments,
        }
    }

    /// `(f1, f2)`; `None` replaces that coefficient with 1.
    pub const DECAY_ROWS: [(Option<f64>, Option<f64>); 19] = [
        (None, Some(10.0)),
        (None, Some(50.0)),
        (None, Some(100.0)),
        (None, Some(150.0)),
        (None, Some(200.0)),
        (Some(1.0), None),
        (Some(5.0), None),
        (Some(10.0), None),
        (Some(20.0), None),
        (Some(50.0), None),
        (Some(10.0), Some(100.0)),
        (Some(20.0), Some(100.0)),
        (Some(50.0), Some(100.0)),
        (Some(10.0), Some(150.0)),
        (Some(20.0), Some(150.0)),
        (Some(50.0), Some(150.0)),
        (Some(10.0), Some(200.0)),
        (Some(20.0), Some(200.0)),
        (Some(50.0), Some(200.0)),
    ];

    pub fn decay(base: &TrainConfig) -> Self {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        let experiments = Self::DECAY_ROWS
            .iter()
            .enumerate()
            .map(|(i, &(f1, f2))| {
                let mut config = base.clone();
                config.loss.unit_positive_weight = f1.is_none();
                config.loss.unit_negative_weight = f2.is_none();
                if let Some(v) = f1 {
                    config.loss.f1 = v;
                }
                if let Some(v) = f2 {
                    config.loss.f2 = v;
                }
                Experiment {
                    name: (i + 1).to_string(),
                    group: None,
                    settings: vec![("f1".into(), show(f1)), ("f2".into(), show(f2))],
                    config,
                }
            })
            .collect();
        AblationGrid {
            family: AblationFamily::Decay,
            experiments,
        }
    }

    pub const TABLE_BETAS: [f64; 10] = [1.0, 1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5];

    /// Each β with the adaptive weighting off, then the same β values (and
    /// the same initialisation seed) with it on.
    pub fn beta(base: &TrainConfig, betas: &[f64]) -> Self {
        let mut experiments = Vec::new();
        for adaptive in [false, true] {
            for &b in betas {
                let mut config = base.clone();
                config.loss.adaptive = adaptive;
                config.loss.gamma = b;
                experiments.push(Experiment {
                    name: (experiments.len() + 1).to_string(),
                    group: Some(
                        if adaptive {
                            "adaptive_on"
                        } else {
                            "adaptive_off"
                        }
                        .into(),
                    ),
                    settings: vec![
                        ("adaptive".into(), mark(adaptive)),
                        ("beta".into(), format!("{b:e}")),
                    ],
                    config,
                });
            }
        }
        AblationGrid {
            family: AblationFamily::Beta,
            experiments,
        }
    }

    /// 2D and 3D collision graphs, 30 epochs with two evaluations each.
    pub fn mode(base: &TrainConfig) -> Self {
        let experiments = [GraphMode::TwoD, GraphMode::ThreeD]
            .into_iter()
            .map(|m| {
                let mut config = base.clone();
                config.model.graph_mode = m;
                config.model.toggles.collision_3d = true;
                config.epochs = 30;
                config.evals_per_epoch = 2;
                Experiment {
                    name: m.to_string(),
                    group: None,
                    settings: vec![("mode".into(), m.to_string())],
                    config,
                }
            })
            .collect();
        AblationGrid {
            family: AblationFamily::Mode,
            experiments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub epoch: f64,
    pub ap: f64,
    pub mtta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub group: Option<String>,
    pub settings: Vec<(String, String)>,
    /// Metrics of the best evaluation (highest AP, then mTTA).
    pub ap: Option<f64>,
    pub mtta: Option<f64>,
    pub tta_r80: Option<f64>,
    /// AP of the last evaluation.
    pub final_ap: Option<f64>,
    pub final_mtta: Option<f64>,
    pub scatter: Vec<ScatterPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    /// `average` or `variance` (sample variance, `n − 1`).
    pub stat: String,
    pub ap: f64,
    pub mtta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub family: AblationFamily,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<SummaryRow>,
}

/// Sample variance with the `n − 1` denominator; zero for fewer than two
/// values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn run_one(exp: &Experiment, dataset: &Dataset, exec: Execution) -> AblationRow {
    let mut row = AblationRow {
        name: exp.name.clone(),
        group: exp.group.clone(),
        settings: exp.settings.clone(),
        ap: None,
        mtta: None,
        tta_r80: None,
        final_ap: None,
        final_mtta: None,
        scatter: Vec::new(),
        error: None,
    };
    match train(dataset, &exp.config, None, exec) {
        Ok(outcome) => {
            row.ap = Some(outcome.best.ap);
            row.mtta = Some(outcome.best.mtta);
            row.tta_r80 = outcome.best.tta_r80;
            let last = outcome.history.last();
            row.final_ap = last.map(|p| p.ap);
            row.final_mtta = last.map(|p| p.mtta);
            row.scatter = outcome
                .history
                .iter()
                .map(|p| ScatterPoint {
                    epoch: p.epoch,
                    ap: p.ap,
                    mtta: p.mtta,
                })
                .collect();
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Trains every experiment independently; a failing experiment yields a row
/// with its error and the grid continues.
pub fn run_ablation(grid: &AblationGrid, dataset: &Dataset, exec: Execution) -> AblationTable {
    let rows = exec.map(&grid.experiments, |exp| run_one(exp, dataset, exec));
    let mut groups: Vec<String> = Vec::new();
    for g in rows.iter().filter_map(|r| r.group.clone()) {
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let mut summary = Vec::new();
    for g in groups {
        let members: Vec<&AblationRow> = rows
            .iter()
            .filter(|r| r.group.as_ref() == Some(&g))
            .collect();
        let aps: Vec<f64> = members.iter().filter_map(|r| r.final_ap).collect();
        let mttas: Vec<f64> = members.iter().filter_map(|r| r.final_mtta).collect();
        if aps.is_empty() {
            continue;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        summary.push(SummaryRow {
            group: g.clone(),
            stat: "average".into(),
            ap: mean(&aps),
            mtta: mean(&mttas),
        });
        summary.push(SummaryRow {
            group: g,
            stat: "variance".into(),
            ap: sample_variance(&aps),
            mtta: sample_variance(&mttas),
        });
    }
    AblationTable {
        family: grid.family,
        rows,
        summary,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["experiment".to_string(), "group".into()];
        if let Some(first) = self.rows.first() {
            header.extend(first.settings.iter().map(|(k, _)| k.clone()));
        }
        header
            .extend(["ap", "mtta", "tta_r80", "final_ap", "final_mtta", "error"].map(String::from));
        let mut out = header.join(",") + "\n";
        for r in &self.rows {
            let mut cells = vec![r.name.clone(), r.group.clone().unwrap_or_default()];
            cells.extend(r.settings.iter().map(|(_, v)| v.clone()));
            cells.extend([
                opt(r.ap),
                opt(r.mtta),
                opt(r.tta_r80),
                opt(r.final_ap),
                opt(r.final_mtta),
                r.error
                    .clone()
                    .unwrap_or_default()
                    .replace([',', '\n'], ";"),
            ]);
            out += &(cells.join(",") + "\n");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("group,stat,ap,mtta\n");
        for s in &self.summary {
            out += &format!("{},{},{},{}\n", s.group, s.stat, s.ap, s.mtta);
        }
        out
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("experiment,epoch,ap,mtta\n");
        for r in &self.rows {
            for p in &r.scatter {
                out += &format!("{},{},{},{}\n", r.name, p.epoch, p.ap, p.mtta);
            }
        }
        out
    }

    /// Writes `ablation_<family>.{csv,json}` plus summary and scatter CSVs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = serde_json::to_value(self.family)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_else(|| "custom".into());
        let write = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write(format!("ablation_{stem}.csv"), self.to_csv())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(dir, e))?;
        write(format!("ablation_{stem}.json"), json)?;
        if !self.summary.is_empty() {
            write(format!("ablation_{stem}_summary.csv"), self.summary_csv())?;
        }
        if self.rows.iter().any(|r| !r.scatter.is_empty()) {
            write(format!("ablation_{stem}_scatter.csv"), self.scatter_csv())?;
        }
        Ok(())
    }
}
