use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use dashrisk::config::{parse_flat, to_flat};
use dashrisk::evalkit::{detect_time, tta};
use dashrisk::netcore::{load_checkpoint, predict, PreparedSample};
use dashrisk::scenekit::{generate_dataset, load_dataset, save_dataset, Dataset, ScenarioConfig};
use dashrisk::trainer::{
    evaluate, prepare_all, run_ablation, train, AblationFamily, AblationGrid, TrainConfig,
};
use dashrisk::Execution;

use crate::manifest::RunManifest;
use crate::plot::{render_png, render_svg, CurvePlot};
use crate::{Command, ImageFormat, ModelFlags};

/// A failed command with its process exit code: 2 for bad input, 1 for
/// internal failures.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        self.code
    }

    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 2,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<dashrisk::Error> for Failure {
    fn from(e: dashrisk::Error) -> Self {
        use dashrisk::Error as E;
        let code = match e {
            E::Metric(_) | E::NonFinite { .. } | E::Io { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Anything that goes wrong while reading inputs is the caller's problem.
fn input<T>(r: dashrisk::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::usage)
}

fn read_config<T>(path: Option<&Path>) -> Result<T, Failure>
where
    T: Serialize + serde::de::DeserializeOwned + Default,
{
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Failure::usage(anyhow::anyhow!("cannot read config {}: {e}", p.display()))
            })?;
            parse_flat(&text).map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", p.display())))
        }
    }
}

fn apply_model_flags(cfg: &mut TrainConfig, flags: &ModelFlags) -> Result<(), Failure> {
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &flags.mode {
        cfg.model.graph_mode = input(mode.parse())?;
    }
    for t in &flags.toggles {
        input(cfg.model.toggles.apply(t))?;
    }
    input(cfg.validate())
}

fn resolved_json<T: Serialize>(value: &T) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::from(anyhow::Error::from(e)))
}

fn flat<T: Serialize>(value: &T) -> Result<String, Failure> {
    to_flat(value).map_err(Failure::from)
}

/// Grid file for `ablate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridFile {
    /// `toggles`, `smooth`, `decay`, `beta` or `mode`.
    pub family: String,
    /// Ratios swept by the `beta` family.
    pub betas: Vec<f64>,
    /// Base training settings shared by every experiment.
    pub train: TrainConfig,
}

impl Default for GridFile {
    fn default() -> Self {
        GridFile {
            family: "toggles".into(),
            betas: AblationGrid::TABLE_BETAS.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::GenData { config, out, seed } => gen_data(config.as_deref(), &out, seed),
        Command::Train {
            config,
            dataset,
            out,
            model,
        } => cmd_train(config.as_deref(), &dataset, &out, &model),
        Command::Eval {
            checkpoint,
            dataset,
            out,
            split,
            threshold,
        } => cmd_eval(&checkpoint, &dataset, &out, &split, threshold),
        Command::Ablate {
            config,
            dataset,
            out,
            model,
        } => cmd_ablate(config.as_deref(), &dataset, &out, &model),
        Command::PlotCurve {
            checkpoint,
            dataset,
            out,
            samples,
            threshold,
            format,
        } => plot_curve(&checkpoint, &dataset, &out, &samples, threshold, format),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg: ScenarioConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    input(cfg.validate())?;
    RunManifest::new("gen-data", resolved_json(&cfg)?, Some(cfg.seed))
        .input("out", out.display())
        .artifact(out.join("manifest.json"))
        .artifact(out.join("splits.json"))
        .artifact(out.join("records"))
        .write(out, Some(&flat(&cfg)?))?;
    let ds = generate_dataset(&cfg)?;
    save_dataset(&ds, out)?;
    eprintln!(
        "wrote {} videos ({} train, {} test) to {}",
        ds.samples.len(),
        ds.splits.train.len(),
        ds.splits.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(config: Option<&Path>, dataset: &Path, out: &Path, flags: &ModelFlags) -> CmdResult {
    let mut cfg: TrainConfig = read_config(config)?;
    apply_model_flags(&mut cfg, flags)?;
    let ds = input(load_dataset(dataset))?;
    RunManifest::new("train", resolved_json(&cfg)?, Some(cfg.seed))
        .input("dataset", dataset.display())
        .input("out", out.display())
        .artifact(out.join("train_log.jsonl"))
        .artifact(out.join("best.ckpt"))
        .artifact(out.join("final.ckpt"))
        .artifact(out.join("train_summary.json"))
        .write(out, Some(&flat(&cfg)?))?;
    let outcome = train(&ds, &cfg, Some(out), Execution::default())?;
    let summary = json!({
        "best": outcome.best,
        "final": outcome.history.last(),
        "best_checksum": outcome.best_model.checksum(),
        "final_checksum": outcome.final_model.checksum(),
    });
    std::fs::write(
        out.join("train_summary.json"),
        serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?,
    )?;
    eprintln!(
        "best AP {:.4} (mTTA {:.3} s) at epoch {}",
        outcome.best.ap, outcome.best.mtta, outcome.best.epoch
    );
    Ok(())
}

fn load_split(
    ds: &Dataset,
    split: &str,
    model: &dashrisk::netcore::Model,
) -> Result<Vec<PreparedSample>, Failure> {
    let samples = input(ds.split(split))?;
    if samples.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!("split '{split}' is empty")));
    }
    input(prepare_all(&samples, &model.config, Execution::default()))
}

fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    split: &str,
    threshold: f64,
) -> CmdResult {
    check_threshold(threshold)?;
    let model = input(load_checkpoint(checkpoint))?;
    let ds = input(load_dataset(dataset))?;
    let config = json!({"split": split, "threshold": threshold, "model": model.config});
    RunManifest::new("eval", config, None)
        .input("checkpoint", checkpoint.display())
        .input("dataset", dataset.display())
        .input("out", out.display())
        .artifact(out.join("eval_report.json"))
        .artifact(out.join("thresholds.csv"))
        .artifact(out.join("scores.csv"))
        .write(out, None)?;
    let xs = load_split(&ds, split, &model)?;
    let (report, videos) = evaluate(&model, &xs, ds.meta.frame_rate, Execution::default())?;
    std::fs::write(
        out.join("eval_report.json"),
        serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?,
    )?;
    std::fs::write(out.join("thresholds.csv"), report.threshold_csv())?;
    let mut csv =
        String::from("sample_id,label,accident_frame,video_score,video_prob,detect_frame,tta\n");
    for (x, v) in xs.iter().zip(&videos) {
        let detect = detect_time(&v.curve.scores, threshold);
        let lead = if v.label {
            tta(
                &v.curve.scores,
                v.accident_frame,
                threshold,
                ds.meta.frame_rate,
            )?
            .to_string()
        } else {
            String::new()
        };
        csv += &format!(
            "{},{},{},{},{},{},{}\n",
            x.sample_id,
            u8::from(v.label),
            v.accident_frame,
            v.video_score,
            v.curve.video_prob,
            detect.map(|d| d.to_string()).unwrap_or_default(),
            lead
        );
    }
    std::fs::write(out.join("scores.csv"), csv)?;
    let auc = report
        .auc
        .map(|a| format!("{a:.4}"))
        .unwrap_or_else(|| "n/a".into());
    eprintln!(
        "AP {:.4}  AUC {auc}  mTTA {:.3} s on {} videos",
        report.ap, report.mtta, report.num_videos
    );
    Ok(())
}

fn cmd_ablate(config: Option<&Path>, dataset: &Path, out: &Path, flags: &ModelFlags) -> CmdResult {
    let mut grid_file: GridFile = read_config(config)?;
    apply_model_flags(&mut grid_file.train, flags)?;
    let family: AblationFamily = input(grid_file.family.parse())?;
    let grid = match family {
        AblationFamily::Beta => AblationGrid::beta(&grid_file.train, &grid_file.betas),
        f => input(AblationGrid::family(f, &grid_file.train))?,
    };
    let ds = input(load_dataset(dataset))?;
    let mut manifest = RunManifest::new(
        "ablate",
        resolved_json(&grid_file)?,
        Some(grid_file.train.seed),
    )
    .input("dataset", dataset.display())
    .input("out", out.display());
    for ext in ["csv", "json"] {
        manifest = manifest.artifact(out.join(format!("ablation_{}.{ext}", grid_file.family)));
    }
    manifest.write(out, Some(&flat(&grid_file)?))?;
    let table = run_ablation(&grid, &ds, Execution::default());
    table.write(out)?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} experiments, {failed} failed; tables in {}",
        table.rows.len(),
        out.display()
    );
    for r in table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("  {}: {}", r.name, r.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> CmdResult {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Failure::usage(anyhow::anyhow!(
            "threshold {threshold} outside [0, 1]"
        )))
    }
}

fn plot_curve(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    ids: &[String],
    threshold: f64,
    format: ImageFormat,
) -> CmdResult {
    check_threshold(threshold)?;
    let model = input(load_checkpoint(checkpoint))?;
    let ds = input(load_dataset(dataset))?;
    let missing: Vec<&str> = ids
        .iter()
        .filter(|id| ds.get(id).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!(
            "unknown sample id(s): {}",
            missing.join(", ")
        )));
    }
    let ext = match format {
        ImageFormat::Svg => "svg",
        ImageFormat::Png => "png",
    };
    let paths: Vec<PathBuf> = ids
        .iter()
        .map(|id| out.join(format!("curve_{id}.{ext}")))
        .collect();
    let config = json!({"threshold": threshold, "samples": ids, "format": ext});
    let mut manifest = RunManifest::new("plot-curve", config, None)
        .input("checkpoint", checkpoint.display())
        .input("dataset", dataset.display())
        .input("out", out.display());
    for p in &paths {
        manifest = manifest.artifact(p.clone());
    }
    manifest.write(out, None)?;
    for (id, path) in ids.iter().zip(&paths) {
        let sample = ds.get(id).expect("checked above");
        let x = input(PreparedSample::new(sample, &model.config))?;
        let curve = predict(&model, &x)?;
        let plot = CurvePlot {
            title: id.clone(),
            scores: curve.scores,
            threshold,
            accident_frame: sample.label.then_some(sample.accident_frame),
        };
        match format {
            ImageFormat::Svg => std::fs::write(path, render_svg(&plot))?,
            ImageFormat::Png => render_png(&plot, path)?,
        }
    }
    eprintln!("wrote {} curve(s) to {}", paths.len(), out.display());
    Ok(())
}
