//! Training loop, learning-rate schedule, evaluation and ablation grids.

mod ablation;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, Tape};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_scores, EvalReport, VideoScore};
use crate::exec::Execution;
use crate::netcore::{forward, predict, save_checkpoint, Mode, Model, ModelConfig, PreparedSample};
use crate::objective::{
    ba_lea_loss, multitask_combine, prediction_loss, LossBreakdown, LossConfig, UncertaintyParams,
};
use crate::scenekit::{Dataset, VideoSample};

pub use ablation::{
    run_ablation, sample_variance, AblationFamily, AblationGrid, AblationRow, AblationTable,
    Experiment, ScatterPoint, SummaryRow,
};
pub use optim::{Adam, AdamConfig, Plateau, PlateauConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluations per epoch, evenly spaced over its steps.
    pub evals_per_epoch: usize,
    pub plateau: PlateauConfig,
    pub adam: AdamConfig,
    /// Learning-rate multiplier for the two `log σ` parameters.
    pub sigma_lr_scale: f64,
    pub seed: u64,
    pub train_split: String,
    pub eval_split: String,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            epochs: 50,
            evals_per_epoch: 2,
            plateau: PlateauConfig::default(),
            adam: AdamConfig::default(),
            sigma_lr_scale: 1.0,
            seed: 0,
            train_split: "train".into(),
            eval_split: "test".into(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small model and fast schedule for the default synthetic scenario
    /// (`96×72` images, depths 5 to 45, 16-dim features). 30 epochs of both
    /// graph modes run in well under a minute each on a desktop CPU.
    pub fn desk() -> Self {
        let mut model = ModelConfig {
            feature_dim: 16,
            context_hidden: 32,
            object_hidden: 16,
            graph_hidden: 16,
            temporal_hidden: 32,
            accident_hidden: 8,
            head_hidden: 16,
            heads: 4,
            ..ModelConfig::default()
        };
        model.edge.coordinate_scaling = [2.0 / 96.0, 2.0 / 72.0, 0.3];
        TrainConfig {
            lr: 1e-2,
            batch_size: 8,
            epochs: 30,
            model,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0 (got {})", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.evals_per_epoch == 0 {
            return Err(Error::Config(
                "batch_size, epochs and evals_per_epoch must be >= 1".into(),
            ));
        }
        if !(self.sigma_lr_scale >= 0.0 && self.sigma_lr_scale.is_finite()) {
            return Err(Error::Config(
                "sigma_lr_scale must be finite and >= 0".into(),
            ));
        }
        self.plateau.validate()?;
        self.model.validate()?;
        self.loss.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Eval(EvalPoint),
    LrReduced {
        step: usize,
        from: f64,
        to: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Fractional epoch at which the evaluation ran (0.5, 1.0, …).
    pub epoch: f64,
    pub step: usize,
    pub lr: f64,
    pub ap: f64,
    pub mtta: f64,
    pub tta_r80: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalPoint {
    fn beats(&self, other: &EvalPoint) -> bool {
        self.ap > other.ap || (self.ap == other.ap && self.mtta > other.mtta)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    pub best: EvalPoint,
    pub history: Vec<EvalPoint>,
    pub losses: Vec<LossBreakdown>,
    pub log: Vec<LogRecord>,
}

/// Converts samples to model inputs in order.
pub fn prepare_all(
    samples: &[&VideoSample],
    cfg: &ModelConfig,
    exec: Execution,
) -> Result<Vec<PreparedSample>> {
    exec.map(samples, |s| PreparedSample::new(s, cfg))
        .into_iter()
        .collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Dropout seed for one sample at one optimisation step.
pub fn dropout_seed(seed: u64, step: usize, sample: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ step as u64) ^ sample as u64)
}

fn uncertainty(model: &Model) -> UncertaintyParams {
    UncertaintyParams {
        log_sigma1: model.params.get(model.id("loss.log_sigma1")).data[0],
        log_sigma2: model.params.get(model.id("loss.log_sigma2")).data[0],
    }
}

/// Loss and parameter gradients of one batch. `indices` identify the samples
/// for dropout seeding; `mode_seed = None` runs without dropout.
pub fn batch_gradients(
    model: &Model,
    batch: &[&PreparedSample],
    indices: &[usize],
    loss_cfg: &LossConfig,
    mode_seed: Option<(u64, usize)>,
    exec: Execution,
) -> Result<(LossBreakdown, Gradients)> {
    let cfg = &model.config;
    let jobs: Vec<(usize, &PreparedSample)> =
        indices.iter().copied().zip(batch.iter().copied()).collect();
    let passes = exec.map(&jobs, |&(idx, x)| {
        let mode = match mode_seed {
            Some((seed, step)) => Mode::Train {
                dropout_seed: dropout_seed(seed, step, idx),
            },
            None => Mode::Eval,
        };
        let mut tape = Tape::new(&model.params);
        forward(&mut tape, x, cfg, mode).map(|out| (tape, out))
    });
    let passes: Vec<_> = passes.into_iter().collect::<Result<_>>()?;

    let curves: Vec<_> = passes.iter().map(|(t, o)| o.curve(t)).collect();
    let score_refs: Vec<&[f64]> = curves.iter().map(|c| c.scores.as_slice()).collect();
    let labels: Vec<bool> = batch.iter().map(|x| x.label).collect();
    let taus: Vec<usize> = batch.iter().map(|x| x.accident_frame).collect();
    let frame = ba_lea_loss(&score_refs, &labels, &taus, loss_cfg)?;
    let preds: Vec<f64> = curves.iter().map(|c| c.video_prob).collect();
    let (video, video_grad) = prediction_loss(&preds, &labels)?;
    let sigma = uncertainty(model);
    let combined = multitask_combine(frame.value, video, &sigma, loss_cfg);
    let breakdown = LossBreakdown {
        frame_loss: frame.value,
        video_loss: video,
        total: combined.total,
        sigma1: sigma.sigma1(),
        sigma2: sigma.sigma2(),
    };
    if !combined.total.is_finite() {
        let detail = batch
            .iter()
            .zip(&curves)
            .map(|(x, c)| {
                format!(
                    "{} label={} tau={} max_score={} video_prob={}",
                    x.sample_id,
                    x.label as u8,
                    x.accident_frame,
                    c.max_score(),
                    c.video_prob
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::NonFinite {
            step: mode_seed.map_or(0, |(_, s)| s),
            detail: format!(
                "frame loss {} video loss {} total {}; batch: {detail}",
                frame.value, video, combined.total
            ),
        });
    }

    let seeded: Vec<(usize, &(Tape<'_>, _))> = passes.iter().enumerate().collect();
    let per_sample = exec.map(&seeded, |&(i, (tape, out))| {
        let frames = curves[i].scores.len();
        let ds = Matrix::from_vec(
            frames,
            1,
            frame.grad[i].iter().map(|g| g * combined.d_frame).collect(),
        );
        let dv = Matrix::from_vec(1, 1, vec![video_grad[i] * combined.d_video]);
        let mut g = Gradients::zeros_like(&model.params);
        tape.backward(&[(out.scores, ds), (out.video_prob, dv)], &mut g);
        g
    });
    let mut total = Gradients::zeros_like(&model.params);
    for g in &per_sample {
        total.accumulate(g);
    }
    total.grads[model.id("loss.log_sigma1").0].data[0] += combined.d_log_sigma1;
    total.grads[model.id("loss.log_sigma2").0].data[0] += combined.d_log_sigma2;
    Ok((breakdown, total))
}

/// Scores every sample in evaluation mode and computes the report.
pub fn evaluate(
    model: &Model,
    samples: &[PreparedSample],
    frame_rate: f64,
    exec: Execution,
) -> Result<(EvalReport, Vec<VideoScore>)> {
    let curves = exec.map(samples, |x| predict(model, x));
    let mut scores = Vec::with_capacity(samples.len());
    for (x, c) in samples.iter().zip(curves) {
        scores.push(VideoScore::new(c?, x.label, x.accident_frame));
    }
    let report = evaluate_scores(&scores, frame_rate)?;
    Ok((report, scores))
}

/// Step indices (1-based, within an epoch) after which an evaluation runs.
fn eval_marks(steps: usize, per_epoch: usize) -> Vec<usize> {
    let mut marks: Vec<usize> = (1..=per_epoch)
        .map(|k| ((steps * k) as f64 / per_epoch as f64).round() as usize)
        .map(|m| m.clamp(1, steps))
        .collect();
    marks.dedup();
    marks
}

/// Trains from a fresh initialisation. When `out` is given, the JSONL log
/// and `best.ckpt` / `final.ckpt` are written there.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_samples = dataset.split(&cfg.train_split)?;
    let eval_samples = dataset.split(&cfg.eval_split)?;
    if train_samples.is_empty() || eval_samples.is_empty() {
        return Err(Error::Invalid(format!(
            "training needs non-empty '{}' and '{}' splits",
            cfg.train_split, cfg.eval_split
        )));
    }
    let train_x = prepare_all(&train_samples, &cfg.model, exec)?;
    let eval_x = prepare_all(&eval_samples, &cfg.model, exec)?;
    train_prepared(&train_x, &eval_x, dataset.meta.frame_rate, cfg, out, exec)
}

/// [`train`] on already prepared inputs.
pub fn train_prepared(
    train_x: &[PreparedSample],
    eval_x: &[PreparedSample],
    frame_rate: f64,
    cfg: &TrainConfig,
    out: Option<&Path>,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut plateau = Plateau::new(cfg.plateau, cfg.lr);
    let sigma_ids = [model.id("loss.log_sigma1"), model.id("loss.log_sigma2")];
    let mut lr_scale = vec![1.0; model.params.len()];
    for id in sigma_ids {
        lr_scale[id.0] = cfg.sigma_lr_scale;
    }

    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some((
                BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?),
                p,
            ))
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        if let Some((w, p)) = log_file.as_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| Error::json(p.as_path(), e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(p.as_path(), e))?;
        }
        log.push(rec);
        Ok(())
    };

    let steps_per_epoch = train_x.len().div_ceil(cfg.batch_size);
    let marks = eval_marks(steps_per_epoch, cfg.evals_per_epoch);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut step = 0usize;
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<(EvalPoint, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0xD1CE) ^ epoch as u64);
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_x[i]).collect();
            let (loss, grads) = batch_gradients(
                &model,
                &batch,
                chunk,
                &cfg.loss,
                Some((cfg.seed, step)),
                exec,
            )
            .map_err(|e| dump_nonfinite(e, out))?;
            if !grads.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|x| x.sample_id.as_str()).collect();
                return Err(dump_nonfinite(
                    Error::NonFinite {
                        step,
                        detail: format!("non-finite gradients for batch {}", ids.join(", ")),
                    },
                    out,
                ));
            }
            adam.step(&mut model.params, &grads, plateau.lr(), &lr_scale);
            model.round_to_f32();
            emit(
                LogRecord::Step {
                    epoch: epoch + 1,
                    step,
                    lr: plateau.lr(),
                    loss,
                },
                &mut log,
            )?;
            losses.push(loss);
            step += 1;

            if let Some(k) = marks.iter().position(|&m| m == b + 1) {
                let (report, _) = evaluate(&model, eval_x, frame_rate, exec)?;
                let point = EvalPoint {
                    epoch: epoch as f64 + (k + 1) as f64 / marks.len() as f64,
                    step,
                    lr: plateau.lr(),
                    ap: report.ap,
                    mtta: report.mtta,
                    tta_r80: report.tta_r80,
                    auc: report.auc,
                };
                emit(LogRecord::Eval(point.clone()), &mut log)?;
                if best.as_ref().is_none_or(|(b, _)| point.beats(b)) {
                    best = Some((point.clone(), model.clone()));
                }
                let before = plateau.lr();
                if plateau.observe(point.ap) {
                    emit(
                        LogRecord::LrReduced {
                            step,
                            from: before,
                            to: plateau.lr(),
                        },
                        &mut log,
                    )?;
                }
                history.push(point);
            }
        }
    }
    if let Some((w, p)) = log_file.as_mut() {
        w.flush().map_err(|e| Error::io(p.as_path(), e))?;
    }
    let (best, best_model) = best.expect("at least one evaluation per epoch");
    if let Some(dir) = out {
        save_checkpoint(&best_model, &dir.join("best.ckpt"))?;
        save_checkpoint(&model, &dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best,
        history,
        losses,
        log,
    })
}

fn dump_nonfinite(e: Error, out: Option<&Path>) -> Error {
    if let (Error::NonFinite { step, detail }, Some(dir)) = (&e, out) {
        let body = serde_json::json!({ "step": step, "detail": detail });
        // best effort: the original error is what the caller needs
        let _ = std::fs::write(dir.join("nonfinite_batch.json"), body.to_string());
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_marks_split_epochs() {
        assert_eq!(eval_marks(10, 2), vec![5, 10]);
        assert_eq!(eval_marks(1, 2), vec![1]);
        assert_eq!(eval_marks(7, 1), vec![7]);
    }

    #[test]
    fn dropout_seeds_differ() {
        assert_ne!(dropout_seed(1, 0, 0), dropout_seed(1, 0, 1));
        assert_ne!(dropout_seed(1, 0, 0), dropout_seed(1, 1, 0));
        assert_eq!(dropout_seed(1, 2, 3), dropout_seed(1, 2, 3));
    }
}
