use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    accident_head, context_attention, graph_encode, object_attention, temporal_fuse, GraphInputs,
};
use super::{Model, ModelConfig, RiskCurve};
use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::build_graphs;
use crate::scenekit::VideoSample;

/// A sample converted to model inputs. The collision graphs are only built
/// when the graph branch is enabled, so depth-free samples can still be
/// scored with it disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub label: bool,
    pub accident_frame: usize,
    pub frames: usize,
    pub slots: usize,
    /// `T×D`
    pub context: Matrix,
    /// `(T·N)×D`
    pub objects: Matrix,
    pub mask: Vec<bool>,
    pub graph: Option<GraphInputs>,
}

impl PreparedSample {
    pub fn new(sample: &VideoSample, cfg: &ModelConfig) -> Result<Self> {
        let frames = sample.num_frames();
        if frames == 0 {
            return Err(Error::Shape(format!(
                "sample {} has no frames",
                sample.sample_id
            )));
        }
        let d = cfg.feature_dim;
        let slots = sample.frames[0].num_slots();
        let mut context = Matrix::zeros(frames, d);
        let mut objects = Matrix::zeros(frames * slots, d);
        let mut mask = Vec::with_capacity(frames * slots);
        for (t, f) in sample.frames.iter().enumerate() {
            if f.feature_dim() != d || f.num_slots() != slots || f.objects.len() != slots * d {
                return Err(Error::Shape(format!(
                    "sample {} frame {}: expected {slots} slots of {d} features, found {} slots of {}",
                    sample.sample_id,
                    t + 1,
                    f.num_slots(),
                    f.feature_dim()
                )));
            }
            for (c, &v) in f.context.iter().enumerate() {
                context.set(t, c, v as f64);
            }
            for (i, &v) in f.objects.iter().enumerate() {
                objects.data[t * slots * d + i] = v as f64;
            }
            mask.extend_from_slice(&f.mask);
        }
        let graph = if cfg.toggles.collision_3d {
            let graphs =
                build_graphs(&sample.frames, cfg.graph_mode, &cfg.edge).map_err(|e| match e {
                    Error::DepthFree(_) => Error::DepthFree(sample.sample_id.clone()),
                    other => other,
                })?;
            Some(GraphInputs::from_graphs(&graphs, 2 * d))
        } else {
            None
        };
        Ok(PreparedSample {
            sample_id: sample.sample_id.clone(),
            label: sample.label,
            accident_frame: sample.accident_frame,
            frames,
            slots,
            context,
            objects,
            mask,
            graph,
        })
    }
}

/// Evaluation is deterministic; training draws dropout masks from a stream
/// seeded per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `T×1`
    pub scores: Var,
    /// `1×1`
    pub video_prob: Var,
}

impl ForwardOutput {
    pub fn curve(&self, t: &Tape<'_>) -> RiskCurve {
        RiskCurve {
            scores: t.value(self.scores).data.clone(),
            video_prob: t.value(self.video_prob).data[0],
        }
    }
}

/// Records the full model on `t`. Disabled branches contribute zeros of
/// their usual width.
pub fn forward(
    t: &mut Tape<'_>,
    x: &PreparedSample,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<ForwardOutput> {
    let mut rng = match mode {
        Mode::Eval => None,
        Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
    };
    let frames = x.frames;
    let ic = if cfg.toggles.context_attn {
        let h = t.constant(x.context.clone());
        context_attention(t, h, cfg.heads)?
    } else {
        t.constant(Matrix::zeros(frames, cfg.context_hidden))
    };
    let io = if cfg.toggles.object_attn {
        let o = t.constant(x.objects.clone());
        object_attention(t, o, &x.mask, frames)?.0
    } else {
        t.constant(Matrix::zeros(frames, cfg.object_hidden))
    };
    let g = match (&x.graph, cfg.toggles.collision_3d) {
        (Some(gi), true) => graph_encode(t, gi, cfg.graph_layers)?,
        (None, true) => {
            return Err(Error::Invalid(format!(
                "sample {} was prepared without collision graphs",
                x.sample_id
            )))
        }
        (_, false) => t.constant(Matrix::zeros(frames, cfg.graph_hidden)),
    };
    let temporal = temporal_fuse(t, ic, io, g, cfg, rng.as_mut())?;
    let video_prob = accident_head(t, temporal.scores, temporal.fused, cfg)?;
    Ok(ForwardOutput {
        scores: temporal.scores,
        video_prob,
    })
}

/// Scores one sample in evaluation mode.
pub fn predict(model: &Model, x: &PreparedSample) -> Result<RiskCurve> {
    let mut t = Tape::new(&model.params);
    let out = forward(&mut t, x, &model.config, Mode::Eval)?;
    Ok(out.curve(&t))
}

/// Scores a batch, one curve per sample in input order.
pub fn predict_batch(
    model: &Model,
    batch: &[PreparedSample],
    exec: Execution,
) -> Result<Vec<RiskCurve>> {
    exec.map(batch, |x| predict(model, x)).into_iter().collect()
}
