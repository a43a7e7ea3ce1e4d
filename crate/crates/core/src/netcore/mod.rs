//! The risk model: attention over context and objects, a collision-graph
//! encoder, gated temporal fusion, multi-scale smoothing and a
//! statistical-pooling video head.
//!
//! All layers run on an [`autodiff::Tape`](crate::autodiff::Tape) so the
//! same code serves inference and training.

mod checkpoint;
mod layers;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EdgeWeightConfig, GraphMode};

pub use crate::evalkit::RiskCurve;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    accident_head, context_attention, graph_encode, gru, object_attention, score_statistics,
    smooth, smoothing_operator, temporal_fuse, GraphInputs, TemporalOut,
};
pub use model::{forward, predict, predict_batch, ForwardOutput, Mode, PreparedSample};
pub use params::{init_params, Model};

/// Which sequence the video-level head pools over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccidentInput {
    /// Per-frame scores `s_t`.
    #[default]
    Scores,
    /// Per-frame fused features, pooled over the feature axis.
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub context_attn: bool,
    pub object_attn: bool,
    pub collision_3d: bool,
    pub temporal_attn: bool,
    pub smooth: bool,
    pub accident_head: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            context_attn: true,
            object_attn: true,
            collision_3d: true,
            temporal_attn: true,
            smooth: true,
            accident_head: true,
        }
    }
}

impl Toggles {
    pub const NAMES: [&'static str; 6] = [
        "context_attn",
        "object_attn",
        "collision_3d",
        "temporal_attn",
        "smooth",
        "accident_head",
    ];

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "context_attn" => &mut self.context_attn,
            "object_attn" => &mut self.object_attn,
            "collision_3d" => &mut self.collision_3d,
            "temporal_attn" => &mut self.temporal_attn,
            "smooth" => &mut self.smooth,
            "accident_head" => &mut self.accident_head,
            other => {
                return Err(Error::Config(format!(
                    "unknown toggle '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = on;
        Ok(())
    }

    /// Parses `name=on|off`.
    pub fn apply(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("toggle '{spec}' must look like name=on|off")))?;
        let on = match value.trim() {
            "on" | "true" | "1" => true,
            "off" | "false" | "0" => false,
            v => {
                return Err(Error::Config(format!(
                    "toggle value '{v}' must be on or off"
                )))
            }
        };
        self.set(name.trim(), on)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-frame context and per-object feature dimension `D`.
    pub feature_dim: usize,
    pub context_hidden: usize,
    pub object_hidden: usize,
    pub graph_hidden: usize,
    pub temporal_hidden: usize,
    pub accident_hidden: usize,
    /// Hidden width of the two-layer frame head.
    pub head_hidden: usize,
    pub heads: usize,
    pub dropout: (f64, f64),
    pub graph_layers: usize,
    pub smooth_fields: Vec<usize>,
    pub smooth_mix: f64,
    pub toggles: Toggles,
    pub accident_input: AccidentInput,
    pub graph_mode: GraphMode,
    pub edge: EdgeWeightConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 4096,
            context_hidden: 512,
            object_hidden: 256,
            graph_hidden: 256,
            temporal_hidden: 512,
            accident_hidden: 32,
            head_hidden: 64,
            heads: 8,
            dropout: (0.5, 0.1),
            graph_layers: 2,
            smooth_fields: vec![20, 10, 5],
            smooth_mix: 0.15,
            toggles: Toggles::default(),
            accident_input: AccidentInput::Scores,
            graph_mode: GraphMode::ThreeD,
            edge: EdgeWeightConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("context_hidden", self.context_hidden),
            ("object_hidden", self.object_hidden),
            ("graph_hidden", self.graph_hidden),
            ("temporal_hidden", self.temporal_hidden),
            ("accident_hidden", self.accident_hidden),
            ("head_hidden", self.head_hidden),
            ("heads", self.heads),
            ("graph_layers", self.graph_layers),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be > 0")));
        }
        if self.feature_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "feature_dim {} is not divisible by {} heads",
                self.feature_dim, self.heads
            )));
        }
        if !(0.0..=1.0).contains(&self.smooth_mix) {
            return Err(Error::Config(format!(
                "smooth_mix {} outside [0, 1]",
                self.smooth_mix
            )));
        }
        let (p1, p2) = self.dropout;
        if !(0.0..1.0).contains(&p1) || !(0.0..1.0).contains(&p2) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.smooth_fields.is_empty() || self.smooth_fields.contains(&0) {
            return Err(Error::Config(
                "smooth_fields must be a non-empty list of positive frame counts".into(),
            ));
        }
        self.edge.validate()
    }

    /// Width of the fused per-frame feature `I_C ⊕ I_O ⊕ G`.
    pub fn fused_dim(&self) -> usize {
        self.context_hidden + self.object_hidden + self.graph_hidden
    }

    pub fn max_smooth_field(&self) -> usize {
        self.smooth_fields.iter().copied().max().unwrap_or(0)
    }
}
