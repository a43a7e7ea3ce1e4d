//! Synthetic labelled dashcam scenarios and the on-disk dataset format.
//!
//! A scenario places a handful of box-shaped agents in a pixel×pixel×depth
//! world, moves them linearly, and renders per-frame boxes, depth maps and
//! noisy appearance features. Positives contain a planted pair whose 3D
//! trajectories meet at the accident frame; "parallax traps" are negatives
//! whose planted pair meets only in the image plane.

mod generate;
mod io;

pub use generate::{generate_dataset, generate_dataset_with, ScenarioConfig};
pub use io::{
    ingest_precomputed, load_dataset, save_dataset, ArchiveSchema, Manifest, ManifestSample,
    Section, Splits, SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-space box, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoundingBox {
    /// Marker stored in padded object slots.
    pub const SENTINEL: BoundingBox = BoundingBox {
        x1: -1.0,
        y1: -1.0,
        x2: -1.0,
        y2: -1.0,
    };

    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn is_sentinel(&self) -> bool {
        *self == Self::SENTINEL
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.x1 < self.x2
            && self.y1 < self.y2
            && self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= width as f32
            && self.y2 <= height as f32;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "box {self:?} is not a valid box inside {width}x{height}"
            )))
        }
    }
}

/// Per-frame depth grid, row-major (`values[y * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn uniform(width: usize, height: usize, v: f32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.values[y * self.width + x] = v;
    }
}

/// Everything observed in one frame. Object slots are fixed-size; padded
/// slots carry zero features, [`BoundingBox::SENTINEL`] and `mask = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub context: Vec<f32>,
    /// `N × D`, row-major by slot.
    pub objects: Vec<f32>,
    pub boxes: Vec<BoundingBox>,
    pub mask: Vec<bool>,
    pub depth: Option<DepthMap>,
}

impl FrameObservation {
    pub fn num_slots(&self) -> usize {
        self.boxes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.context.len()
    }

    pub fn object(&self, slot: usize) -> &[f32] {
        let d = self.feature_dim();
        &self.objects[slot * d..(slot + 1) * d]
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Collision,
    ParallaxTrap,
    Background,
}

/// Generator-side truth: world position `(cx, cy, z)` per frame and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: ScenarioKind,
    /// Slots of the planted pair (collision or trap).
    pub pair: Option<(usize, usize)>,
    /// `T × N` positions, row-major by frame.
    pub positions: Vec<[f32; 3]>,
}

impl GroundTruth {
    pub fn position(&self, frame: usize, slot: usize, slots: usize) -> [f32; 3] {
        self.positions[frame * slots + slot]
    }
}

/// One labelled clip. `accident_frame` is 1-based and 0 for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub sample_id: String,
    pub frames: Vec<FrameObservation>,
    pub label: bool,
    pub accident_frame: usize,
    pub truth: Option<GroundTruth>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn has_depth(&self) -> bool {
        self.frames.iter().all(|f| f.depth.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames.len();
        if t == 0 {
            return Err(Error::Invalid(format!("{}: no frames", self.sample_id)));
        }
        if self.label && !(1..=t).contains(&self.accident_frame) {
            return Err(Error::Invalid(format!(
                "{}: positive with accident frame {} outside 1..={t}",
                self.sample_id, self.accident_frame
            )));
        }
        if !self.label && self.accident_frame != 0 {
            return Err(Error::Invalid(format!(
                "{}: negative must have accident frame 0",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// Shapes shared by every sample in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frames: usize,
    pub objects: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<VideoSample>,
    pub splits: Splits,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<Vec<&VideoSample>> {
        let ids = match name {
            "train" => &self.splits.train,
            "test" => &self.splits.test,
            "all" => return Ok(self.samples.iter().collect()),
            other => return Err(Error::Invalid(format!("unknown split '{other}'"))),
        };
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Invalid(format!("split lists unknown sample '{id}'")))
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&VideoSample> {
        self.samples.iter().find(|s| s.sample_id == id)
    }
}
