//! Dataset directory layout.
//!
//! ```text
//! <dir>/manifest.json      shapes, section list, per-sample metadata
//! <dir>/splits.json        {"train": [ids], "test": [ids]}
//! <dir>/records/<id>.bin   little-endian f32 stream
//! ```
//!
//! A record holds, for each frame in order, the sections listed in the
//! manifest among `context[D]`, `objects[N*D]`, `boxes[N*4]`
//! (`x1,y1,x2,y2`), `mask[N]` (0 or 1) and `depth[Y*X]` (row-major). An
//! optional `truth[T*N*3]` block (`cx,cy,z` per frame and slot) follows the
//! last frame. Precomputed-feature archives use the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    BoundingBox, Dataset, DatasetMeta, DepthMap, FrameObservation, GroundTruth, ScenarioKind,
    VideoSample,
};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const SPLITS: &str = "splits.json";
const RECORDS: &str = "records";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Context,
    Objects,
    Boxes,
    Mask,
    Depth,
    Truth,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub file: String,
    pub label: u8,
    pub accident_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScenarioKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub frames: usize,
    pub objects: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub num_samples: usize,
    pub num_positive: usize,
    pub sections: Vec<Section>,
    pub field_order: String,
    pub samples: Vec<ManifestSample>,
}

impl Manifest {
    fn has(&self, s: Section) -> bool {
        self.sections.contains(&s)
    }

    fn frame_floats(&self) -> usize {
        let (n, d) = (self.objects, self.feature_dim);
        self.sections
            .iter()
            .map(|s| match s {
                Section::Context => d,
                Section::Objects => n * d,
                Section::Boxes => n * 4,
                Section::Mask => n,
                Section::Depth => self.width * self.height,
                Section::Truth => 0,
            })
            .sum()
    }

    fn trailer_floats(&self) -> usize {
        if self.has(Section::Truth) {
            self.frames * self.objects * 3
        } else {
            0
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            frames: self.frames,
            objects: self.objects,
            feature_dim: self.feature_dim,
            width: self.width,
            height: self.height,
            frame_rate: self.frame_rate,
        }
    }
}

fn field_order_doc() -> String {
    "little-endian f32; per frame in section order: context[D], objects[N*D] (slot-major), \
     boxes[N*4] (x1,y1,x2,y2), mask[N] (0/1), depth[Y*X] (row-major); then truth[T*N*3] (cx,cy,z)"
        .to_string()
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let meta = dataset.meta;
    let records = dir.join(RECORDS);
    fs::create_dir_all(&records).map_err(|e| Error::io(&records, e))?;

    let with_depth = dataset.samples.iter().all(VideoSample::has_depth);
    let with_truth = dataset.samples.iter().all(|s| s.truth.is_some());
    let mut sections = vec![
        Section::Context,
        Section::Objects,
        Section::Boxes,
        Section::Mask,
    ];
    if with_depth {
        sections.push(Section::Depth);
    }
    if with_truth {
        sections.push(Section::Truth);
    }

    let mut entries = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        check_shapes(s, &meta)?;
        let file = format!("{RECORDS}/{}.bin", s.sample_id);
        let path = dir.join(&file);
        let bytes = encode_record(s, &sections);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestSample {
            id: s.sample_id.clone(),
            file,
            label: s.label as u8,
            accident_frame: s.accident_frame,
            kind: s.truth.as_ref().map(|t| t.kind),
            pair: s.truth.as_ref().and_then(|t| t.pair),
        });
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        frames: meta.frames,
        objects: meta.objects,
        feature_dim: meta.feature_dim,
        width: meta.width,
        height: meta.height,
        frame_rate: meta.frame_rate,
        num_samples: dataset.samples.len(),
        num_positive: dataset.samples.iter().filter(|s| s.label).count(),
        sections,
        field_order: field_order_doc(),
        samples: entries,
    };
    let manifest_path = dir.join(MANIFEST);
    write_json(&manifest_path, &manifest)?;
    write_json(&dir.join(SPLITS), &dataset.splits)?;
    Ok(manifest_path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_shapes(s: &VideoSample, meta: &DatasetMeta) -> Result<()> {
    if s.frames.len() != meta.frames {
        return Err(Error::Shape(format!(
            "{}: {} frames, dataset declares {}",
            s.sample_id,
            s.frames.len(),
            meta.frames
        )));
    }
    for f in &s.frames {
        let ok = f.context.len() == meta.feature_dim
            && f.objects.len() == meta.objects * meta.feature_dim
            && f.boxes.len() == meta.objects
            && f.mask.len() == meta.objects
            && f.depth
                .as_ref()
                .is_none_or(|d| d.width == meta.width && d.height == meta.height);
        if !ok {
            return Err(Error::Shape(format!(
                "{}: frame shapes disagree with dataset meta",
                s.sample_id
            )));
        }
    }
    Ok(())
}

fn encode_record(s: &VideoSample, sections: &[Section]) -> Vec<u8> {
    let mut out: Vec<f32> = Vec::new();
    for f in &s.frames {
        for sec in sections {
            match sec {
                Section::Context => out.extend_from_slice(&f.context),
                Section::Objects => out.extend_from_slice(&f.objects),
                Section::Boxes => {
                    for b in &f.boxes {
                        out.extend_from_slice(&[b.x1, b.y1, b.x2, b.y2]);
                    }
                }
                Section::Mask => out.extend(f.mask.iter().map(|&m| if m { 1.0 } else { 0.0 })),
                Section::Depth => {
                    out.extend_from_slice(&f.depth.as_ref().expect("depth checked").values)
                }
                Section::Truth => {}
            }
        }
    }
    if sections.contains(&Section::Truth) {
        let truth = s.truth.as_ref().expect("truth checked");
        for p in &truth.positions {
            out.extend_from_slice(p);
        }
    }
    out.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema {
            path,
            expected: format!("schema_version {SCHEMA_VERSION}"),
            found: format!("schema_version {}", m.schema_version),
        });
    }
    for required in [Section::Context, Section::Objects, Section::Boxes] {
        if !m.has(required) {
            return Err(Error::Schema {
                path,
                expected: format!("section {required:?}"),
                found: format!("sections {:?}", m.sections),
            });
        }
    }
    Ok(m)
}

fn decode_record(dir: &Path, m: &Manifest, entry: &ManifestSample) -> Result<VideoSample> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Corrupt {
            path,
            reason: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let per_frame = m.frame_floats();
    let trailer = m.trailer_floats();
    let expected = per_frame * m.frames + trailer;
    if floats.len() != expected {
        let body = floats.len().saturating_sub(trailer);
        let found = if per_frame > 0 && body % per_frame == 0 {
            format!("{} frames", body / per_frame)
        } else {
            format!("{} floats", floats.len())
        };
        return Err(Error::Schema {
            path,
            expected: format!("{} frames ({expected} floats)", m.frames),
            found,
        });
    }
    if let Some(i) = floats.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corrupt {
            path,
            reason: format!("non-finite value at float {i}"),
        });
    }

    let (n, d) = (m.objects, m.feature_dim);
    let mut cursor = 0usize;
    let mut take = |k: usize| {
        let s = &floats[cursor..cursor + k];
        cursor += k;
        s
    };
    let mut frames = Vec::with_capacity(m.frames);
    for _ in 0..m.frames {
        let mut f = FrameObservation {
            context: Vec::new(),
            objects: Vec::new(),
            boxes: Vec::new(),
            mask: Vec::new(),
            depth: None,
        };
        let mut explicit_mask = None;
        for sec in &m.sections {
            match sec {
                Section::Context => f.context = take(d).to_vec(),
                Section::Objects => f.objects = take(n * d).to_vec(),
                Section::Boxes => {
                    f.boxes = take(n * 4)
                        .chunks_exact(4)
                        .map(|c| BoundingBox::new(c[0], c[1], c[2], c[3]))
                        .collect()
                }
                Section::Mask => {
                    let raw = take(n);
                    if raw.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::Corrupt {
                            path,
                            reason: "mask entries must be 0 or 1".into(),
                        });
                    }
                    explicit_mask = Some(raw.iter().map(|&v| v == 1.0).collect());
                }
                Section::Depth => {
                    let values = take(m.width * m.height).to_vec();
                    if values.iter().any(|&v| v < 0.0) {
                        return Err(Error::Corrupt {
                            path,
                            reason: "negative depth".into(),
                        });
                    }
                    f.depth = Some(DepthMap {
                        width: m.width,
                        height: m.height,
                        values,
                    });
                }
                Section::Truth => {}
            }
        }
        // Without an explicit mask, all-zero feature rows mark absent slots.
        f.mask = explicit_mask.unwrap_or_else(|| {
            f.objects
                .chunks_exact(d)
                .map(|row| row.iter().any(|&v| v != 0.0))
                .collect()
        });
        frames.push(f);
    }
    let truth = if m.has(Section::Truth) {
        let raw = take(trailer);
        Some(GroundTruth {
            kind: entry.kind.unwrap_or(if entry.label == 1 {
                ScenarioKind::Collision
            } else {
                ScenarioKind::Background
            }),
            pair: entry.pair,
            positions: raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    } else {
        None
    };

    let sample = VideoSample {
        sample_id: entry.id.clone(),
        frames,
        label: entry.label == 1,
        accident_frame: entry.accident_frame,
        truth,
    };
    if entry.label > 1 {
        return Err(Error::Corrupt {
            path,
            reason: format!("label {} is not binary", entry.label),
        });
    }
    sample.validate().map_err(|e| Error::Corrupt {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    Ok(sample)
}

fn read_splits(dir: &Path, samples: &[VideoSample]) -> Result<Splits> {
    let path = dir.join(SPLITS);
    if !path.is_file() {
        // Archives without a split file are treated as all-test.
        return Ok(Splits {
            train: Vec::new(),
            test: samples.iter().map(|s| s.sample_id.clone()).collect(),
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

fn load_with(dir: &Path, m: Manifest) -> Result<Dataset> {
    if m.samples.len() != m.num_samples {
        return Err(Error::Schema {
            path: dir.join(MANIFEST),
            expected: format!("{} sample entries", m.num_samples),
            found: format!("{}", m.samples.len()),
        });
    }
    let samples = m
        .samples
        .iter()
        .map(|e| decode_record(dir, &m, e))
        .collect::<Result<Vec<_>>>()?;
    let splits = read_splits(dir, &samples)?;
    Ok(Dataset {
        meta: m.meta(),
        samples,
        splits,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    load_with(dir, m)
}

/// Shapes an ingested archive must declare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchiveSchema {
    pub frames: usize,
    pub objects: usize,
    pub feature_dim: usize,
    /// `Some(true)` requires depth, `Some(false)` forbids it.
    pub depth: Option<bool>,
}

impl ArchiveSchema {
    /// 100 frames, 19 object slots, 4096-dim appearance features.
    pub const DAD: ArchiveSchema = ArchiveSchema {
        frames: 100,
        objects: 19,
        feature_dim: 4096,
        depth: None,
    };
}

/// Loads a precomputed-feature archive after checking its declared shapes.
/// Archives without a depth section yield depth-free samples.
pub fn ingest_precomputed(dir: &Path, schema: &ArchiveSchema) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let has_depth = m.has(Section::Depth);
    let found = (m.frames, m.objects, m.feature_dim);
    let want = (schema.frames, schema.objects, schema.feature_dim);
    let depth_ok = schema.depth.is_none_or(|d| d == has_depth);
    if found != want || !depth_ok {
        return Err(Error::Schema {
            path: dir.join(MANIFEST),
            expected: format!(
                "T={} N={} D={}{}",
                want.0,
                want.1,
                want.2,
                schema
                    .depth
                    .map(|d| format!(" depth={d}"))
                    .unwrap_or_default()
            ),
            found: format!(
                "T={} N={} D={} depth={has_depth}",
                found.0, found.1, found.2
            ),
        });
    }
    load_with(dir, m)
}
