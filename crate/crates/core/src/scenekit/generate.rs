use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    BoundingBox, Dataset, DatasetMeta, DepthMap, FrameObservation, GroundTruth, ScenarioKind,
    Splits, VideoSample,
};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Number of kinematic inputs to the appearance map:
/// `(x, y, vx, vy, w, h, 1)`.
const STATE_DIM: usize = 7;
const CONTEXT_STATE_DIM: usize = 4;
const MAX_ATTEMPTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_videos: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Object slots per frame (N).
    pub slots: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub accident_fraction: f64,
    /// Fraction of negatives that are parallax traps.
    pub trap_fraction: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub collision_radius: f64,
    /// Non-planted pairs stay at least this many radii apart.
    pub clearance_radii: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub background_depth: f64,
    /// Trap pairs stay at least this fraction of `max_depth - min_depth`
    /// apart in depth at every frame.
    pub trap_depth_gap: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_depth_speed: f64,
    pub min_half_size: f64,
    pub max_half_size: f64,
    /// Accident frame drawn uniformly from this fraction window of T.
    pub event_window: (f64, f64),
    pub train_fraction: f64,
    pub frame_rate: f64,
    /// Distractor depths start within this fraction of the depth range
    /// around the planted pair (or a random anchor in background scenes).
    pub distractor_depth_band: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_videos: 200,
            frames: 50,
            width: 96,
            height: 72,
            slots: 6,
            min_objects: 3,
            max_objects: 5,
            accident_fraction: 0.5,
            trap_fraction: 0.6,
            feature_dim: 16,
            noise: 0.05,
            seed: 7,
            collision_radius: 2.0,
            clearance_radii: 2.0,
            min_depth: 5.0,
            max_depth: 45.0,
            background_depth: 60.0,
            trap_depth_gap: 0.3,
            min_speed: 0.3,
            max_speed: 0.8,
            max_depth_speed: 0.05,
            min_half_size: 2.0,
            max_half_size: 4.0,
            event_window: (0.6, 0.9),
            train_fraction: 0.7,
            frame_rate: 20.0,
            distractor_depth_band: 0.15,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        for (name, v) in [
            ("accident_fraction", self.accident_fraction),
            ("trap_fraction", self.trap_fraction),
            ("train_fraction", self.train_fraction),
            ("trap_depth_gap", self.trap_depth_gap),
            ("distractor_depth_band", self.distractor_depth_band),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.num_videos == 0 {
            return bad("num_videos must be positive");
        }
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.slots == 0 || self.min_objects > self.max_objects || self.max_objects > self.slots {
            return bad("need 0 <= min_objects <= max_objects <= slots and slots > 0");
        }
        let planted = self.accident_fraction > 0.0 || self.trap_fraction > 0.0;
        if planted && self.max_objects < 2 {
            return bad("planted pairs need max_objects >= 2");
        }
        if !(self.min_half_size > 0.0 && self.min_half_size <= self.max_half_size) {
            return bad("need 0 < min_half_size <= max_half_size");
        }
        let span = 2.0 * self.max_half_size + 2.0;
        if span >= self.width as f64 || span >= self.height as f64 {
            return Err(Error::Config(format!(
                "objects cannot fit: boxes up to {span} px in a {}x{} image",
                self.width, self.height
            )));
        }
        if !(self.min_depth >= 0.0
            && self.min_depth < self.max_depth
            && self.max_depth < self.background_depth)
        {
            return bad("need 0 <= min_depth < max_depth < background_depth");
        }
        if self.collision_radius <= 0.0 || self.clearance_radii < 1.0 {
            return bad("collision_radius must be positive and clearance_radii >= 1");
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed)
            || self.max_depth_speed < 0.0
        {
            return bad("invalid speed range");
        }
        let (lo, hi) = self.event_window;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) || self.event_frames().0 > self.event_frames().1 {
            return bad("event_window must satisfy 0 < lo <= hi <= 1 and contain a frame");
        }
        if self.noise < 0.0 || self.frame_rate <= 0.0 {
            return bad("noise must be >= 0 and frame_rate > 0");
        }
        Ok(())
    }

    /// Inclusive 1-based range for the accident frame.
    pub fn event_frames(&self) -> (usize, usize) {
        let t = self.frames as f64;
        let lo = ((self.event_window.0 * t).ceil() as usize).max(1);
        let hi = ((self.event_window.1 * t).floor() as usize).min(self.frames);
        (lo, hi)
    }

    pub fn depth_range(&self) -> f64 {
        self.max_depth - self.min_depth
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            frames: self.frames,
            objects: self.slots,
            feature_dim: self.feature_dim,
            width: self.width,
            height: self.height,
            frame_rate: self.frame_rate,
        }
    }
}

/// Linear agent in world space; position at 0-based frame `t` is `p0 + v·t`.
#[derive(Debug, Clone, Copy)]
struct Agent {
    p0: [f64; 3],
    v: [f64; 3],
    half: [f64; 2],
}

impl Agent {
    fn at(&self, t: usize) -> [f64; 3] {
        let t = t as f64;
        [
            self.p0[0] + self.v[0] * t,
            self.p0[1] + self.v[1] * t,
            self.p0[2] + self.v[2] * t,
        ]
    }

    fn in_bounds(&self, cfg: &ScenarioConfig) -> bool {
        (0..cfg.frames).all(|t| {
            let p = self.at(t);
            p[0] - self.half[0] >= 0.0
                && p[0] + self.half[0] <= cfg.width as f64
                && p[1] - self.half[1] >= 0.0
                && p[1] + self.half[1] <= cfg.height as f64
                && p[2] >= cfg.min_depth
                && p[2] <= cfg.max_depth
        })
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn min_distance(a: &Agent, b: &Agent, frames: usize) -> f64 {
    (0..frames)
        .map(|t| dist3(a.at(t), b.at(t)))
        .fold(f64::INFINITY, f64::min)
}

/// Fixed random linear maps from kinematic state to features.
struct AppearanceMaps {
    object: Vec<f64>,
    context: Vec<f64>,
}

impl AppearanceMaps {
    fn new(cfg: &ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let obj_scale = Normal::new(0.0, 1.0 / (STATE_DIM as f64).sqrt()).unwrap();
        let ctx_scale = Normal::new(0.0, 1.0 / (CONTEXT_STATE_DIM as f64).sqrt()).unwrap();
        let object = (0..cfg.feature_dim * STATE_DIM)
            .map(|_| obj_scale.sample(&mut rng))
            .collect();
        let context = (0..cfg.feature_dim * CONTEXT_STATE_DIM)
            .map(|_| ctx_scale.sample(&mut rng))
            .collect();
        AppearanceMaps { object, context }
    }

    fn apply(map: &[f64], state: &[f64], noise: &mut impl FnMut() -> f64) -> Vec<f32> {
        map.chunks(state.len())
            .map(|row| (row.iter().zip(state).map(|(a, b)| a * b).sum::<f64>() + noise()) as f32)
            .collect()
    }
}

/// Generates `cfg.num_videos` samples plus a stratified train/test split.
/// Output depends only on `cfg`.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    generate_dataset_with(cfg, Execution::default())
}

pub fn generate_dataset_with(cfg: &ScenarioConfig, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let kinds = assign_kinds(cfg);
    let maps = AppearanceMaps::new(cfg);
    let samples: Vec<Result<VideoSample>> =
        exec.map_indexed(kinds.len(), |i| generate_video(cfg, &maps, i, kinds[i]));
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let splits = stratified_split(cfg, &kinds, &samples);
    Ok(Dataset {
        meta: cfg.meta(),
        samples,
        splits,
    })
}

fn assign_kinds(cfg: &ScenarioConfig) -> Vec<ScenarioKind> {
    let n = cfg.num_videos;
    let positives = ((n as f64) * cfg.accident_fraction).round() as usize;
    let traps = (((n - positives) as f64) * cfg.trap_fraction).round() as usize;
    let mut kinds: Vec<ScenarioKind> = std::iter::repeat_n(ScenarioKind::Collision, positives)
        .chain(std::iter::repeat_n(ScenarioKind::ParallaxTrap, traps))
        .chain(std::iter::repeat_n(
            ScenarioKind::Background,
            n - positives - traps,
        ))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    kinds.shuffle(&mut rng);
    kinds
}

fn stratified_split(
    cfg: &ScenarioConfig,
    kinds: &[ScenarioKind],
    samples: &[VideoSample],
) -> Splits {
    let mut splits = Splits::default();
    for kind in [
        ScenarioKind::Collision,
        ScenarioKind::ParallaxTrap,
        ScenarioKind::Background,
    ] {
        let idx: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == kind).collect();
        let n_train = ((idx.len() as f64) * cfg.train_fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            let id = samples[i].sample_id.clone();
            if k < n_train {
                splits.train.push(id);
            } else {
                splits.test.push(id);
            }
        }
    }
    splits.train.sort();
    splits.test.sort();
    splits
}

fn random_half(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> [f64; 2] {
    [
        rng.random_range(cfg.min_half_size..=cfg.max_half_size),
        rng.random_range(cfg.min_half_size..=cfg.max_half_size),
    ]
}

/// Two agents whose image-plane paths meet at 0-based frame `event`.
/// For collisions their depths meet too; for traps they stay apart.
fn planted_pair(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    event: usize,
    trap: bool,
) -> Result<(Agent, Agent)> {
    let range = cfg.depth_range();
    let gap_floor = cfg.trap_depth_gap * range;
    let e = event as f64;
    for _ in 0..MAX_ATTEMPTS {
        let margin = cfg.max_half_size + 1.0;
        let mx = rng.random_range(margin..cfg.width as f64 - margin);
        let my = rng.random_range(margin..cfg.height as f64 - margin);
        let za = rng.random_range(cfg.min_depth..=cfg.max_depth);
        let zb = if trap {
            let gap =
                rng.random_range(gap_floor..=(2.0 * gap_floor).max(gap_floor + 1.0).min(range));
            if rng.random_bool(0.5) {
                za + gap
            } else {
                za - gap
            }
        } else {
            za + rng.random_range(-0.5..=0.5)
        };
        if !(cfg.min_depth..=cfg.max_depth).contains(&zb) {
            continue;
        }
        // Image-plane offset at the event, same law for both kinds.
        let r = 0.5 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (ox, oy) = (r * phi.cos(), r * phi.sin());

        let theta_a = rng.random_range(0.0..std::f64::consts::TAU);
        let sep = rng.random_range(std::f64::consts::FRAC_PI_3..=std::f64::consts::PI);
        let theta_b = theta_a + if rng.random_bool(0.5) { sep } else { -sep };
        let sa = rng.random_range(cfg.min_speed..=cfg.max_speed);
        let sb = rng.random_range(cfg.min_speed..=cfg.max_speed);
        let va = [
            sa * theta_a.cos(),
            sa * theta_a.sin(),
            rng.random_range(-cfg.max_depth_speed..=cfg.max_depth_speed),
        ];
        let vb = [
            sb * theta_b.cos(),
            sb * theta_b.sin(),
            rng.random_range(-cfg.max_depth_speed..=cfg.max_depth_speed),
        ];

        let at_event_a = [mx, my, za];
        let at_event_b = [mx + ox, my + oy, zb];
        let a = Agent {
            p0: [
                at_event_a[0] - va[0] * e,
                at_event_a[1] - va[1] * e,
                at_event_a[2] - va[2] * e,
            ],
            v: va,
            half: random_half(cfg, rng),
        };
        let b = Agent {
            p0: [
                at_event_b[0] - vb[0] * e,
                at_event_b[1] - vb[1] * e,
                at_event_b[2] - vb[2] * e,
            ],
            v: vb,
            half: random_half(cfg, rng),
        };
        if !a.in_bounds(cfg) || !b.in_bounds(cfg) {
            continue;
        }
        if trap {
            let apart = (0..cfg.frames).all(|t| (a.at(t)[2] - b.at(t)[2]).abs() >= gap_floor);
            if !apart {
                continue;
            }
        } else if dist3(a.at(event), b.at(event)) >= cfg.collision_radius {
            continue;
        }
        return Ok((a, b));
    }
    Err(Error::Config(
        "objects cannot fit: failed to place a planted pair inside the image".into(),
    ))
}

fn distractor(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    others: &[Agent],
    anchor: f64,
) -> Result<Agent> {
    let clearance = cfg.clearance_radii * cfg.collision_radius;
    let reach = 0.5 * cfg.distractor_depth_band * cfg.depth_range();
    let (zlo, zhi) = (
        (anchor - reach).max(cfg.min_depth),
        (anchor + reach).min(cfg.max_depth),
    );
    for _ in 0..MAX_ATTEMPTS {
        let half = random_half(cfg, rng);
        let p0 = [
            rng.random_range(half[0]..=cfg.width as f64 - half[0]),
            rng.random_range(half[1]..=cfg.height as f64 - half[1]),
            rng.random_range(zlo..=zhi),
        ];
        let speed = rng.random_range(0.0..=cfg.max_speed);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let v = [
            speed * theta.cos(),
            speed * theta.sin(),
            rng.random_range(-cfg.max_depth_speed..=cfg.max_depth_speed),
        ];
        let agent = Agent { p0, v, half };
        if agent.in_bounds(cfg)
            && others
                .iter()
                .all(|o| min_distance(&agent, o, cfg.frames) >= clearance)
        {
            return Ok(agent);
        }
    }
    Err(Error::Config(
        "objects cannot fit: failed to place a distractor with the required clearance".into(),
    ))
}

fn generate_video(
    cfg: &ScenarioConfig,
    maps: &AppearanceMaps,
    index: usize,
    kind: ScenarioKind,
) -> Result<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);

    let planted = kind != ScenarioKind::Background;
    let lo = if planted {
        cfg.min_objects.max(2)
    } else {
        cfg.min_objects
    };
    let count = rng.random_range(lo..=cfg.max_objects.max(lo));
    let (elo, ehi) = cfg.event_frames();
    let event_frame = rng.random_range(elo..=ehi);

    let mut agents = Vec::with_capacity(count);
    if planted {
        let (a, b) = planted_pair(
            cfg,
            &mut rng,
            event_frame - 1,
            kind == ScenarioKind::ParallaxTrap,
        )?;
        agents.push(a);
        agents.push(b);
    }
    let anchor = match agents.first() {
        Some(a) => a.p0[2].clamp(cfg.min_depth, cfg.max_depth),
        None => rng.random_range(cfg.min_depth..=cfg.max_depth),
    };
    while agents.len() < count {
        let d = distractor(cfg, &mut rng, &agents, anchor)?;
        agents.push(d);
    }

    let mut slots: Vec<usize> = (0..count).collect();
    slots.shuffle(&mut rng);
    // slots[k] = slot index for agent k
    let pair = planted.then(|| (slots[0].min(slots[1]), slots[0].max(slots[1])));
    let mut by_slot: Vec<Option<Agent>> = vec![None; cfg.slots];
    for (k, &s) in slots.iter().enumerate() {
        by_slot[s] = Some(agents[k]);
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let scene: Vec<f64> = (0..CONTEXT_STATE_DIM - 1)
        .map(|_| normal.sample(&mut rng))
        .chain([1.0])
        .collect();
    let noise_sd = cfg.noise;
    let mut noise = || noise_sd * normal.sample(&mut rng);

    let d = cfg.feature_dim;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut positions = Vec::with_capacity(cfg.frames * cfg.slots);
    for t in 0..cfg.frames {
        let context = AppearanceMaps::apply(&maps.context, &scene, &mut noise);
        let mut objects = vec![0.0f32; cfg.slots * d];
        let mut boxes = vec![BoundingBox::SENTINEL; cfg.slots];
        let mut mask = vec![false; cfg.slots];
        for (s, agent) in by_slot.iter().enumerate() {
            let Some(agent) = agent else {
                positions.push([0.0; 3]);
                continue;
            };
            let p = agent.at(t);
            positions.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            let b = BoundingBox::new(
                (p[0] - agent.half[0]) as f32,
                (p[1] - agent.half[1]) as f32,
                (p[0] + agent.half[0]) as f32,
                (p[1] + agent.half[1]) as f32,
            );
            boxes[s] = b;
            mask[s] = true;
            let state = [
                2.0 * p[0] / cfg.width as f64 - 1.0,
                2.0 * p[1] / cfg.height as f64 - 1.0,
                agent.v[0],
                agent.v[1],
                4.0 * agent.half[0] / cfg.width as f64,
                4.0 * agent.half[1] / cfg.height as f64,
                1.0,
            ];
            let f = AppearanceMaps::apply(&maps.object, &state, &mut noise);
            objects[s * d..(s + 1) * d].copy_from_slice(&f);
        }
        let depth = render_depth(cfg, &boxes, &by_slot, t);
        frames.push(FrameObservation {
            context,
            objects,
            boxes,
            mask,
            depth: Some(depth),
        });
    }

    let label = kind == ScenarioKind::Collision;
    Ok(VideoSample {
        sample_id: format!("v{index:05}"),
        frames,
        label,
        accident_frame: if label { event_frame } else { 0 },
        truth: Some(GroundTruth {
            kind,
            pair,
            positions,
        }),
    })
}

/// Painter's algorithm: far boxes first, near boxes overwrite.
fn render_depth(
    cfg: &ScenarioConfig,
    boxes: &[BoundingBox],
    agents: &[Option<Agent>],
    t: usize,
) -> DepthMap {
    let mut depth = DepthMap::uniform(cfg.width, cfg.height, cfg.background_depth as f32);
    let mut order: Vec<(usize, f64)> = agents
        .iter()
        .enumerate()
        .filter_map(|(s, a)| a.map(|a| (s, a.at(t)[2])))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (s, z) in order {
        let b = boxes[s];
        let x0 = (b.x1.ceil().max(0.0)) as usize;
        let x1 = (b.x2.floor() as usize).min(cfg.width - 1);
        let y0 = (b.y1.ceil().max(0.0)) as usize;
        let y1 = (b.y2.floor() as usize).min(cfg.height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                depth.set(x, y, z as f32);
            }
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_videos: 24,
            frames: 40,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset_with(&small(), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let other = generate_dataset(&ScenarioConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(
            a.samples[0].frames[0].context,
            other.samples[0].frames[0].context
        );
    }

    #[test]
    fn labels_match_geometry() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        let n = cfg.slots;
        for s in &ds.samples {
            s.validate().unwrap();
            let truth = s.truth.as_ref().unwrap();
            let present: Vec<usize> = s.frames[0].present().collect();
            let mut min_any = f64::INFINITY;
            for (ai, &i) in present.iter().enumerate() {
                for &j in &present[ai + 1..] {
                    for t in 0..cfg.frames {
                        let (p, q) = (truth.position(t, i, n), truth.position(t, j, n));
                        let d = dist3(p.map(f64::from), q.map(f64::from));
                        if Some((i, j)) != truth.pair || truth.kind != ScenarioKind::Collision {
                            assert!(
                                d >= cfg.collision_radius - 1e-4,
                                "{}: pair ({i},{j}) at {t} d={d}",
                                s.sample_id
                            );
                        }
                        min_any = min_any.min(d);
                    }
                }
            }
            if s.label {
                let (i, j) = truth.pair.unwrap();
                let t = s.accident_frame - 1;
                let d = dist3(
                    truth.position(t, i, n).map(f64::from),
                    truth.position(t, j, n).map(f64::from),
                );
                assert!(d < cfg.collision_radius);
            } else {
                assert!(min_any >= cfg.collision_radius - 1e-4);
            }
        }
    }

    #[test]
    fn traps_are_close_in_pixels_and_far_in_depth() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        let n = cfg.slots;
        let traps: Vec<_> = ds
            .samples
            .iter()
            .filter(|s| s.truth.as_ref().unwrap().kind == ScenarioKind::ParallaxTrap)
            .collect();
        assert!(!traps.is_empty());
        for s in traps {
            let truth = s.truth.as_ref().unwrap();
            let (i, j) = truth.pair.unwrap();
            assert!(!s.label);
            assert_eq!(s.accident_frame, 0);
            let mut min2d = f64::INFINITY;
            for t in 0..cfg.frames {
                let (p, q) = (truth.position(t, i, n), truth.position(t, j, n));
                let d2 = (((p[0] - q[0]) as f64).powi(2) + ((p[1] - q[1]) as f64).powi(2)).sqrt();
                min2d = min2d.min(d2);
                assert!(
                    ((p[2] - q[2]) as f64).abs() >= cfg.trap_depth_gap * cfg.depth_range() - 1e-3
                );
            }
            assert!(min2d <= 5.0, "trap {} min 2D distance {min2d}", s.sample_id);
        }
    }

    #[test]
    fn padded_slots_follow_convention() {
        let ds = generate_dataset(&small()).unwrap();
        for s in &ds.samples {
            for f in &s.frames {
                for slot in 0..f.num_slots() {
                    if f.mask[slot] {
                        f.boxes[slot].validate(96, 72).unwrap();
                    } else {
                        assert!(f.boxes[slot].is_sentinel());
                        assert!(f.object(slot).iter().all(|&x| x == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn nearer_boxes_occlude() {
        let ds = generate_dataset(&small()).unwrap();
        let s = &ds.samples[0];
        let truth = s.truth.as_ref().unwrap();
        let f = &s.frames[0];
        let depth = f.depth.as_ref().unwrap();
        for x in 0..depth.width {
            for y in 0..depth.height {
                let covering: Vec<f32> = f
                    .present()
                    .filter(|&k| {
                        let b = f.boxes[k];
                        (x as f32) >= b.x1
                            && (x as f32) <= b.x2
                            && (y as f32) >= b.y1
                            && (y as f32) <= b.y2
                    })
                    .map(|k| truth.position(0, k, f.num_slots())[2])
                    .collect();
                let expect = covering.iter().cloned().fold(60.0f32, f32::min);
                assert_eq!(depth.at(x, y), expect);
            }
        }
    }

    #[test]
    fn rejects_objects_that_cannot_fit() {
        let cfg = ScenarioConfig {
            width: 12,
            height: 12,
            ..small()
        };
        assert!(
            matches!(generate_dataset(&cfg), Err(Error::Config(m)) if m.contains("cannot fit"))
        );
    }

    #[test]
    fn split_is_stratified_and_complete() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.splits.train.len() + ds.splits.test.len(), cfg.num_videos);
        let positives_train = ds
            .split("train")
            .unwrap()
            .iter()
            .filter(|s| s.label)
            .count();
        assert_eq!(positives_train, 8); // round(12 * 0.7)
    }
}
