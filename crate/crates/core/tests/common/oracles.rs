//! Reference implementations written directly from the definitions, with no
//! shared code paths into the library.

use dashrisk::scenekit::{BoundingBox, DepthMap, FrameObservation};
use rand::Rng;

pub const WIDTH: usize = 96;
pub const HEIGHT: usize = 72;

/// Collision weights for one frame: lift, difference, mix, softmax.
pub fn collision_weights(
    frame: &FrameObservation,
    prev: Option<&FrameObservation>,
    use_depth: bool,
    alpha: (f64, f64),
    scaling: [f64; 3],
    eps: f64,
) -> Vec<Vec<f64>> {
    let n = frame.boxes.len();
    let lift = |f: &FrameObservation, s: usize| -> Option<[f64; 3]> {
        if !f.mask[s] {
            return None;
        }
        let b = f.boxes[s];
        let cx = (b.x1 as f64 + b.x2 as f64) * 0.5;
        let cy = (b.y1 as f64 + b.y2 as f64) * 0.5;
        let z = if use_depth {
            let d = f.depth.as_ref().unwrap();
            let (px, py) = (cx.round() as usize, cy.round() as usize);
            d.values[py * d.width + px] as f64
        } else {
            0.0
        };
        Some([cx, cy, z])
    };
    let pos: Vec<Option<[f64; 3]>> = (0..n).map(|s| lift(frame, s)).collect();
    let vel: Vec<[f64; 3]> = (0..n)
        .map(|s| match (pos[s], prev.and_then(|p| lift(p, s))) {
            (Some(a), Some(b)) => [a[0] - b[0], a[1] - b[1], a[2] - b[2]],
            _ => [0.0; 3],
        })
        .collect();
    let dir = |v: [f64; 3]| {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() + eps;
        [v[0] / norm, v[1] / norm, v[2] / norm]
    };

    let mut q = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if let (true, Some(a), Some(b)) = (i != j, pos[i], pos[j]) {
                let mut d = 0.0;
                for k in 0..3 {
                    d += (scaling[k] * a[k] - scaling[k] * b[k]).powi(2);
                }
                let (ui, uj) = (dir(vel[i]), dir(vel[j]));
                let m =
                    ((ui[0] - uj[0]).powi(2) + (ui[1] - uj[1]).powi(2) + (ui[2] - uj[2]).powi(2))
                        .sqrt();
                q[i][j] = Some(alpha.0 * d + alpha.1 * m);
            }
        }
    }
    let top = q
        .iter()
        .flatten()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = q.iter().flatten().flatten().map(|v| (v - top).exp()).sum();
    q.iter()
        .map(|row| {
            row.iter()
                .map(|v| v.map_or(0.0, |v| (v - top).exp() / z))
                .collect()
        })
        .collect()
}

fn random_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let w = rng.random_range(2.0..30.0f32);
    let h = rng.random_range(2.0..24.0f32);
    let x1 = rng.random_range(0.0..(WIDTH as f32 - w));
    let y1 = rng.random_range(0.0..(HEIGHT as f32 - h));
    BoundingBox::new(x1, y1, x1 + w, y1 + h)
}

/// A frame with up to `slots` randomly placed objects and a random depth
/// map (`None` for constant-depth frames uses `depth_value`).
pub fn random_frame<R: Rng>(
    rng: &mut R,
    slots: usize,
    depth_value: Option<f32>,
) -> FrameObservation {
    let depth = match depth_value {
        Some(v) => DepthMap::uniform(WIDTH, HEIGHT, v),
        None => DepthMap {
            width: WIDTH,
            height: HEIGHT,
            values: (0..WIDTH * HEIGHT)
                .map(|_| rng.random_range(1.0..40.0f32))
                .collect(),
        },
    };
    let mut mask: Vec<bool> = (0..slots).map(|_| rng.random_bool(0.7)).collect();
    if rng.random_bool(0.8) {
        mask[0] = true;
        mask[slots - 1] = true;
    }
    let boxes = mask
        .iter()
        .map(|&m| {
            if m {
                random_box(rng)
            } else {
                BoundingBox::SENTINEL
            }
        })
        .collect();
    FrameObservation {
        context: vec![0.0; 2],
        objects: vec![0.0; slots * 2],
        boxes,
        mask,
        depth: Some(depth),
    }
}

/// A follow-up frame: present objects drift a few pixels, some vanish,
/// some appear, and depth is redrawn the same way as the first frame.
pub fn next_frame<R: Rng>(
    rng: &mut R,
    prev: &FrameObservation,
    depth_value: Option<f32>,
) -> FrameObservation {
    let mut f = random_frame(rng, prev.boxes.len(), depth_value);
    for s in 0..prev.boxes.len() {
        if prev.mask[s] && rng.random_bool(0.85) {
            let b = prev.boxes[s];
            let dx = rng
                .random_range(-3.0..3.0f32)
                .clamp(-b.x1, WIDTH as f32 - b.x2);
            let dy = rng
                .random_range(-3.0..3.0f32)
                .clamp(-b.y1, HEIGHT as f32 - b.y2);
            f.boxes[s] = BoundingBox::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy);
            f.mask[s] = true;
        }
    }
    f
}

/// Area under the PR curve by sweeping every distinct score as a threshold.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for th in thresholds {
        let flagged: Vec<bool> = scores
            .iter()
            .zip(labels)
            .filter(|(s, _)| **s >= th)
            .map(|(_, &l)| l)
            .collect();
        let tp = flagged.iter().filter(|&&l| l).count() as f64;
        let recall = tp / positives;
        let precision = tp / flagged.len() as f64;
        ap += (recall - last_recall) * precision;
        last_recall = recall;
    }
    ap
}

/// Fraction of (positive, negative) pairs ranked correctly, ties worth half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Mean over thresholds `k/100`, `k = 1..=99`, of the mean lead time of
/// positive videos; missed or late detections count as zero.
pub fn enumerated_mtta(curves: &[Vec<f64>], taus: &[usize], labels: &[bool], fps: f64) -> f64 {
    let mut over_thresholds = 0.0;
    for k in 1..=99 {
        let th = k as f64 / 100.0;
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in 0..curves.len() {
            if !labels[v] {
                continue;
            }
            count += 1;
            let mut lead = 0.0;
            for (i, &s) in curves[v].iter().enumerate() {
                if s >= th {
                    if i + 1 < taus[v] {
                        lead = (taus[v] - (i + 1)) as f64 / fps;
                    }
                    break;
                }
            }
            sum += lead;
        }
        over_thresholds += sum / count as f64;
    }
    over_thresholds / 99.0
}

/// `(1/V) Σ_v Σ_t BCE(s_t, l_v)`.
pub fn frame_cross_entropy(curves: &[Vec<f64>], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for (c, &l) in curves.iter().zip(labels) {
        for &s in c {
            total += if l { -s.ln() } else { -(1.0 - s).ln() };
        }
    }
    total / curves.len() as f64
}
