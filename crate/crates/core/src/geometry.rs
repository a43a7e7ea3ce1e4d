//! Depth lifting and collision-graph construction.
//!
//! Each detected object becomes a point `(cx, cy, z)`: its box centre in
//! pixels plus the depth sampled at that centre. Pairs are weighted by a
//! mix of squared distance and motion-direction divergence, and the weights
//! of all present pairs are softmax-normalised per frame.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::scenekit::{BoundingBox, DepthMap, FrameObservation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub cx: f64,
    pub cy: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(cx: f64, cy: f64, z: f64) -> Self {
        Point3D { cx, cy, z }
    }

    fn coords(&self) -> [f64; 3] {
        [self.cx, self.cy, self.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// `‖a − b‖²`
    #[default]
    Squared,
    /// `‖a − b‖`
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeWeightConfig {
    pub alpha_d: f64,
    pub alpha_m: f64,
    /// Per-axis multipliers applied before the distance norm.
    pub coordinate_scaling: [f64; 3],
    pub epsilon: f64,
    pub distance: DistanceKind,
}

impl Default for EdgeWeightConfig {
    fn default() -> Self {
        EdgeWeightConfig {
            alpha_d: 0.6,
            alpha_m: 0.4,
            coordinate_scaling: [1.0; 3],
            epsilon: 1e-8,
            distance: DistanceKind::Squared,
        }
    }
}

impl EdgeWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_d < 0.0
            || self.alpha_m < 0.0
            || ((self.alpha_d + self.alpha_m) - 1.0).abs() > 1e-12
        {
            return Err(Error::Config(format!(
                "edge weights need alpha_d, alpha_m >= 0 summing to 1 (got {}, {})",
                self.alpha_d, self.alpha_m
            )));
        }
        if self.epsilon <= 0.0 || self.coordinate_scaling.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "epsilon must be > 0 and scaling finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    #[serde(rename = "3d")]
    #[default]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

impl std::str::FromStr for GraphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(GraphMode::ThreeD),
            "2d" => Ok(GraphMode::TwoD),
            other => Err(Error::Config(format!(
                "unknown graph mode '{other}' (expected 2d or 3d)"
            ))),
        }
    }
}

impl std::fmt::Display for GraphMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GraphMode::ThreeD => "3d",
            GraphMode::TwoD => "2d",
        })
    }
}

pub fn box_center(b: &BoundingBox) -> Result<(f64, f64)> {
    if b.is_sentinel() || !(b.x1 < b.x2 && b.y1 < b.y2) {
        return Err(Error::Geometry(format!(
            "box {b:?} is padding or degenerate; mask it first"
        )));
    }
    Ok((
        (b.x1 as f64 + b.x2 as f64) / 2.0,
        (b.y1 as f64 + b.y2 as f64) / 2.0,
    ))
}

/// Box centre plus depth at the nearest pixel to the centre.
pub fn lift_to_3d(b: &BoundingBox, depth: &DepthMap) -> Result<Point3D> {
    let (cx, cy) = box_center(b)?;
    let (px, py) = (cx.round(), cy.round());
    if px < 0.0 || py < 0.0 || px >= depth.width as f64 || py >= depth.height as f64 {
        return Err(Error::Geometry(format!(
            "centre ({cx}, {cy}) lies outside the {}x{} depth grid",
            depth.width, depth.height
        )));
    }
    let z = depth.at(px as usize, py as usize) as f64;
    Ok(Point3D::new(cx, cy, z))
}

pub fn pair_distance(a: &Point3D, b: &Point3D, cfg: &EdgeWeightConfig) -> f64 {
    let sq: f64 = a
        .coords()
        .iter()
        .zip(b.coords())
        .zip(cfg.coordinate_scaling)
        .map(|((p, q), s)| (s * (p - q)).powi(2))
        .sum();
    match cfg.distance {
        DistanceKind::Squared => sq,
        DistanceKind::Euclidean => sq.sqrt(),
    }
}

/// Frame-to-frame displacement; `has_history == false` means the zero
/// vector was substituted because the object was absent in the previous
/// frame (or there was none).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub v: [f64; 3],
    pub has_history: bool,
}

pub fn velocity(current: &Point3D, previous: Option<&Point3D>) -> Velocity {
    match previous {
        Some(p) => Velocity {
            v: [current.cx - p.cx, current.cy - p.cy, current.z - p.z],
            has_history: true,
        },
        None => Velocity {
            v: [0.0; 3],
            has_history: false,
        },
    }
}

fn unit(v: &[f64; 3], eps: f64) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() + eps;
    [v[0] / n, v[1] / n, v[2] / n]
}

/// `‖v_i/(‖v_i‖+ε) − v_j/(‖v_j‖+ε)‖`
pub fn motion_difference(vi: &[f64; 3], vj: &[f64; 3], epsilon: f64) -> f64 {
    let (a, b) = (unit(vi, epsilon), unit(vj, epsilon));
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn edge_weight(d: f64, m: f64, cfg: &EdgeWeightConfig) -> f64 {
    cfg.alpha_d * d + cfg.alpha_m * m
}

/// Softmax over all present off-diagonal pairs of `q`; every other entry is
/// zero. Fewer than two present objects give an all-zero matrix.
pub fn normalize_weights(q: &Matrix, mask: &[bool]) -> Matrix {
    let n = mask.len();
    assert_eq!(q.shape(), (n, n));
    let mut w = Matrix::zeros(n, n);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && mask[i] && mask[j])
        .collect();
    if pairs.is_empty() {
        return w;
    }
    let mx = pairs
        .iter()
        .map(|&(i, j)| q.get(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &(i, j) in &pairs {
        let e = (q.get(i, j) - mx).exp();
        w.set(i, j, e);
        total += e;
    }
    for &(i, j) in &pairs {
        w.set(i, j, w.get(i, j) / total);
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionGraph {
    /// Slot index of each node, ascending.
    pub nodes: Vec<usize>,
    /// `n × 2D`: context features concatenated with each node's object features.
    pub node_features: Matrix,
    /// Directed slot pairs `(i, j)`, `i ≠ j`.
    pub edges: Vec<(usize, usize)>,
    /// `N × N` normalised weights over slots.
    pub weights: Matrix,
    /// Raw distance term per slot pair (diagnostics).
    pub distances: Matrix,
}

impl CollisionGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Weights restricted to the present nodes (`n × n`).
    pub fn node_weights(&self) -> Matrix {
        let n = self.nodes.len();
        let mut w = Matrix::zeros(n, n);
        for (a, &i) in self.nodes.iter().enumerate() {
            for (b, &j) in self.nodes.iter().enumerate() {
                w.set(a, b, self.weights.get(i, j));
            }
        }
        w
    }
}

fn lifted_points(frame: &FrameObservation, mode: GraphMode) -> Result<Vec<Option<Point3D>>> {
    frame
        .mask
        .iter()
        .enumerate()
        .map(|(slot, &present)| {
            if !present {
                return Ok(None);
            }
            let b = &frame.boxes[slot];
            match mode {
                GraphMode::ThreeD => {
                    let depth = frame.depth.as_ref().expect("depth checked by caller");
                    lift_to_3d(b, depth).map(Some)
                }
                GraphMode::TwoD => {
                    let (cx, cy) = box_center(b)?;
                    Ok(Some(Point3D::new(cx, cy, 0.0)))
                }
            }
        })
        .collect()
}

/// Builds one frame's collision graph. `prev` supplies velocities; objects
/// absent from it (or all objects, when `prev` is `None`) get zero velocity.
pub fn build_graph(
    frame: &FrameObservation,
    prev: Option<&FrameObservation>,
    mode: GraphMode,
    cfg: &EdgeWeightConfig,
) -> Result<CollisionGraph> {
    if mode == GraphMode::ThreeD
        && (frame.depth.is_none() || prev.is_some_and(|p| p.depth.is_none()))
    {
        return Err(Error::DepthFree("frame".into()));
    }
    let n = frame.num_slots();
    let points = lifted_points(frame, mode)?;
    let prev_points = match prev {
        Some(p) => lifted_points(p, mode)?,
        None => vec![None; n],
    };
    let velocities: Vec<[f64; 3]> = (0..n)
        .map(|s| match &points[s] {
            Some(p) => velocity(p, prev_points[s].as_ref()).v,
            None => [0.0; 3],
        })
        .collect();

    let mut q = Matrix::zeros(n, n);
    let mut dist = Matrix::zeros(n, n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if let (Some(a), Some(b)) = (&points[i], &points[j]) {
                let d = pair_distance(a, b, cfg);
                let m = motion_difference(&velocities[i], &velocities[j], cfg.epsilon);
                q.set(i, j, edge_weight(d, m, cfg));
                dist.set(i, j, d);
                edges.push((i, j));
            }
        }
    }
    let mask: Vec<bool> = points.iter().map(Option::is_some).collect();
    let weights = normalize_weights(&q, &mask);

    let nodes: Vec<usize> = (0..n).filter(|&s| mask[s]).collect();
    let d = frame.feature_dim();
    let mut node_features = Matrix::zeros(nodes.len(), 2 * d);
    for (r, &s) in nodes.iter().enumerate() {
        for (c, &v) in frame.context.iter().chain(frame.object(s)).enumerate() {
            node_features.set(r, c, v as f64);
        }
    }
    if nodes.len() < 2 {
        edges.clear();
    }
    Ok(CollisionGraph {
        nodes,
        node_features,
        edges,
        weights,
        distances: dist,
    })
}

/// Graphs for every frame of a sample.
pub fn build_graphs(
    frames: &[FrameObservation],
    mode: GraphMode,
    cfg: &EdgeWeightConfig,
) -> Result<Vec<CollisionGraph>> {
    (0..frames.len())
        .map(|t| build_graph(&frames[t], t.checked_sub(1).map(|p| &frames[p]), mode, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_with(boxes: Vec<BoundingBox>, depth: Option<DepthMap>) -> FrameObservation {
        let n = boxes.len();
        let mask = boxes.iter().map(|b| !b.is_sentinel()).collect();
        FrameObservation {
            context: vec![0.5, -0.5],
            objects: (0..n * 2).map(|i| i as f32).collect(),
            boxes,
            mask,
            depth,
        }
    }

    #[test]
    fn centers() {
        assert_eq!(
            box_center(&BoundingBox::new(10.0, 20.0, 30.0, 60.0)).unwrap(),
            (20.0, 40.0)
        );
        assert_eq!(
            box_center(&BoundingBox::new(0.0, 0.0, 100.0, 100.0)).unwrap(),
            (50.0, 50.0)
        );
        assert!(box_center(&BoundingBox::SENTINEL).is_err());
    }

    #[test]
    fn lifting() {
        let mut depth = DepthMap::uniform(64, 64, 3.0);
        depth.set(20, 40, 7.5);
        let p = lift_to_3d(&BoundingBox::new(10.0, 20.0, 30.0, 60.0), &depth).unwrap();
        assert_eq!(p, Point3D::new(20.0, 40.0, 7.5));
        let q = lift_to_3d(&BoundingBox::new(1.0, 1.0, 5.0, 9.0), &depth).unwrap();
        assert_eq!(q.z, 3.0);
        // centre (69, 10) with a 64-wide grid
        let err = lift_to_3d(&BoundingBox::new(66.0, 5.0, 72.0, 15.0), &depth);
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn distances() {
        let cfg = EdgeWeightConfig::default();
        let o = Point3D::new(0.0, 0.0, 0.0);
        assert_eq!(pair_distance(&o, &Point3D::new(3.0, 4.0, 0.0), &cfg), 25.0);
        assert_eq!(pair_distance(&o, &o, &cfg), 0.0);
        let scaled = EdgeWeightConfig {
            coordinate_scaling: [1.0, 1.0, 10.0],
            ..cfg
        };
        assert_eq!(
            pair_distance(&o, &Point3D::new(0.0, 0.0, 1.0), &scaled),
            100.0
        );
        let plain = EdgeWeightConfig {
            distance: DistanceKind::Euclidean,
            ..cfg
        };
        assert_eq!(pair_distance(&o, &Point3D::new(3.0, 4.0, 0.0), &plain), 5.0);
    }

    #[test]
    fn velocities() {
        let v = velocity(
            &Point3D::new(13.0, 14.0, 5.0),
            Some(&Point3D::new(10.0, 10.0, 5.0)),
        );
        assert_eq!(
            v,
            Velocity {
                v: [3.0, 4.0, 0.0],
                has_history: true
            }
        );
        let p = Point3D::new(1.0, 2.0, 3.0);
        assert_eq!(velocity(&p, Some(&p)).v, [0.0; 3]);
        assert_eq!(
            velocity(&p, None),
            Velocity {
                v: [0.0; 3],
                has_history: false
            }
        );
    }

    #[test]
    fn motion_differences() {
        let eps = 1e-12;
        let m = motion_difference(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], eps);
        assert!((m - std::f64::consts::SQRT_2).abs() < 1e-9);
        assert_eq!(
            motion_difference(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], eps),
            0.0
        );
        assert!((motion_difference(&[2.0, 0.0, 0.0], &[-2.0, 0.0, 0.0], eps) - 2.0).abs() < 1e-9);
        assert_eq!(motion_difference(&[0.0; 3], &[0.0; 3], 1e-8), 0.0);
    }

    #[test]
    fn edge_weights() {
        let cfg = EdgeWeightConfig::default();
        let q = edge_weight(25.0, std::f64::consts::SQRT_2, &cfg);
        assert!((q - 15.565_685_424_949_238).abs() < 1e-12);
        let only_d = EdgeWeightConfig {
            alpha_d: 1.0,
            alpha_m: 0.0,
            ..cfg
        };
        assert_eq!(edge_weight(7.0, 3.0, &only_d), 7.0);
        assert_eq!(edge_weight(0.0, 0.0, &cfg), 0.0);
        assert!(EdgeWeightConfig {
            alpha_d: 0.7,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn softmax_normalisation() {
        let mask = [true, true, false];
        let mut q = Matrix::zeros(3, 3);
        q.set(0, 1, 2.0);
        q.set(1, 0, 2.0);
        q.set(0, 2, 99.0);
        let w = normalize_weights(&q, &mask);
        assert_eq!(w.get(0, 1), 0.5);
        assert_eq!(w.get(1, 0), 0.5);
        assert_eq!(w.get(0, 2), 0.0);

        // single present pair, one direction only via a 2-slot mask
        let w = normalize_weights(&Matrix::zeros(2, 2), &[true, true]);
        assert_eq!(w.get(0, 1) + w.get(1, 0), 1.0);

        let mut q = Matrix::zeros(2, 2);
        q.set(1, 0, 3f64.ln());
        let w = normalize_weights(&q, &[true, true]);
        assert!((w.get(0, 1) - 0.25).abs() < 1e-15);
        assert!((w.get(1, 0) - 0.75).abs() < 1e-15);

        let w = normalize_weights(&Matrix::zeros(3, 3), &[true, false, false]);
        assert!(w.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn graph_sizes() {
        let depth = DepthMap::uniform(50, 50, 4.0);
        let boxes = vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0),
            BoundingBox::new(20.0, 20.0, 30.0, 30.0),
            BoundingBox::new(30.0, 5.0, 40.0, 15.0),
            BoundingBox::SENTINEL,
        ];
        let f = frame_with(boxes.clone(), Some(depth.clone()));
        let g = build_graph(&f, None, GraphMode::ThreeD, &EdgeWeightConfig::default()).unwrap();
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.nodes, vec![0, 1, 2]);
        assert_eq!(g.node_features.shape(), (3, 4));
        assert_eq!(g.node_features.row(1), &[0.5, -0.5, 2.0, 3.0]);
        let total: f64 = g.weights.data.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.weights.row(3).iter().all(|&x| x == 0.0));

        let single = frame_with(
            vec![
                boxes[0],
                BoundingBox::SENTINEL,
                BoundingBox::SENTINEL,
                BoundingBox::SENTINEL,
            ],
            Some(depth),
        );
        let g = build_graph(
            &single,
            None,
            GraphMode::ThreeD,
            &EdgeWeightConfig::default(),
        )
        .unwrap();
        assert!(g.is_empty());
        assert!(g.weights.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_d_needs_depth() {
        let f = frame_with(vec![BoundingBox::new(0.0, 0.0, 4.0, 4.0)], None);
        assert!(matches!(
            build_graph(&f, None, GraphMode::ThreeD, &EdgeWeightConfig::default()),
            Err(Error::DepthFree(_))
        ));
        assert!(build_graph(&f, None, GraphMode::TwoD, &EdgeWeightConfig::default()).is_ok());
    }

    fn arb_point() -> impl Strategy<Value = Point3D> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, z)| Point3D::new(x, y, z))
    }

    fn arb_vec() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-5.0..5.0f64)
    }

    proptest! {
        #[test]
        fn distance_and_motion_are_symmetric(a in arb_point(), b in arb_point(), u in arb_vec(), v in arb_vec()) {
            let cfg = EdgeWeightConfig::default();
            prop_assert_eq!(pair_distance(&a, &b, &cfg), pair_distance(&b, &a, &cfg));
            prop_assert_eq!(motion_difference(&u, &v, 1e-8), motion_difference(&v, &u, 1e-8));
        }

        #[test]
        fn motion_is_translation_invariant(a0 in arb_point(), a1 in arb_point(), b0 in arb_point(), b1 in arb_point(), shift in arb_vec()) {
            let mv = |p: &Point3D| Point3D::new(p.cx + shift[0], p.cy + shift[1], p.z + shift[2].abs());
            let m = motion_difference(&velocity(&a1, Some(&a0)).v, &velocity(&b1, Some(&b0)).v, 1e-8);
            let m2 = motion_difference(
                &velocity(&mv(&a1), Some(&mv(&a0))).v,
                &velocity(&mv(&b1), Some(&mv(&b0))).v,
                1e-8,
            );
            prop_assert!((m - m2).abs() < 1e-9);
        }
    }
}
