#![allow(dead_code)]

pub mod oracles;

use dashrisk::exec::Execution;
use dashrisk::netcore::{Model, ModelConfig, PreparedSample};
use dashrisk::objective::LossConfig;
use dashrisk::scenekit::{generate_dataset, Dataset, ScenarioConfig};
use dashrisk::trainer::{batch_gradients, prepare_all};

/// Small scenario: T=20 frames, N=4 slots, D=4 features.
pub fn toy_scenario(num_videos: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        num_videos,
        frames: 20,
        slots: 4,
        min_objects: 2,
        max_objects: 4,
        feature_dim: 4,
        seed,
        ..ScenarioConfig::default()
    }
}

pub fn toy_model() -> ModelConfig {
    let mut cfg = ModelConfig {
        feature_dim: 4,
        context_hidden: 6,
        object_hidden: 5,
        graph_hidden: 4,
        temporal_hidden: 6,
        accident_hidden: 3,
        head_hidden: 4,
        heads: 2,
        smooth_fields: vec![5, 2],
        ..ModelConfig::default()
    };
    cfg.edge.coordinate_scaling = [2.0 / 96.0, 2.0 / 72.0, 2.0 / 40.0];
    cfg
}

pub fn toy_dataset(num_videos: usize, seed: u64) -> Dataset {
    generate_dataset(&toy_scenario(num_videos, seed)).expect("toy scenario generates")
}

pub fn prepared(ds: &Dataset, cfg: &ModelConfig) -> Vec<PreparedSample> {
    let all: Vec<_> = ds.samples.iter().collect();
    prepare_all(&all, cfg, Execution::Sequential).expect("toy samples prepare")
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` per parameter tensor, for a loss that is a
/// deterministic function of the parameters (fixed dropout masks).
pub fn relative_gradient_errors(
    model: &mut Model,
    loss: &LossConfig,
    step: f64,
) -> Vec<(String, f64)> {
    let ds = toy_dataset(2, 5);
    let xs = prepared(&ds, &model.config);
    assert!(xs.iter().any(|x| x.label) || xs.iter().any(|x| !x.label));
    let batch: Vec<_> = xs.iter().collect();
    let idx = [0, 1];
    let seed = Some((9, 3));
    let (_, analytic) =
        batch_gradients(model, &batch, &idx, loss, seed, Execution::Sequential).unwrap();

    let mut report = Vec::new();
    let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let id = model.params.find(name).unwrap();
        let len = model.params.get(id).len();
        let mut numeric = vec![0.0; len];
        for k in 0..len {
            let orig = model.params.get(id).data[k];
            model.params.get_mut(id).data[k] = orig + step;
            let up = batch_gradients(model, &batch, &idx, loss, seed, Execution::Sequential)
                .unwrap()
                .0
                .total;
            model.params.get_mut(id).data[k] = orig - step;
            let down = batch_gradients(model, &batch, &idx, loss, seed, Execution::Sequential)
                .unwrap()
                .0
                .total;
            model.params.get_mut(id).data[k] = orig;
            numeric[k] = (up - down) / (2.0 * step);
        }
        let a = &analytic.grads[i].data;
        let diff: f64 = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { 0.0 } else { diff / scale };
        report.push((name.clone(), rel));
    }
    report
}
