mod common;

use dashrisk::evalkit::{evaluate_scores, RiskCurve, VideoScore};
use dashrisk::exec::Execution;
use dashrisk::trainer::{
    evaluate, prepare_all, run_ablation, train, AblationGrid, LogRecord, PlateauConfig, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        batch_size: 4,
        epochs,
        seed,
        model: common::toy_model(),
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_checksums() {
    let ds = common::toy_dataset(16, 4);
    let cfg = toy_train(2, 6);
    let a = train(&ds, &cfg, None, Execution::Parallel).unwrap();
    let b = train(&ds, &cfg, None, Execution::Sequential).unwrap();
    assert_eq!(a.final_model.checksum(), b.final_model.checksum());
    assert_eq!(a.best_model.checksum(), b.best_model.checksum());
    assert_eq!(a.history, b.history);
    let c = train(&ds, &toy_train(2, 7), None, Execution::Parallel).unwrap();
    assert_ne!(a.final_model.checksum(), c.final_model.checksum());
}

#[test]
fn desk_loss_running_mean_decreases_over_200_steps() {
    let ds = dashrisk::scenekit::generate_dataset(&Default::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        ..TrainConfig::desk()
    };
    let out = train(&ds, &cfg, None, Execution::default()).unwrap();
    let totals: Vec<f64> = out.losses.iter().take(200).map(|l| l.total).collect();
    assert_eq!(totals.len(), 200);
    assert!(totals.iter().all(|x| x.is_finite()));
    let window = |k: usize| totals[k * 50..(k + 1) * 50].iter().sum::<f64>() / 50.0;
    let means: Vec<f64> = (0..4).map(window).collect();
    assert!(means[3] < means[0], "running means {means:?}");
    assert!(means[1] < means[0], "running means {means:?}");
}

#[test]
fn lr_reductions_apply_the_factor() {
    let ds = common::toy_dataset(16, 8);
    let cfg = TrainConfig {
        evals_per_epoch: 4,
        plateau: PlateauConfig {
            patience: 0,
            ..PlateauConfig::default()
        },
        ..toy_train(4, 2)
    };
    let out = train(&ds, &cfg, None, Execution::default()).unwrap();
    let reductions: Vec<(f64, f64)> = out
        .log
        .iter()
        .filter_map(|r| match r {
            LogRecord::LrReduced { from, to, .. } => Some((*from, *to)),
            _ => None,
        })
        .collect();
    assert!(!reductions.is_empty());
    for (from, to) in reductions {
        assert_eq!(to, from * cfg.plateau.factor);
    }
}

#[test]
fn evaluation_is_repeatable() {
    let ds = common::toy_dataset(12, 3);
    let cfg = common::toy_model();
    let model = dashrisk::netcore::Model::new(cfg.clone(), 1).unwrap();
    let xs = common::prepared(&ds, &cfg);
    let (a, sa) = evaluate(&model, &xs, 20.0, Execution::Parallel).unwrap();
    let (b, sb) = evaluate(&model, &xs, 20.0, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

fn scored(label: bool, tau: usize, scores: Vec<f64>) -> VideoScore {
    VideoScore::new(
        RiskCurve {
            scores,
            video_prob: 0.5,
        },
        label,
        tau,
    )
}

#[test]
fn perfect_scores_give_perfect_ranking() {
    let ds = common::toy_dataset(20, 5);
    let videos: Vec<VideoScore> = ds
        .samples
        .iter()
        .map(|s| {
            let curve = (1..=s.frames.len())
                .map(|t| if s.label && t >= 5 { 0.95 } else { 0.05 })
                .collect();
            scored(s.label, s.accident_frame, curve)
        })
        .collect();
    let report = evaluate_scores(&videos, 20.0).unwrap();
    assert_eq!(report.ap, 1.0);
    assert_eq!(report.auc, Some(1.0));
}

#[test]
fn random_scores_have_chance_auc() {
    let ds = dashrisk::scenekit::generate_dataset(&Default::default()).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let videos: Vec<VideoScore> = ds
            .samples
            .iter()
            .map(|s| {
                let curve = (0..s.frames.len()).map(|_| rng.random::<f64>()).collect();
                scored(s.label, s.accident_frame, curve)
            })
            .collect();
        let auc = evaluate_scores(&videos, 20.0).unwrap().auc.unwrap();
        assert!((0.4..=0.6).contains(&auc), "seed {seed}: AUC {auc}");
    }
}

#[test]
fn toggle_grid_yields_seven_rows() {
    let ds = common::toy_dataset(12, 6);
    let table = run_ablation(
        &AblationGrid::toggles(&toy_train(1, 0)),
        &ds,
        Execution::default(),
    );
    assert_eq!(table.rows.len(), 7);
    let names: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["A", "B", "C", "D", "E", "F", "original"]);
    assert!(table
        .rows
        .iter()
        .all(|r| r.error.is_none() && r.ap.is_some()));
    let header = table.to_csv().lines().next().unwrap().to_string();
    assert!(
        header.starts_with("experiment,group,IA,OA,3D-CM,TA,SM,AM,ap,mtta"),
        "{header}"
    );
}

#[test]
fn mode_grid_records_sixty_points_per_mode() {
    let ds = common::toy_dataset(12, 2);
    let table = run_ablation(
        &AblationGrid::mode(&toy_train(1, 0)),
        &ds,
        Execution::default(),
    );
    assert_eq!(table.rows.len(), 2);
    for r in &table.rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert_eq!(r.scatter.len(), 60, "{}", r.name);
        assert_eq!(r.scatter.first().unwrap().epoch, 0.5);
        assert_eq!(r.scatter.last().unwrap().epoch, 30.0);
    }
}

#[test]
fn beta_sweep_summarises_both_groups() {
    let ds = common::toy_dataset(12, 1);
    let grid = AblationGrid::beta(&toy_train(1, 0), &[1.0, 1e-2, 1e-4]);
    let table = run_ablation(&grid, &ds, Execution::default());
    assert_eq!(table.rows.len(), 6);
    let variance: Vec<&str> = table
        .summary
        .iter()
        .filter(|s| s.stat == "variance")
        .map(|s| s.group.as_str())
        .collect();
    assert_eq!(variance, ["adaptive_off", "adaptive_on"]);
}

#[test]
fn prepared_inputs_follow_split_order() {
    let ds = common::toy_dataset(10, 9);
    let test = ds.split("test").unwrap();
    let xs = prepare_all(&test, &common::toy_model(), Execution::Parallel).unwrap();
    let ids: Vec<&str> = xs.iter().map(|x| x.sample_id.as_str()).collect();
    let expected: Vec<&str> = test.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids, expected);
}
