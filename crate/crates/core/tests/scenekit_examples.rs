use dashrisk::geometry::{build_graph, lift_to_3d, pair_distance, EdgeWeightConfig, GraphMode};
use dashrisk::netcore::{ModelConfig, PreparedSample};
use dashrisk::scenekit::{
    generate_dataset, ingest_precomputed, save_dataset, ArchiveSchema, Dataset, ScenarioConfig,
    ScenarioKind,
};
use dashrisk::Error;

/// DAD-shaped archive: 100 frames, 19 slots, 4096 features, one positive
/// with the accident at frame 90 and one negative.
fn dad_shaped() -> Dataset {
    generate_dataset(&ScenarioConfig {
        num_videos: 2,
        frames: 100,
        slots: 19,
        min_objects: 2,
        max_objects: 4,
        feature_dim: 4096,
        event_window: (0.9, 0.9),
        seed: 3,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

#[test]
fn ingests_dad_shaped_archive() {
    let ds = dad_shaped();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = ingest_precomputed(dir.path(), &ArchiveSchema::DAD).unwrap();
    let pos = back.samples.iter().find(|s| s.label).unwrap();
    assert_eq!(pos.accident_frame, 90);
    assert_eq!(pos.frames.len(), 100);
    assert_eq!(pos.frames[0].num_slots(), 19);
    assert_eq!(pos.frames[0].feature_dim(), 4096);
    assert!(back
        .samples
        .iter()
        .any(|s| !s.label && s.accident_frame == 0));
}

#[test]
fn slot_count_mismatch_is_a_schema_error() {
    let mut ds = dad_shaped();
    ds.meta.objects = 20;
    for s in &mut ds.samples {
        for f in &mut s.frames {
            f.boxes.push(dashrisk::scenekit::BoundingBox::SENTINEL);
            f.mask.push(false);
            f.objects.extend(std::iter::repeat_n(0.0, 4096));
        }
        s.truth = None;
    }
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    match ingest_precomputed(dir.path(), &ArchiveSchema::DAD) {
        Err(Error::Schema {
            expected, found, ..
        }) => {
            assert!(expected.contains("N=19"), "{expected}");
            assert!(found.contains("N=20"), "{found}");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn depth_free_archive_loads_but_cannot_build_3d_graphs() {
    let mut ds = dad_shaped();
    for s in &mut ds.samples {
        for f in &mut s.frames {
            f.depth = None;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = ingest_precomputed(dir.path(), &ArchiveSchema::DAD).unwrap();
    let sample = &back.samples[0];
    assert!(!sample.has_depth());
    let edge = EdgeWeightConfig::default();
    assert!(matches!(
        build_graph(
            &sample.frames[1],
            Some(&sample.frames[0]),
            GraphMode::ThreeD,
            &edge
        ),
        Err(Error::DepthFree(_))
    ));
    assert!(build_graph(
        &sample.frames[1],
        Some(&sample.frames[0]),
        GraphMode::TwoD,
        &edge
    )
    .is_ok());

    let cfg = ModelConfig {
        feature_dim: 4096,
        ..ModelConfig::default()
    };
    assert!(PreparedSample::new(sample, &cfg).is_err());
    let mut off = cfg.clone();
    off.toggles.collision_3d = false;
    assert!(PreparedSample::new(sample, &off).is_ok());
}

#[test]
fn planted_pair_meets_at_the_accident_frame() {
    let cfg = ScenarioConfig {
        num_videos: 6,
        frames: 100,
        accident_fraction: 1.0,
        event_window: (0.6, 0.6),
        seed: 21,
        ..ScenarioConfig::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let unit = EdgeWeightConfig {
        distance: dashrisk::geometry::DistanceKind::Euclidean,
        ..EdgeWeightConfig::default()
    };
    for s in &ds.samples {
        assert_eq!(s.accident_frame, 60);
        let truth = s.truth.as_ref().unwrap();
        let (i, j) = truth.pair.unwrap();
        // frames are 0-based in storage
        let f = &s.frames[59];
        let depth = f.depth.as_ref().unwrap();
        let (a, b) = (
            lift_to_3d(&f.boxes[i], depth).unwrap(),
            lift_to_3d(&f.boxes[j], depth).unwrap(),
        );
        let pi = truth.position(59, i, cfg.slots);
        let pj = truth.position(59, j, cfg.slots);
        let world =
            ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2)).sqrt();
        assert!(
            (world as f64) < cfg.collision_radius,
            "{}: world distance {world}",
            s.sample_id
        );
        let lifted = pair_distance(&a, &b, &unit);
        assert!(
            lifted < cfg.collision_radius,
            "{}: lifted distance {lifted}",
            s.sample_id
        );
    }
}

#[test]
fn trap_pair_is_closer_in_2d_than_in_3d() {
    let ds = generate_dataset(&ScenarioConfig {
        num_videos: 40,
        seed: 9,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let edge = EdgeWeightConfig::default();
    let (mut traps, mut frames, mut separated) = (0, 0, 0);
    for s in ds
        .samples
        .iter()
        .filter(|s| s.truth.as_ref().unwrap().kind == ScenarioKind::ParallaxTrap)
    {
        assert!(!s.label);
        assert_eq!(s.accident_frame, 0);
        let (i, j) = s.truth.as_ref().unwrap().pair.unwrap();
        for t in 1..s.frames.len() {
            let f = &s.frames[t];
            if !(f.mask[i] && f.mask[j]) {
                continue;
            }
            frames += 1;
            let g2 = build_graph(f, Some(&s.frames[t - 1]), GraphMode::TwoD, &edge).unwrap();
            let g3 = build_graph(f, Some(&s.frames[t - 1]), GraphMode::ThreeD, &edge).unwrap();
            let (d2, d3) = (g2.distances.get(i, j), g3.distances.get(i, j));
            let depth = f.depth.as_ref().unwrap();
            let (zi, zj) = (
                lift_to_3d(&f.boxes[i], depth).unwrap().z,
                lift_to_3d(&f.boxes[j], depth).unwrap().z,
            );
            if zi != zj {
                assert!(d2 < d3, "{} frame {t}: {d2} vs {d3}", s.sample_id);
                separated += 1;
            }
        }
        traps += 1;
    }
    assert!(traps > 0);
    assert!(
        2 * separated > frames,
        "depth separates {separated} of {frames} co-visible trap frames"
    );
}
