use goalshape_core::cloud::{chamfer, coverage_percentage, success_percentage};
use goalshape_core::demo::*;
use goalshape_core::sim::{build_scene, observe_current, tissue_cloud, Obstacle, Task, DEFAULT_DT};
use goalshape_core::Error;

fn retraction(seed: u64) -> (Trajectory, Demonstration) {
    demonstrate(&build_scene(Task::Retraction, seed), &DemoConfig::default()).unwrap()
}

#[test]
fn replaying_the_log_reproduces_the_goal_bit_exactly() {
    let (traj, demo) = retraction(1000);
    let state = replay(&demo.scene, &demo.commands, DEFAULT_DT).unwrap();
    let cam = demo.scene.camera_view().unwrap();
    let seen = observe_current(&demo.scene, &state, &cam, DEFAULT_N)
        .unwrap()
        .quantized_f32();
    assert_eq!(seen, demo.goal);
    assert_eq!(traj.commands, demo.commands);
    assert_eq!(task_metric(&demo.scene, &state).unwrap(), *traj.metrics.last().unwrap());
}

#[test]
fn retraction_ends_past_the_plane() {
    for seed in [1000, 1001, 1002] {
        let (traj, demo) = retraction(seed);
        let plane = demo.scene.target_plane.unwrap();
        let state = replay(&demo.scene, &demo.commands, DEFAULT_DT).unwrap();
        let tissue = tissue_cloud(&demo.scene, &state).unwrap();
        assert_eq!(success_percentage(&tissue, &plane), 100.0);
        assert!(traj.metrics[0] < 100.0, "seed {seed}: {}", traj.metrics[0]);
        assert!(chamfer(&demo.current, &demo.goal) > 0.0);
        assert!(traj.waypoints.len() >= 2);
        for c in [&demo.current, &demo.context, &demo.goal] {
            assert_eq!(c.len(), DEFAULT_N);
        }
    }
}

#[test]
fn wrapping_covers_the_tube_and_keeps_grasps_outside_it() {
    for seed in [3000, 3001] {
        let scene = build_scene(Task::Wrapping, seed);
        let (traj, demo) = demonstrate(&scene, &DemoConfig::default()).unwrap();
        let Some(Obstacle::Cylinder { radius, pose, .. }) = scene.obstacle else {
            panic!("wrapping scene without a tube");
        };
        let tube = scene.obstacle.unwrap().as_cylinder().unwrap();
        let state = replay(&scene, &demo.commands, DEFAULT_DT).unwrap();
        let tissue = tissue_cloud(&scene, &state).unwrap();
        let coverage = coverage_percentage(&tissue, &tube, tube.default_proximity()).unwrap();
        assert!(coverage >= MIN_WRAP_COVERAGE, "seed {seed}: {coverage}");
        assert!(
            traj.metrics.last().unwrap() > &traj.metrics[0],
            "seed {seed}: {:?}",
            traj.metrics
        );

        let axis = pose.rotation * goalshape_core::cloud::Vec3::z();
        assert_eq!(traj.grasp_paths.len(), 2);
        for path in &traj.grasp_paths {
            for p in path {
                let rel = p - pose.translation;
                let off_axis = (rel - axis * rel.dot(&axis)).norm();
                assert!(off_axis >= radius, "seed {seed}: {off_axis} < {radius}");
            }
        }
        assert_eq!(demo.context.len(), DEFAULT_N);
    }
}

#[test]
fn demonstrations_are_deterministic() {
    let (a, da) = retraction(1003);
    let (b, db) = retraction(1003);
    assert_eq!(a, b);
    assert_eq!(da, db);
}

#[test]
fn dataset_round_trips() {
    let demos: Vec<Demonstration> = [1000, 1001, 1002].into_iter().map(|s| retraction(s).1).collect();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&demos, dir.path()).unwrap();
    assert_eq!(manifest.seeds, vec![1000, 1001, 1002]);
    let (read_manifest_back, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(read_manifest_back, manifest);
    assert_eq!(back, demos);

    let subdirs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_type().unwrap().is_dir())
        .count();
    assert_eq!(read_manifest(dir.path()).unwrap().count, subdirs);
}

#[test]
fn missing_ply_is_reported_by_path() {
    let demos = vec![retraction(1000).1];
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&demos, dir.path()).unwrap();
    let gone = dir.path().join("demo_00000").join("context.ply");
    std::fs::remove_file(&gone).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::DatasetCorrupt { path, .. }) => assert_eq!(path, gone),
        other => panic!("expected a corrupt dataset, got {other:?}"),
    }
}

#[test]
fn malformed_manifest_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[retraction(1000).1], dir.path()).unwrap();
    let manifest = dir.path().join(MANIFEST);
    std::fs::write(&manifest, "{ not json").unwrap();
    match read_manifest(dir.path()) {
        Err(Error::DatasetCorrupt { path, .. }) => assert_eq!(path, manifest),
        other => panic!("expected a corrupt dataset, got {other:?}"),
    }
}

#[test]
fn command_logs_round_trip() {
    let (_, demo) = retraction(1001);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("commands.csv");
    write_commands(&path, &demo.commands).unwrap();
    assert_eq!(read_commands(&path).unwrap(), demo.commands);
}

#[test]
fn subsets_are_distinct_sorted_and_seeded() {
    let a = subset_indices(100, 10, 5).unwrap();
    assert_eq!(a, subset_indices(100, 10, 5).unwrap());
    assert_ne!(a, subset_indices(100, 10, 6).unwrap());
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert!(a.iter().all(|&i| i < 100));
    assert_eq!(subset_indices(7, 7, 1).unwrap(), (0..7).collect::<Vec<_>>());
    assert!(subset_indices(5, 6, 1).is_err());
    assert!(subset_indices(5, 0, 1).is_err());
}

#[test]
fn subset_draws_are_roughly_uniform() {
    // Each index should appear in about size/count of many draws.
    let mut hits = [0usize; 20];
    for seed in 0..2000 {
        for i in subset_indices(20, 5, seed).unwrap() {
            hits[i] += 1;
        }
    }
    for h in hits {
        assert!((400..=600).contains(&h), "{hits:?}");
    }
}
