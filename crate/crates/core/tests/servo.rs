use goalshape_core::cloud::{PointCloud, RigidTransform, Vec3};
use goalshape_core::demo::{demonstrate, grasp_vertices_near, DemoConfig};
use goalshape_core::servo::*;
use goalshape_core::sim::{build_scene, init_state, observe_current, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A sparse jittered grid, so nearest-point matches are unambiguous.
fn sparse_cloud(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..2 {
                let jitter = Vec3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                );
                pts.push(Vec3::new(i as f64 * 0.05, j as f64 * 0.05, k as f64 * 0.05) + jitter);
            }
        }
    }
    PointCloud::new(pts).unwrap()
}

fn grasp_at(origin: Vec3) -> GraspSpec {
    GraspSpec {
        arms: vec![ArmGrasp {
            vertices: vec![0],
            frame: RigidTransform::from_translation(origin),
        }],
    }
}

#[test]
fn rigid_goal_is_recovered_exactly() {
    let cfg = ServoConfig {
        gain: 1.0,
        epsilon_scale: 1e-5,
        sinkhorn_iters: 5000,
        ..ServoConfig::default()
    };
    let current = sparse_cloud(1);
    let origin = current.get(20);
    for (rot, shift) in [
        (Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.002, -0.001, 0.003)),
        (Vec3::new(0.1, -0.05, 0.02), Vec3::new(0.0, 0.004, 0.0)),
        (Vec3::zeros(), Vec3::new(-0.003, 0.0, 0.002)),
    ] {
        let delta = RigidTransform::from_rotvec(rot, shift);
        let world = RigidTransform::about_point(rot, origin, shift);
        let goal = current.transformed(&world);
        let action = compute_action(&current, &goal, &grasp_at(origin), &cfg).unwrap();
        let got = &action.deltas[0];
        assert!(!action.degenerate);
        assert!((got.rotation - delta.rotation).amax() < 1e-6, "{got:?} vs {delta:?}");
        assert!(
            (got.translation - delta.translation).amax() < 1e-6,
            "{got:?} vs {delta:?}"
        );
    }
}

#[test]
fn identical_goal_gives_identity_action() {
    let current = sparse_cloud(2);
    let action = compute_action(&current, &current, &grasp_at(current.get(5)), &ServoConfig::default()).unwrap();
    let d = &action.deltas[0];
    assert!(d.rotation_angle() < 1e-9 && d.translation.norm() < 1e-9, "{d:?}");
}

#[test]
fn actions_respect_step_bounds() {
    let cfg = ServoConfig::default();
    let current = sparse_cloud(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let rot = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let shift = Vec3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        );
        let goal = current.transformed(&RigidTransform::from_rotvec(rot, shift));
        let action = compute_action(&current, &goal, &grasp_at(current.get(7)), &cfg).unwrap();
        let d = &action.deltas[0];
        assert!(d.rotation_angle() <= 10f64.to_radians() + 1e-12);
        assert!(d.translation.norm() <= 5e-3 + 1e-15);
    }
}

#[test]
fn manipulation_point_lies_in_the_moved_half() {
    let cfg = ServoConfig::default();
    let current = sparse_cloud(5);
    let goal = PointCloud::new(
        current
            .points()
            .iter()
            .map(|p| if p.x > 0.12 { p + Vec3::new(0.0, 0.0, 0.05) } else { *p })
            .collect(),
    )
    .unwrap();
    let picked = select_manipulation_points(&current, &goal, 1, &cfg).unwrap();
    assert!(picked[0].x > 0.12, "{:?}", picked[0]);
}

#[test]
fn two_manipulation_points_are_separated() {
    let cfg = ServoConfig::default();
    let current = sparse_cloud(6);
    let goal = current.transformed(&RigidTransform::from_rotvec(
        Vec3::new(0.0, 0.0, 0.4),
        Vec3::new(0.01, 0.0, 0.0),
    ));
    let picked = select_manipulation_points(&current, &goal, 2, &cfg).unwrap();
    assert_eq!(picked.len(), 2);
    assert!((picked[0] - picked[1]).norm() >= MIN_SEPARATION * current.bbox_diagonal());
}

#[test]
fn goal_equal_to_current_view_stops_immediately() {
    let scene = build_scene(Task::Retraction, 1000);
    let cfg = ServoConfig::default();
    let mut state = init_state(&scene).unwrap();
    let camera = scene.camera_view().unwrap();
    let goal = observe_current(&scene, &state, &camera, cfg.n_points).unwrap();
    state
        .add_grasp(grasp_vertices_near(&state, &goal.get(0)).unwrap())
        .unwrap();
    let report = servo_loop(&scene, state, &goal, GoalSource::Oracle, &cfg).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(report.termination, Termination::Converged);
    assert_eq!(report.chamfers, vec![0.0]);
}

#[test]
fn oracle_goal_episodes_make_progress() {
    let cfg = ServoConfig::default();
    for seed in [2000, 2001] {
        let scene = build_scene(Task::Retraction, seed);
        let (_, demo) = demonstrate(&scene, &DemoConfig::default()).unwrap();
        let report = run_episode(&scene, &demo.goal, GoalSource::Oracle, &cfg).unwrap();
        assert!(report.iterations <= cfg.max_iterations);
        assert!(report.final_chamfer() < report.initial_chamfer(), "{report:?}");
        assert!((0.0..=100.0).contains(&report.final_metric));
        assert_eq!(report.chamfers.len(), report.iterations + 1);
    }
}

#[test]
fn reports_append_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episodes.csv");
    let report = EpisodeReport {
        scene_seed: 7,
        task: Task::Wrapping,
        goal_source: GoalSource::Learned,
        chamfers: vec![2e-3, 1e-3],
        initial_metric: 70.0,
        final_metric: 80.5,
        iterations: 1,
        termination: Termination::MaxIterations,
    };
    append_reports(&path, std::slice::from_ref(&report)).unwrap();
    append_reports(&path, &[report]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], REPORT_HEADER.join(","));
    assert_eq!(lines[1], "7,wrapping,learned,1,80.5,0.001,max-iterations");
}
