use goalshape_core::cloud::{PointCloud, RigidTransform, Vec3};
use goalshape_core::demo::{demonstrate, grasp_vertices_near, replay, DemoConfig};
use goalshape_core::sim::*;
use goalshape_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A retraction scene with the kidney removed and the sheet lifted clear of
/// the ground.
fn free_scene(height: f64) -> Scene {
    let mut scene = build_scene(Task::Retraction, 3);
    scene.obstacle = None;
    scene.target_plane = None;
    scene.tissue.drape = Drape::Heightfield {
        placement: RigidTransform::identity(),
        gap: height,
    };
    scene.tissue.anchored.clear();
    scene
}

fn fresh_state(scene: &Scene) -> DeformableState {
    let positions = scene.draped_positions();
    let n = positions.len();
    DeformableState {
        positions,
        velocities: vec![Vec3::zeros(); n],
        grasps: Vec::new(),
        steps: 0,
    }
}

#[test]
fn lone_free_vertex_follows_semi_implicit_euler() {
    let mut scene = free_scene(1.0);
    let t = &mut scene.tissue;
    t.k_structural = 1e-300;
    t.k_shear = 1e-300;
    t.k_bend = 1e-300;
    t.damping = 0.0;
    t.spring_damping = 0.0;
    let free = 5;
    t.anchored = (0..t.vertex_count()).filter(|&v| v != free).collect();
    let sim = Simulator::new(&scene).unwrap();
    let mut state = fresh_state(&scene);
    let dt = 2e-3;
    let (mut x, mut v) = (state.positions[free], Vec3::zeros());
    for _ in 0..200 {
        sim.step(&mut state, &[], dt).unwrap();
        v += scene.gravity * dt;
        x += v * dt;
        assert!((state.positions[free] - x).norm() < 1e-6);
        assert!((state.velocities[free] - v).norm() < 1e-6);
    }
    assert!(x.z < 1.0);
}

#[test]
fn spring_forces_cancel_pairwise() {
    let scene = build_scene(Task::Retraction, 4);
    let sim = Simulator::new(&scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = fresh_state(&scene);
    let x: Vec<Vec3> = state
        .positions
        .iter()
        .map(|p| {
            p + Vec3::new(
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
            )
        })
        .collect();
    let v: Vec<Vec3> = x
        .iter()
        .map(|_| Vec3::new(rng.gen_range(-0.1..0.1), 0.0, rng.gen_range(-0.1..0.1)))
        .collect();
    let mut total = Vec3::zeros();
    for s in sim.springs() {
        let f = sim.spring_force(s, &x, &v);
        let back = sim.spring_force(&Spring { a: s.b, b: s.a, ..*s }, &x, &v);
        assert_eq!(f, -back);
        total += f + back;
    }
    assert_eq!(total, Vec3::zeros());
}

#[test]
fn damped_free_sheet_loses_energy() {
    let mut scene = free_scene(1.0);
    scene.gravity = Vec3::zeros();
    let sim = Simulator::new(&scene).unwrap();
    let mut state = fresh_state(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in &mut state.positions {
        *p += Vec3::new(
            rng.gen_range(-5e-4..5e-4),
            rng.gen_range(-5e-4..5e-4),
            rng.gen_range(-5e-4..5e-4),
        );
    }
    let mut previous = sim.energy(&state);
    assert!(previous > 0.0);
    for _ in 0..4 {
        for _ in 0..500 {
            sim.step(&mut state, &[], DEFAULT_DT).unwrap();
        }
        let e = sim.energy(&state);
        assert!(e <= previous + 1e-9, "{e} > {previous}");
        previous = e;
    }
}

#[test]
fn sheet_on_flat_ground_settles_at_rest() {
    let scene = free_scene(0.0);
    let state = init_state(&scene).unwrap();
    let sim = Simulator::new(&scene).unwrap();
    assert!(state.velocities.iter().all(|v| *v == Vec3::zeros()));
    assert!(sim.max_free_speed(&state) < 1e-3);
    let thickness = (scene.tissue.nz - 1) as f64 * scene.tissue.cell;
    for p in &state.positions {
        assert!(p.z >= 0.0 && p.z <= thickness + 2e-3, "{p:?}");
    }
}

#[test]
fn settled_tissue_stays_outside_the_obstacle() {
    for seed in 0..4 {
        for task in [Task::Retraction, Task::Wrapping] {
            let scene = build_scene(task, seed);
            let state = init_state(&scene).unwrap();
            assert!(state.velocities.iter().all(|v| *v == Vec3::zeros()));
            assert!(state.grasps.is_empty());
            let o = scene.obstacle.unwrap();
            for p in &state.positions {
                assert!(
                    o.signed_distance(p) >= -1e-4,
                    "seed {seed} {task}: {}",
                    o.signed_distance(p)
                );
            }
        }
    }
}

#[test]
fn grasp_pushed_into_the_kidney_never_penetrates() {
    let scene = build_scene(Task::Retraction, 6);
    let sim = Simulator::new(&scene).unwrap();
    let mut state = init_state(&scene).unwrap();
    let o = scene.obstacle.unwrap();
    let target = o.center();
    let near = grasp_vertices_near(&state, &state.positions[state.positions.len() / 2]).unwrap();
    state.add_grasp(near).unwrap();
    let towards = (target - state.grasps[0].origin()).normalize() * 1e-4;
    for _ in 0..300 {
        sim.step(&mut state, &[RigidTransform::from_translation(towards)], DEFAULT_DT)
            .unwrap();
        for p in &state.positions {
            assert!(o.signed_distance(p) >= -1e-4);
        }
    }
}

#[test]
fn grasped_vertices_track_their_frame() {
    let scene = build_scene(Task::Retraction, 7);
    let sim = Simulator::new(&scene).unwrap();
    let mut state = init_state(&scene).unwrap();
    let verts = grasp_vertices_near(&state, &state.positions[3]).unwrap();
    state.add_grasp(verts.clone()).unwrap();
    let held: Vec<Vec3> = verts.iter().map(|&v| state.positions[v]).collect();
    for _ in 0..50 {
        sim.step(&mut state, &[RigidTransform::identity()], DEFAULT_DT).unwrap();
    }
    let now: Vec<Vec3> = verts.iter().map(|&v| state.positions[v]).collect();
    for (a, b) in held.iter().zip(&now) {
        assert!((a - b).norm() < 1e-12);
    }
    let lift = RigidTransform::from_rotvec(Vec3::new(0.0, 0.02, 0.0), Vec3::new(0.0, 0.0, 1e-3));
    for _ in 0..20 {
        sim.step(&mut state, &[lift], DEFAULT_DT).unwrap();
        let g = &state.grasps[0];
        for (i, &v) in g.vertices.iter().enumerate() {
            assert_eq!(state.positions[v], g.frame.apply(&g.offsets[i]));
        }
    }
}

#[test]
fn stepping_is_deterministic() {
    let scene = build_scene(Task::Wrapping, 8);
    let mut a = init_state(&scene).unwrap();
    let verts = grasp_vertices_near(&a, &a.positions[0]).unwrap();
    a.add_grasp(verts).unwrap();
    let mut b = a.clone();
    let d = RigidTransform::from_rotvec(Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.0, 1e-3, 5e-4));
    for _ in 0..100 {
        a = step(&a, &scene, &[d], DEFAULT_DT).unwrap();
    }
    let sim = Simulator::new(&scene).unwrap();
    for _ in 0..100 {
        sim.step(&mut b, &[d], DEFAULT_DT).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn step_rejects_bad_time_steps() {
    let scene = build_scene(Task::Retraction, 9);
    let state = fresh_state(&scene);
    for dt in [0.0, -1e-3, 6e-3, f64::NAN] {
        assert!(matches!(step(&state, &scene, &[], dt), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn blow_up_is_reported() {
    let scene = free_scene(1.0);
    let mut state = fresh_state(&scene);
    state.velocities[0] = Vec3::new(f64::INFINITY, 0.0, 0.0);
    assert!(matches!(
        step(&state, &scene, &[], 1e-3),
        Err(Error::NumericBlowup { step: 1 })
    ));
}

fn camera() -> CameraView {
    CameraView::new(Vec3::zeros(), Vec3::x(), [32, 32], 60.0).unwrap()
}

#[test]
fn z_buffer_keeps_the_nearest_point() {
    let one = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
    assert_eq!(render_partial_view(&one, &camera()).unwrap(), one);

    let ray = PointCloud::new(vec![Vec3::new(2.0, 0.1, 0.05), Vec3::new(1.0, 0.05, 0.025)]).unwrap();
    let seen = render_partial_view(&ray, &camera()).unwrap();
    assert_eq!(seen.points(), &[Vec3::new(1.0, 0.05, 0.025)]);

    let behind = PointCloud::new(vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(-2.0, 0.3, 0.0)]).unwrap();
    assert!(matches!(
        render_partial_view(&behind, &camera()),
        Err(Error::EmptyView(_))
    ));
}

#[test]
fn partial_view_is_a_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pts: Vec<Vec3> = (0..2000)
        .map(|_| {
            Vec3::new(
                rng.gen_range(0.5..2.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            )
        })
        .collect();
    let cloud = PointCloud::new(pts).unwrap();
    let seen = render_partial_view(&cloud, &camera()).unwrap();
    assert!(seen.len() <= cloud.len() && seen.len() <= 32 * 32);
    assert!(seen.points().iter().all(|p| cloud.points().contains(p)));
}

#[test]
fn unoccluded_kidney_shows_its_camera_facing_side() {
    let scene = build_scene(Task::Retraction, 11);
    let o = scene.obstacle.unwrap();
    let cam = scene.camera_view().unwrap();
    let samples = o.surface_samples(SURFACE_SPACING);
    let seen = render_partial_view(&PointCloud::new(samples.clone()).unwrap(), &cam).unwrap();
    let facing = |p: &Vec3| {
        let h = 1e-5;
        let grad = Vec3::new(
            o.signed_distance(&(p + Vec3::x() * h)) - o.signed_distance(&(p - Vec3::x() * h)),
            o.signed_distance(&(p + Vec3::y() * h)) - o.signed_distance(&(p - Vec3::y() * h)),
            o.signed_distance(&(p + Vec3::z() * h)) - o.signed_distance(&(p - Vec3::z() * h)),
        );
        grad.normalize().dot(&(cam.position - p).normalize())
    };
    // Every visible sample faces the camera, up to a few degrees at the
    // silhouette where a cell holds no front sample, and the visible set is
    // spread over the whole facing side.
    assert!(seen.points().iter().all(|p| facing(p) > -0.2));
    let front: Vec<&Vec3> = samples.iter().filter(|p| facing(p) > 0.0).collect();
    let near_seen = front
        .iter()
        .filter(|p| seen.points().iter().any(|q| (**p - q).norm() < 5e-3))
        .count();
    assert!(
        near_seen as f64 >= 0.95 * front.len() as f64,
        "{near_seen}/{}",
        front.len()
    );
}

#[test]
fn kidney_hidden_under_the_sheet_is_an_empty_view() {
    let mut scene = free_scene(0.0);
    let t = &scene.tissue;
    let middle = (0..t.vertex_count()).map(|v| scene.draped_positions()[v]).sum::<Vec3>() / t.vertex_count() as f64;
    scene.obstacle = Some(Obstacle::Ellipsoid {
        half_axes: [0.015, 0.015, 0.002],
        pose: RigidTransform::from_translation(Vec3::new(middle.x, middle.y, 0.0)),
    });
    scene.tissue.drape = Drape::Heightfield {
        placement: RigidTransform::identity(),
        gap: 2e-3,
    };
    scene.camera = CameraSpec {
        position: Vec3::new(middle.x, middle.y, 0.3),
        look_at: Vec3::new(middle.x, middle.y, 0.0),
        // Cells of about 1.7 mm, no finer than the tissue surface samples.
        grid: [128, 128],
        fov_deg: 40.0,
    };
    let state = fresh_state(&scene);
    let (tissue, kidney) = raw_view(&scene, &state, &scene.camera_view().unwrap()).unwrap();
    assert!(!tissue.is_empty());
    assert!(kidney.is_empty());
    let err = observe(&scene, &state, &scene.camera_view().unwrap(), 64).unwrap_err();
    assert!(matches!(err, Error::EmptyView(_)), "{err}");
}

#[test]
fn lifting_the_sheet_reveals_more_kidney() {
    // The raised flap first swings into the line of sight, so the count dips
    // before it climbs. From the most occluded frame on it must only grow.
    for seed in [1000, 1002, 1003] {
        let scene = build_scene(Task::Retraction, seed);
        let (_, demo) = demonstrate(&scene, &DemoConfig::default()).unwrap();
        let cam = scene.camera_view().unwrap();
        let last = demo.commands.last().unwrap().step;
        let counts: Vec<usize> = (0..=10)
            .map(|k| {
                let upto = (k as f64 / 10.0 * last as f64).round() as usize;
                let prefix: Vec<_> = demo.commands.iter().filter(|c| c.step <= upto).cloned().collect();
                let state = replay(&scene, &prefix, DEFAULT_DT).unwrap();
                raw_view(&scene, &state, &cam).unwrap().1.len()
            })
            .collect();
        let fewest = *counts.iter().min().unwrap();
        let low = counts.iter().rposition(|&c| c == fewest).unwrap();
        assert!(
            counts[low..].windows(2).all(|w| w[1] >= w[0]),
            "seed {seed}: {counts:?}"
        );
        assert!(counts[10] > counts[0], "seed {seed}: {counts:?}");
    }
}
