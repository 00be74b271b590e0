use goalshape_core::cloud::*;
use nalgebra::Vector3;
use proptest::prelude::*;

fn cloud(n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n).prop_map(|xyz| PointCloud::from_xyz(&xyz).unwrap())
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(r, t)| RigidTransform::from_rotvec(Vector3::from(r), Vector3::from(t)))
}

/// Brute-force mean matching cost over every permutation.
fn brute_emd(a: &PointCloud, b: &PointCloud) -> f64 {
    fn rec(a: &[Vec3], b: &[Vec3], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(a, b, used, i + 1, acc + (a[i] - b[j]).norm(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a.points(), b.points(), &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

fn min_dist(p: &Vec3, chosen: &[Vec3]) -> f64 {
    chosen.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_nonnegative_and_rigid_invariant(a in cloud(9), b in cloud(6), tf in rigid()) {
        let d = chamfer(&a, &b);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, chamfer(&b, &a));
        prop_assert_eq!(chamfer(&a, &a), 0.0);
        let moved = chamfer(&a.transformed(&tf), &b.transformed(&tf));
        prop_assert!((moved - d).abs() < 1e-9, "{} vs {}", moved, d);
    }

    #[test]
    fn emd_matches_brute_force(n in 1usize..=6, pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 12)) {
        let a = PointCloud::from_xyz(&pts[..n]).unwrap();
        let b = PointCloud::from_xyz(&pts[6..6 + n]).unwrap();
        let (d, plan) = emd_exact(&a, &b).unwrap();
        prop_assert!((d - brute_emd(&a, &b)).abs() < 1e-9);
        prop_assert!((d - emd_exact(&b, &a).unwrap().0).abs() < 1e-9);
        let m = plan.matching().unwrap();
        let mut sorted = m.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn emd_triangle_inequality(a in cloud(5), b in cloud(5), c in cloud(5)) {
        let ab = emd_exact(&a, &b).unwrap().0;
        let bc = emd_exact(&b, &c).unwrap().0;
        let ac = emd_exact(&a, &c).unwrap().0;
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn fps_steps_attain_exhaustive_maximin(c in cloud(40), k in 1usize..=40) {
        let idx = fps_indices(&c, k).unwrap();
        let pts = c.points();
        let centroid = c.centroid();
        let far = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
        prop_assert_eq!((pts[idx[0]] - centroid).norm(), far);
        let mut chosen = vec![pts[idx[0]]];
        for &i in &idx[1..] {
            let best = pts.iter().map(|p| min_dist(p, &chosen)).fold(0.0, f64::max);
            prop_assert_eq!(min_dist(&pts[i], &chosen), best);
            chosen.push(pts[i]);
        }
        let down = fps_downsample(&c, k).unwrap();
        prop_assert!(down.points().iter().all(|p| pts.contains(p)));
    }

    #[test]
    fn sinkhorn_close_to_exact_emd(n in 2usize..=8, pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 16)) {
        let a = PointCloud::from_xyz(&pts[..n]).unwrap();
        let b = PointCloud::from_xyz(&pts[8..8 + n]).unwrap();
        let exact = emd_exact(&a, &b).unwrap().0;
        let eps = 0.01 * mean_pairwise_distance(&a, &b);
        let (approx, plan) = sinkhorn_ot(&a, &b, eps, 10_000).unwrap();
        prop_assert!((approx - exact).abs() <= 0.05 * exact + 1e-12, "{} vs {}", approx, exact);
        for s in plan.row_sums() { prop_assert!((s - 1.0 / n as f64).abs() < 1e-6); }
        for s in plan.col_sums() { prop_assert!((s - 1.0 / n as f64).abs() < 1e-6); }
    }

    #[test]
    fn sinkhorn_cost_converges_with_iterations(a in cloud(6), b in cloud(6)) {
        let eps = 0.05 * mean_pairwise_distance(&a, &b);
        let limit = sinkhorn_ot(&a, &b, eps, 100_000).unwrap().0;
        let gap = |k| (sinkhorn_ot(&a, &b, eps, k).unwrap().0 - limit).abs();
        prop_assert!(gap(200) <= gap(2) + 1e-12);
        // Both runs stop on the 1e-6 marginal tolerance, so they agree to
        // roughly that tolerance times the cost range times n. Coincident
        // points slow convergence, hence the generous budget.
        prop_assert!(gap(20_000) < 1e-4 * limit, "{}", gap(20_000));
    }

    #[test]
    fn kabsch_recovers_rigid_motion(src in cloud(12), tf in rigid()) {
        let dst = src.transformed(&tf);
        let fit = kabsch_fit(&src, &dst, &[1.0; 12]).unwrap();
        let r = fit.rotation;
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        let residual = src.points().iter().zip(dst.points())
            .map(|(s, d)| (fit.apply(s) - d).norm()).fold(0.0, f64::max);
        prop_assert!(residual < 1e-9, "{}", residual);
    }

    #[test]
    fn task_metrics_ignore_point_order(c in cloud(30), shuffle in Just(()).prop_perturb(|_, mut rng| {
        let mut order: Vec<usize> = (0..30).collect();
        for i in (1..30).rev() { order.swap(i, (rng.next_u32() as usize) % (i + 1)); }
        order
    })) {
        let permuted = c.select(&shuffle);
        let plane = Plane::new(Vector3::zeros(), Vector3::new(0.3, -0.2, 1.0)).unwrap();
        prop_assert_eq!(success_percentage(&c, &plane), success_percentage(&permuted, &plane));
        let tube = Cylinder::new(Vector3::zeros(), Vector3::z(), 0.5, 1.0).unwrap();
        let prox = tube.default_proximity();
        prop_assert_eq!(
            coverage_percentage(&c, &tube, prox).unwrap(),
            coverage_percentage(&permuted, &tube, prox).unwrap()
        );
    }
}
