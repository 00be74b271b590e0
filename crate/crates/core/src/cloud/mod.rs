//! Point-cloud containers, sampling, neighbor search, distances and task metrics.
//!
//! All distances are in meters. Operations here are pure functions of their
//! inputs and may be called from any number of threads.

mod assignment;
mod metrics;
pub mod ply;
mod rigid;
mod transport;

pub use assignment::solve_assignment;
pub use metrics::{chamfer, coverage_percentage, success_percentage, Cylinder, COVERAGE_GRID};
pub use rigid::{kabsch_fit, RigidTransform};
pub use transport::{
    emd_exact, mean_pairwise_distance, sinkhorn_ot, sinkhorn_with_cost, CostKind, PlanKind, TransportPlan,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A finite, nonempty, ordered set of 3D points.
///
/// Order only matters for indexing; every metric in this module is invariant
/// to permutations of the points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn from_xyz(xyz: &[[f64; 3]]) -> Result<Self> {
        Self::new(xyz.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + offset).collect(),
        }
    }

    pub fn transformed(&self, tf: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| tf.apply(p)).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    /// Rounds every coordinate to the nearest 32-bit float, the precision the
    /// PLY files store. Clouds that go to disk are quantized first so that
    /// reading them back is bit-exact.
    pub fn quantized_f32(&self) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p.map(|c| c as f32 as f64)).collect(),
        }
    }
}

/// Oriented plane. `normal` is kept at unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub origin: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(origin: Vec3, normal: Vec3) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::invalid("plane normal must be a nonzero finite vector"));
        }
        Ok(Self {
            origin,
            normal: normal / n,
        })
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }
}

/// Farthest point sampling.
///
/// The seed is the point farthest from the centroid; every later pick
/// maximizes the distance to the already selected set. Ties go to the lowest
/// index. Returns the selected indices in pick order.
pub fn fps_indices(cloud: &PointCloud, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("fps: k = {k} outside 1..={n}")));
    }
    let pts = cloud.points();
    let c = cloud.centroid();
    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d > best {
            best = d;
            seed = i;
        }
    }

    let mut picked = Vec::with_capacity(k);
    picked.push(seed);
    let mut min_d: Vec<f64> = pts.iter().map(|p| (p - pts[seed]).norm_squared()).collect();
    while picked.len() < k {
        let mut next = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        picked.push(next);
        let q = pts[next];
        for (d, p) in min_d.iter_mut().zip(pts) {
            let dq = (p - q).norm_squared();
            if dq < *d {
                *d = dq;
            }
        }
    }
    Ok(picked)
}

pub fn fps_downsample(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    Ok(cloud.select(&fps_indices(cloud, k)?))
}

/// Indices of the `k` nearest points to `query`, ascending by distance,
/// ties to the lowest index.
pub fn knn(cloud: &PointCloud, query: &Vec3, k: usize) -> Result<Vec<usize>> {
    knn_points(cloud.points(), query, k)
}

pub(crate) fn knn_points(points: &[Vec3], query: &Vec3, k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("knn: k = {k} outside 1..={n}")));
    }
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// Index and squared distance of the nearest point, ties to the lowest index.
pub(crate) fn nearest(points: &[Vec3], query: &Vec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = (p - query).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
        assert!(PointCloud::from_flat(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn fps_collinear_picks_far_end_then_opposite() {
        // centroid is 3.25, so x = 10 seeds; then x = 0 is the maximin choice.
        let cloud = line(&[0.0, 1.0, 2.0, 10.0]);
        let picked = fps_downsample(&cloud, 2).unwrap();
        assert_eq!(picked.get(0).x, 10.0);
        assert_eq!(picked.get(1).x, 0.0);
    }

    #[test]
    fn fps_full_selection_is_a_permutation() {
        let cloud = line(&[3.0, -1.0, 7.0, 2.5, 0.0]);
        let mut idx = fps_indices(&cloud, cloud.len()).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_single_is_farthest_from_centroid() {
        let cloud = line(&[0.0, 1.0, 2.0, -5.0]);
        assert_eq!(fps_indices(&cloud, 1).unwrap(), vec![3]);
    }

    #[test]
    fn fps_rejects_bad_k() {
        let cloud = line(&[0.0, 1.0]);
        assert!(fps_indices(&cloud, 0).is_err());
        assert!(fps_indices(&cloud, 3).is_err());
    }

    #[test]
    fn fps_ties_go_to_lowest_index() {
        // symmetric square: all four corners equidistant from the centroid
        let cloud =
            PointCloud::from_xyz(&[[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]]).unwrap();
        assert_eq!(fps_indices(&cloud, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn knn_examples() {
        let cloud = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(knn(&cloud, &Vec3::new(0.9, 0.0, 0.0), 2).unwrap(), vec![2, 0]);
        assert_eq!(knn(&cloud, &Vec3::new(3.0, 0.0, 0.0), 1).unwrap(), vec![1]);
        assert_eq!(knn(&cloud, &Vec3::new(-1.0, 0.0, 0.0), 3).unwrap(), vec![0, 2, 1]);
        assert!(knn(&cloud, &Vec3::zeros(), 4).is_err());
        assert!(knn(&cloud, &Vec3::zeros(), 0).is_err());
    }

    #[test]
    fn knn_ties_lowest_index() {
        let cloud = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(knn(&cloud, &Vec3::zeros(), 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn plane_normalizes() {
        let p = Plane::new(Vec3::zeros(), Vec3::new(0.0, 3.0, 4.0)).unwrap();
        assert!((p.normal.norm() - 1.0).abs() < 1e-12);
        assert!(Plane::new(Vec3::zeros(), Vec3::zeros()).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let c = PointCloud::from_xyz(&[[0.1, 0.2, 0.3]]).unwrap().quantized_f32();
        assert_eq!(c, c.quantized_f32());
    }
}
