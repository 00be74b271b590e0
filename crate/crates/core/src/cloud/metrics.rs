use serde::{Deserialize, Serialize};

use super::{nearest, Plane, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Two-sided Chamfer distance: mean squared nearest-neighbor distance from
/// `a` to `b` plus the same from `b` to `a`. Units m².
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    directed(a.points(), b.points()) + directed(b.points(), a.points())
}

fn directed(from: &[Vec3], to: &[Vec3]) -> f64 {
    from.iter().map(|p| nearest(to, p).1).sum::<f64>() / from.len() as f64
}

/// Percentage of points strictly on the positive side of `plane`.
pub fn success_percentage(cloud: &PointCloud, plane: &Plane) -> f64 {
    let beyond = cloud.points().iter().filter(|p| plane.signed_distance(p) > 0.0).count();
    100.0 * beyond as f64 / cloud.len() as f64
}

/// Angular × axial bins of the coverage grid.
pub const COVERAGE_GRID: (usize, usize) = (36, 10);

/// Finite right circular cylinder centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: Vec3,
    /// Unit axis direction.
    pub axis: Vec3,
    /// Unit direction perpendicular to `axis` where the angle 0 bin starts.
    pub reference: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    pub fn new(center: Vec3, axis: Vec3, radius: f64, height: f64) -> Result<Self> {
        let an = axis.norm();
        if !(an > 1e-12) {
            return Err(Error::invalid("cylinder axis must be nonzero"));
        }
        let axis = axis / an;
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let reference = (helper - axis * axis.dot(&helper)).normalize();
        Self::with_reference(center, axis, reference, radius, height)
    }

    pub fn with_reference(center: Vec3, axis: Vec3, reference: Vec3, radius: f64, height: f64) -> Result<Self> {
        if !(radius > 0.0 && height > 0.0) {
            return Err(Error::invalid(format!(
                "degenerate cylinder: radius {radius}, height {height}"
            )));
        }
        let axis = axis.normalize();
        let reference = (reference - axis * axis.dot(&reference)).normalize();
        Ok(Self {
            center,
            axis,
            reference,
            radius,
            height,
        })
    }

    /// Center of the lateral-surface patch for angular bin `k` and axial bin `l`.
    pub fn bin_center(&self, k: usize, l: usize) -> Vec3 {
        let (na, nh) = COVERAGE_GRID;
        let theta = (k as f64 + 0.5) * std::f64::consts::TAU / na as f64;
        let s = -0.5 * self.height + (l as f64 + 0.5) * self.height / nh as f64;
        let side = self.axis.cross(&self.reference);
        self.center + self.axis * s + (self.reference * theta.cos() + side * theta.sin()) * self.radius
    }

    pub fn default_proximity(&self) -> f64 {
        0.2 * self.radius
    }
}

/// Percentage of the cylinder's lateral surface bins that have a cloud point
/// within `proximity` of the bin's patch center.
pub fn coverage_percentage(cloud: &PointCloud, cylinder: &Cylinder, proximity: f64) -> Result<f64> {
    if !(cylinder.radius > 0.0 && cylinder.height > 0.0) {
        return Err(Error::invalid("degenerate cylinder"));
    }
    if !(proximity > 0.0) {
        return Err(Error::invalid(format!("proximity must be positive, got {proximity}")));
    }
    let (na, nh) = COVERAGE_GRID;
    let r2 = proximity * proximity;
    let mut covered = 0;
    for l in 0..nh {
        for k in 0..na {
            let c = cylinder.bin_center(k, l);
            if cloud.points().iter().any(|p| (p - c).norm_squared() <= r2) {
                covered += 1;
            }
        }
    }
    Ok(100.0 * covered as f64 / (na * nh) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(xyz: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_xyz(xyz).unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b), 0.5);
        assert_eq!(chamfer(&b, &a), 0.5);
        assert_eq!(chamfer(&a, &a), 0.0);
    }

    #[test]
    fn success_examples() {
        let plane = Plane::new(Vec3::zeros(), Vec3::x()).unwrap();
        let c = cloud(&[[-1.0, 0.0, 0.0], [-0.5, 1.0, 0.0], [0.5, 0.0, 0.0], [2.0, 3.0, 0.0]]);
        assert_eq!(success_percentage(&c, &plane), 50.0);
        let all = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(success_percentage(&all, &plane), 100.0);
        let none = cloud(&[[-1.0, 0.0, 0.0], [0.0, 5.0, 0.0]]);
        assert_eq!(success_percentage(&none, &plane), 0.0);
    }

    fn tube() -> Cylinder {
        Cylinder::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 1.0, 1.0), 0.02, 0.1).unwrap()
    }

    #[test]
    fn coverage_of_all_bin_centers_is_full() {
        let cyl = tube();
        let pts: Vec<Vec3> = (0..10)
            .flat_map(|l| (0..36).map(move |k| (k, l)))
            .map(|(k, l)| cyl.bin_center(k, l))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        assert_eq!(coverage_percentage(&c, &cyl, cyl.default_proximity()).unwrap(), 100.0);
    }

    #[test]
    fn coverage_half_angular_bins() {
        let cyl = tube();
        let pts: Vec<Vec3> = (0..10)
            .flat_map(|l| (0..18).map(move |k| (k, l)))
            .map(|(k, l)| cyl.bin_center(k, l))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        // Adjacent bin centers sit 2πR/36 ≈ 0.17R apart, so the proximity
        // has to be below that for the bins to count independently.
        assert_eq!(coverage_percentage(&c, &cyl, 0.05 * cyl.radius).unwrap(), 50.0);
    }

    #[test]
    fn coverage_far_cloud_is_zero() {
        let cyl = tube();
        let c = cloud(&[[5.0, 5.0, 5.0]]);
        assert_eq!(coverage_percentage(&c, &cyl, 0.004).unwrap(), 0.0);
        assert!(coverage_percentage(&c, &cyl, 0.0).is_err());
        let mut bad = cyl;
        bad.radius = 0.0;
        assert!(coverage_percentage(&c, &bad, 0.004).is_err());
        assert!(Cylinder::new(Vec3::zeros(), Vec3::z(), 0.01, -1.0).is_err());
    }
}
