use nalgebra::{Matrix3, Rotation3, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Proper rigid motion `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checked constructor: `rotation` must be orthonormal with det +1 (±1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid(format!(
                "not a proper rigid transform (orthonormality error {ortho:.2e}, det {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by the rotation vector `rotvec` (axis × angle, radians)
    /// followed by a translation.
    pub fn from_rotvec(rotvec: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(rotvec).into_inner(),
            translation,
        }
    }

    /// Rotation by `rotvec` about `pivot`, then translation by `shift`.
    pub fn about_point(rotvec: Vec3, pivot: Vec3, shift: Vec3) -> Self {
        let r = Rotation3::new(rotvec).into_inner();
        Self {
            rotation: r,
            translation: pivot - r * pivot + shift,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation vector (axis × angle) of the rotational part.
    pub fn rotvec(&self) -> Vec3 {
        Rotation3::from_matrix(&self.rotation).scaled_axis()
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotvec().norm()
    }

    /// Re-projects the rotation onto SO(3) to remove accumulated round-off.
    pub fn orthonormalized(&self) -> RigidTransform {
        RigidTransform {
            rotation: Rotation3::from_matrix(&self.rotation).into_inner(),
            translation: self.translation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RigidRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        RigidRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = RigidRepr::deserialize(d)?;
        let rot = Matrix3::from_fn(|i, j| repr.rotation[i][j]);
        RigidTransform::new(rot, Vec3::from(repr.translation)).map_err(serde::de::Error::custom)
    }
}

/// Weighted least-squares rigid alignment of corresponded point sets,
/// minimizing `Σ wᵢ‖R·srcᵢ + t − dstᵢ‖²` over proper rotations.
pub fn kabsch_fit(src: &PointCloud, dst: &PointCloud, weights: &[f64]) -> Result<RigidTransform> {
    let n = src.len();
    if n != dst.len() || n != weights.len() {
        return Err(Error::DegenerateFit(format!(
            "size mismatch: {n} source, {} target, {} weights",
            dst.len(),
            weights.len()
        )));
    }
    if n < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {n}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::DegenerateFit("weights must be nonnegative".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::DegenerateFit("weights sum to zero".into()));
    }

    let cs = src
        .points()
        .iter()
        .zip(weights)
        .fold(Vec3::zeros(), |a, (p, w)| a + p * *w)
        / wsum;
    let cd = dst
        .points()
        .iter()
        .zip(weights)
        .fold(Vec3::zeros(), |a, (p, w)| a + p * *w)
        / wsum;

    let mut spread = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for ((s, d), w) in src.points().iter().zip(dst.points()).zip(weights) {
        let ds = s - cs;
        spread += ds * ds.transpose() * *w;
        h += ds * (d - cd).transpose() * *w;
    }
    let mut eig = SymmetricEigen::new(spread).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= 1e-10 * eig[0] {
        return Err(Error::DegenerateFit(format!(
            "source points are collinear or coincident (spread eigenvalues {:.3e}, {:.3e})",
            eig[0], eig[1]
        )));
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let rotation = Rotation3::from_matrix(&rotation).into_inner();
    let translation = cd - rotation * cs;
    Ok(RigidTransform { rotation, translation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn triangle() -> PointCloud {
        PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn identity_fit() {
        let s = triangle();
        let tf = kabsch_fit(&s, &s, &[1.0; 3]).unwrap();
        assert!((tf.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(tf.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_quarter_turn() {
        let s = triangle();
        let truth = RigidTransform::from_rotvec(Vec3::z() * FRAC_PI_2, Vec3::new(1.0, 2.0, 3.0));
        let d = s.transformed(&truth);
        let tf = kabsch_fit(&s, &d, &[1.0; 3]).unwrap();
        for (p, q) in s.points().iter().zip(d.points()) {
            assert!((tf.apply(p) - q).norm() < 1e-9);
        }
        assert!((tf.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_is_degenerate() {
        let s = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(kabsch_fit(&s, &s, &[1.0; 3]), Err(Error::DegenerateFit(_))));
        assert!(kabsch_fit(&triangle(), &triangle(), &[0.0; 3]).is_err());
        assert!(kabsch_fit(&triangle(), &triangle(), &[1.0; 2]).is_err());
    }

    #[test]
    fn reflection_is_corrected() {
        let s = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]).unwrap();
        let mirrored = PointCloud::new(s.points().iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect()).unwrap();
        let tf = kabsch_fit(&s, &mirrored, &[1.0; 4]).unwrap();
        assert!((tf.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_inverse_round_trip() {
        let a = RigidTransform::from_rotvec(Vec3::new(0.1, -0.4, 0.2), Vec3::new(1.0, 0.0, -2.0));
        let id = a.compose(&a.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        let json = serde_json::to_string(&a).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn about_point_fixes_pivot() {
        let pivot = Vec3::new(0.3, -0.2, 1.0);
        let tf = RigidTransform::about_point(Vec3::new(0.0, 0.5, 0.5), pivot, Vec3::zeros());
        assert!((tf.apply(&pivot) - pivot).norm() < 1e-12);
    }
}
