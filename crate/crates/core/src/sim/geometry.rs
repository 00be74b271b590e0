//! Closest-point queries and surface sampling for the rigid obstacles.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::cloud::{Cylinder, RigidTransform, Vec3};

/// Rigid obstacle primitive. The pose maps the primitive's local frame to
/// world; a cylinder's axis is its local z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Obstacle {
    Ellipsoid {
        half_axes: [f64; 3],
        pose: RigidTransform,
    },
    Cylinder {
        radius: f64,
        height: f64,
        pose: RigidTransform,
    },
}

/// Nearest surface point and outward unit normal for a point inside an
/// obstacle.
#[derive(Debug, Clone, Copy)]
pub struct Contact {
    pub point: Vec3,
    pub normal: Vec3,
    pub depth: f64,
}

impl Obstacle {
    pub fn pose(&self) -> &RigidTransform {
        match self {
            Obstacle::Ellipsoid { pose, .. } | Obstacle::Cylinder { pose, .. } => pose,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose().translation
    }

    /// Cheap inside test in the local frame.
    pub fn contains(&self, p: &Vec3) -> bool {
        let y = self.pose().inverse().apply(p);
        match *self {
            Obstacle::Ellipsoid { half_axes: e, .. } => {
                (y.x / e[0]).powi(2) + (y.y / e[1]).powi(2) + (y.z / e[2]).powi(2) < 1.0
            }
            Obstacle::Cylinder { radius, height, .. } => {
                y.x * y.x + y.y * y.y < radius * radius && y.z.abs() < 0.5 * height
            }
        }
    }

    /// Contact data if `p` lies strictly inside, else `None`.
    pub fn penetration(&self, p: &Vec3) -> Option<Contact> {
        if !self.contains(p) {
            return None;
        }
        let pose = self.pose();
        let y = pose.inverse().apply(p);
        let (x, n) = match *self {
            Obstacle::Ellipsoid { half_axes, .. } => {
                let x = ellipsoid_closest(half_axes, y);
                let n = Vec3::new(
                    x.x / half_axes[0].powi(2),
                    x.y / half_axes[1].powi(2),
                    x.z / half_axes[2].powi(2),
                );
                (x, n.normalize())
            }
            Obstacle::Cylinder { radius, height, .. } => cylinder_closest_inside(radius, height, y),
        };
        Some(Contact {
            point: pose.apply(&x),
            normal: pose.rotation * n,
            depth: (x - y).norm(),
        })
    }

    /// Signed distance to the surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let y = self.pose().inverse().apply(p);
        match *self {
            Obstacle::Ellipsoid { half_axes, .. } => {
                let d = (ellipsoid_closest(half_axes, y) - y).norm();
                if self.contains(p) {
                    -d
                } else {
                    d
                }
            }
            Obstacle::Cylinder { radius, height, .. } => {
                let r = (y.x * y.x + y.y * y.y).sqrt();
                let dr = r - radius;
                let dz = y.z.abs() - 0.5 * height;
                if dr <= 0.0 && dz <= 0.0 {
                    dr.max(dz)
                } else {
                    (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
                }
            }
        }
    }

    /// Height of the upper surface above the world point `(x, y)`, if the
    /// vertical line through it hits the obstacle.
    pub fn top_height(&self, x: f64, y: f64) -> Option<f64> {
        let pose = self.pose();
        let inv = pose.inverse();
        // Intersect the vertical line p(s) = (x, y, s) in local coordinates.
        let o = inv.apply(&Vec3::new(x, y, 0.0));
        let d = inv.rotation * Vec3::z();
        
        match *self {
            Obstacle::Ellipsoid { half_axes: e, .. } => {
                let w = Vec3::new(1.0 / e[0], 1.0 / e[1], 1.0 / e[2]);
                let (os, ds) = (o.component_mul(&w), d.component_mul(&w));
                let a = ds.norm_squared();
                let b = 2.0 * os.dot(&ds);
                let c = os.norm_squared() - 1.0;
                let disc = b * b - 4.0 * a * c;
                (disc >= 0.0).then(|| (-b + disc.sqrt()) / (2.0 * a))
            }
            Obstacle::Cylinder { radius, height, .. } => {
                let mut best: Option<f64> = None;
                let mut consider = |s: f64| best = Some(best.map_or(s, |b: f64| b.max(s)));
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        for s in [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)] {
                            if (o.z + s * d.z).abs() <= 0.5 * height {
                                consider(s);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [-0.5 * height, 0.5 * height] {
                        let s = (zc - o.z) / d.z;
                        let q = o + d * s;
                        if q.x * q.x + q.y * q.y <= radius * radius {
                            consider(s);
                        }
                    }
                }
                best
            }
        }
    }

    /// Approximately uniform surface samples with the given spacing.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vec3> {
        let pose = self.pose();
        match *self {
            Obstacle::Ellipsoid { half_axes: e, .. } => {
                // The sphere is stretched by up to the longest half-axis, so
                // it is sampled densely enough for that stretch everywhere.
                let longest = e[0].max(e[1]).max(e[2]);
                let n = ((4.0 * PI * longest * longest / (spacing * spacing)).ceil() as usize).max(64);
                fibonacci_sphere(n)
                    .into_iter()
                    .map(|u| pose.apply(&Vec3::new(u.x * e[0], u.y * e[1], u.z * e[2])))
                    .collect()
            }
            Obstacle::Cylinder { radius, height, .. } => {
                let na = ((TAU * radius / spacing).ceil() as usize).max(8);
                let nh = ((height / spacing).ceil() as usize).max(2);
                let mut out = Vec::with_capacity(na * (nh + 1) + 2 * na * na / 4);
                for l in 0..=nh {
                    let z = -0.5 * height + height * l as f64 / nh as f64;
                    for k in 0..na {
                        let t = TAU * k as f64 / na as f64;
                        out.push(pose.apply(&Vec3::new(radius * t.cos(), radius * t.sin(), z)));
                    }
                }
                let rings = ((radius / spacing).ceil() as usize).max(1);
                for side in [-1.0, 1.0] {
                    for r in 1..rings {
                        let rr = radius * r as f64 / rings as f64;
                        let m = ((TAU * rr / spacing).ceil() as usize).max(6);
                        for k in 0..m {
                            let t = TAU * k as f64 / m as f64;
                            out.push(pose.apply(&Vec3::new(rr * t.cos(), rr * t.sin(), side * 0.5 * height)));
                        }
                    }
                    out.push(pose.apply(&Vec3::new(0.0, 0.0, side * 0.5 * height)));
                }
                out
            }
        }
    }

    /// Coverage-metric view of a cylindrical obstacle.
    pub fn as_cylinder(&self) -> Option<Cylinder> {
        match *self {
            Obstacle::Cylinder { radius, height, pose } => Cylinder::with_reference(
                pose.translation,
                pose.rotation * Vec3::z(),
                pose.rotation * Vec3::x(),
                radius,
                height,
            )
            .ok(),
            Obstacle::Ellipsoid { .. } => None,
        }
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

/// Closest point on the axis-aligned ellipsoid with half-axes `e` to the
/// local point `y`, inside or outside.
///
/// The closest point is `xᵢ = eᵢ² yᵢ / (t + eᵢ²)` where `t` is the root of
/// `Σ (eᵢ yᵢ / (t + eᵢ²))² = 1` on `(−e_min², ∞)`, found by bisection.
pub fn ellipsoid_closest(e: [f64; 3], y: Vec3) -> Vec3 {
    let f = |t: f64| -> f64 { (0..3).map(|i| (e[i] * y[i] / (t + e[i] * e[i])).powi(2)).sum::<f64>() - 1.0 };
    let imin = (0..3).min_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
    let emin2 = e[imin] * e[imin];
    let lo_t = -emin2;

    // When y has no component along the shortest axis, the root may not exist
    // above −e_min²; the closest point then leaves the other coordinates at
    // their limiting values and lifts off along the shortest axis.
    let probe = lo_t + emin2 * 1e-12;
    if y[imin].abs() < 1e-15 && f(probe) <= 0.0 {
        let mut x = Vec3::zeros();
        let mut rest = 1.0;
        for i in 0..3 {
            if i != imin {
                let d = e[i] * e[i] - emin2;
                x[i] = if d > 0.0 { e[i] * e[i] * y[i] / d } else { 0.0 };
                rest -= (x[i] / e[i]).powi(2);
            }
        }
        x[imin] = e[imin] * rest.max(0.0).sqrt();
        return x;
    }

    let mut lo = lo_t;
    let emax = e.iter().copied().fold(0.0, f64::max);
    let mut hi = (emax * y.norm()).max(emin2);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Vec3::new(
        e[0] * e[0] * y[0] / (t + e[0] * e[0]),
        e[1] * e[1] * y[1] / (t + e[1] * e[1]),
        e[2] * e[2] * y[2] / (t + e[2] * e[2]),
    )
}

/// Closest surface point and outward normal for a local point inside the
/// finite cylinder.
fn cylinder_closest_inside(radius: f64, height: f64, y: Vec3) -> (Vec3, Vec3) {
    let r = (y.x * y.x + y.y * y.y).sqrt();
    let to_side = radius - r;
    let to_cap = 0.5 * height - y.z.abs();
    if to_side <= to_cap {
        let radial = if r > 1e-15 {
            Vec3::new(y.x / r, y.y / r, 0.0)
        } else {
            Vec3::x()
        };
        (Vec3::new(radial.x * radius, radial.y * radius, y.z), radial)
    } else {
        let s = if y.z >= 0.0 { 1.0 } else { -1.0 };
        (Vec3::new(y.x, y.y, s * 0.5 * height), Vec3::new(0.0, 0.0, s))
    }
}
