//! Lattice mass-spring tissue over rigid obstacles, with kinematic grasps,
//! semi-implicit time stepping and z-buffered partial views.
//!
//! World frame: z up, ground plane at z = 0, SI units throughout.

mod geometry;
mod physics;
mod render;

pub use geometry::{ellipsoid_closest, Contact, Obstacle};
pub use physics::{init_state, step, DeformableState, Grasp, Simulator, Spring};
pub use render::{
    observe, observe_current, raw_view, render_partial_view, resample, tissue_cloud, tissue_surface, CameraSpec,
    CameraView, Observation, SURFACE_SPACING,
};

use std::f64::consts::TAU;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Plane, RigidTransform, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Retraction,
    Wrapping,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Retraction => "retraction",
            Task::Wrapping => "wrapping",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retraction" => Ok(Task::Retraction),
            "wrapping" => Ok(Task::Wrapping),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the undeformed lattice is laid into the scene before settling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Drape {
    /// Each lattice column is laid over the highest of the ground and the
    /// obstacle's upper surface, spaced by arc length so no spring starts
    /// stretched. In `placement`'s frame the last row (j = ny−1) sits at
    /// y = 0 and the sheet runs toward −y; x is centered.
    Heightfield { placement: RigidTransform, gap: f64 },
    /// Sheet laid over the crest of the cylindrical obstacle: lattice x runs
    /// along the axis, lattice y is arc length from the middle row, and the
    /// part beyond the sides hangs straight down.
    /// Wrapped over the tube crest up to `wrap_deg` each side, straight
    /// along the tangent beyond.
    OverTube { axial_offset: f64, gap: f64, wrap_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Lattice spacing, m.
    pub cell: f64,
    /// Mass per vertex, kg.
    pub mass: f64,
    pub k_structural: f64,
    pub k_shear: f64,
    pub k_bend: f64,
    /// Per-vertex viscous drag, N·s/m.
    pub damping: f64,
    /// Dashpot along each spring, N·s/m.
    pub spring_damping: f64,
    pub drape: Drape,
    /// Vertices held fixed at their draped position.
    pub anchored: Vec<usize>,
}

impl TissueSpec {
    pub fn vertex_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    /// Lattice coordinates `(i, j, k)` of a vertex index.
    pub fn coords(&self, v: usize) -> (usize, usize, usize) {
        (v % self.nx, (v / self.nx) % self.ny, v / (self.nx * self.ny))
    }

    /// Rest position in the lattice frame, centered in x and y.
    pub fn rest_local(&self, v: usize) -> Vec3 {
        let (i, j, k) = self.coords(v);
        Vec3::new(
            (i as f64 - 0.5 * (self.nx - 1) as f64) * self.cell,
            (j as f64 - 0.5 * (self.ny - 1) as f64) * self.cell,
            k as f64 * self.cell,
        )
    }

    pub fn width(&self) -> f64 {
        (self.nx - 1) as f64 * self.cell
    }

    pub fn length(&self) -> f64 {
        (self.ny - 1) as f64 * self.cell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub task: Task,
    pub obstacle: Option<Obstacle>,
    pub tissue: TissueSpec,
    pub gravity: Vec3,
    pub camera: CameraSpec,
    /// Retraction only.
    pub target_plane: Option<Plane>,
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tissue;
        if t.nx < 2 || t.ny < 2 || t.nz < 1 {
            return Err(Error::invalid(format!("lattice {}×{}×{} too small", t.nx, t.ny, t.nz)));
        }
        let positive = [t.cell, t.mass, t.k_structural, t.k_shear, t.k_bend];
        if positive.iter().any(|v| !(*v > 0.0)) || t.damping < 0.0 || t.spring_damping < 0.0 {
            return Err(Error::invalid("tissue cell, mass and stiffnesses must be positive"));
        }
        if let Some(&a) = t.anchored.iter().find(|&&a| a >= t.vertex_count()) {
            return Err(Error::invalid(format!("anchored vertex {a} out of range")));
        }
        match self.obstacle {
            Some(Obstacle::Ellipsoid { half_axes, .. }) if half_axes.iter().any(|h| !(*h > 0.0)) => {
                Err(Error::invalid("ellipsoid half-axes must be positive"))
            }
            Some(Obstacle::Cylinder { radius, height, .. }) if !(radius > 0.0 && height > 0.0) => {
                Err(Error::invalid("cylinder radius and height must be positive"))
            }
            Some(Obstacle::Cylinder { .. }) if matches!(t.drape, Drape::OverTube { .. }) => Ok(()),
            _ if matches!(t.drape, Drape::OverTube { .. }) => {
                Err(Error::invalid("tube drape needs a cylindrical obstacle"))
            }
            _ => Ok(()),
        }
    }

    /// Initial (unsettled) vertex positions.
    pub fn draped_positions(&self) -> Vec<Vec3> {
        let t = &self.tissue;
        match t.drape {
            Drape::Heightfield { placement, gap } => self.heightfield_drape(&placement, gap),
            Drape::OverTube {
                axial_offset,
                gap,
                wrap_deg,
            } => {
                let Some(Obstacle::Cylinder { radius, pose, .. }) = self.obstacle else {
                    unreachable!("validated scene")
                };
                let axis = pose.rotation * Vec3::z();
                let up = Vec3::z();
                let side = up.cross(&axis).normalize();
                let thick = (t.nz - 1) as f64 * t.cell;
                let r = radius + gap + 0.5 * thick;
                let wrap = wrap_deg.to_radians();
                let normal = |phi: f64| up * phi.cos() + side * phi.sin();
                (0..t.vertex_count())
                    .map(|v| {
                        let local = t.rest_local(v);
                        let base = pose.translation + axis * (local.x + axial_offset);
                        let s = local.y;
                        let (mid, n) = if s.abs() <= wrap * r {
                            let phi = s / r;
                            (normal(phi) * r, normal(phi))
                        } else {
                            let phi = wrap * s.signum();
                            let tangent = (side * phi.cos() - up * phi.sin()) * s.signum();
                            (normal(phi) * r + tangent * (s.abs() - wrap * r), normal(phi))
                        };
                        base + mid + n * (local.z - 0.5 * thick)
                    })
                    .collect()
            }
        }
    }

    fn surface_height(&self, x: f64, y: f64) -> f64 {
        self.obstacle.and_then(|o| o.top_height(x, y)).unwrap_or(0.0).max(0.0)
    }

    fn heightfield_drape(&self, placement: &RigidTransform, gap: f64) -> Vec<Vec3> {
        let t = &self.tissue;
        let mut out = vec![Vec3::zeros(); t.vertex_count()];
        let fine = t.cell / 64.0;
        for i in 0..t.nx {
            let x = (i as f64 - 0.5 * (t.nx - 1) as f64) * t.cell;
            let ground = |y: f64| {
                let w = placement.apply(&Vec3::new(x, y, 0.0));
                Vec3::new(w.x, w.y, self.surface_height(w.x, w.y) + gap)
            };
            // Walk toward −y, dropping a vertex every `cell` of arc length.
            let mut rows = Vec::with_capacity(t.ny);
            let mut y = 0.0;
            let mut prev = ground(y);
            rows.push(prev);
            let mut arc = 0.0;
            while rows.len() < t.ny {
                let next = ground(y - fine);
                let seg = (next - prev).norm();
                if arc + seg >= t.cell {
                    let f = (t.cell - arc) / seg;
                    let p = prev + (next - prev) * f;
                    rows.push(p);
                    prev = p;
                    y -= fine * f;
                    arc = 0.0;
                } else {
                    arc += seg;
                    prev = next;
                    y -= fine;
                }
            }
            for (r, p) in rows.iter().enumerate() {
                let j = t.ny - 1 - r;
                for k in 0..t.nz {
                    out[t.index(i, j, k)] = p + Vec3::new(0.0, 0.0, k as f64 * t.cell);
                }
            }
        }
        out
    }

    pub fn camera_view(&self) -> Result<CameraView> {
        self.camera.view()
    }
}

/// Half-axis and lattice ranges of the randomized retraction scenes.
pub const KIDNEY_LONG_AXIS: (f64, f64) = (0.04, 0.07);
pub const KIDNEY_SHORT_AXES: (f64, f64) = (0.02, 0.035);
pub const SHEET_VERTICES: (usize, usize) = (10, 16);
pub const SHEET_CELL: (f64, f64) = (0.006, 0.010);

/// Lattice ranges of the wrapping scenes.
pub const WRAP_ROWS: (usize, usize) = (24, 32);
pub const WRAP_CELL: (f64, f64) = (0.004, 0.006);
/// Arc swept by each wrapping grasp, measured from the crest.
pub const WRAP_ARC: f64 = 240.0;
/// Initial wrap of the sheet over the crest, each side, degrees.
pub const WRAP_DRAPE_DEG: f64 = 90.0;
pub const WRAP_LAYERS: usize = 1;

/// mass, k_structural, k_shear, k_bend, drag, spring dashpot.
fn tissue_material() -> (f64, f64, f64, f64, f64, f64) {
    (5e-4, 20.0, 5.0, 5.0, 5e-3, 5e-3)
}

/// Randomized, fully deterministic scene for `task`.
pub fn build_scene(task: Task, rng_seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5ce0_e5ee_d000_0000);
    match task {
        Task::Retraction => retraction_scene(&mut rng, rng_seed),
        Task::Wrapping => wrapping_scene(&mut rng, rng_seed),
    }
}

fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn retraction_scene(rng: &mut ChaCha8Rng, rng_seed: u64) -> Scene {
    let a = rng.gen_range(KIDNEY_LONG_AXIS.0..=KIDNEY_LONG_AXIS.1);
    let b = rng.gen_range(KIDNEY_SHORT_AXES.0..=KIDNEY_SHORT_AXES.1);
    let c = rng.gen_range(KIDNEY_SHORT_AXES.0..=KIDNEY_SHORT_AXES.1);
    let nx = rng.gen_range(SHEET_VERTICES.0..=SHEET_VERTICES.1);
    let ny = rng.gen_range(SHEET_VERTICES.0..=SHEET_VERTICES.1);
    let cell = rng.gen_range(SHEET_CELL.0..=SHEET_CELL.1);
    let yaw = rng.gen_range(0.0..TAU);
    let cx = rng.gen_range(-0.02..=0.02);
    let cy = rng.gen_range(-0.02..=0.02);
    // Part of the kidney is left uncovered at one tip, and the sheet reaches
    // a little past the kidney on the side that will be grasped.
    let exposed = rng.gen_range(0.3..=0.6) * a;
    let tip = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    // The anchored edge lies on the positive side of the plane, on the
    // kidney's flank; the free edge hangs over the negative side.
    let anchor_y = rng.gen_range(0.3..=0.6) * b;

    let rot = yaw_matrix(yaw);
    let center = Vec3::new(cx, cy, c);
    let pose = RigidTransform {
        rotation: rot,
        translation: center,
    };
    let obstacle = Obstacle::Ellipsoid {
        half_axes: [a, b, c],
        pose,
    };
    let normal = rot * Vec3::y();
    let target_plane = Plane::new(center, normal).expect("unit normal");

    let width = (nx - 1) as f64 * cell;
    let off_x = tip * (a - exposed - 0.5 * width);
    let placement = RigidTransform {
        rotation: rot,
        translation: Vec3::new(cx, cy, 0.0) + rot * Vec3::new(off_x, anchor_y, 0.0),
    };

    let (mass, ks, ksh, kb, drag, sd) = tissue_material();
    let nz = 2;
    let mut tissue = TissueSpec {
        nx,
        ny,
        nz,
        cell,
        mass,
        k_structural: ks,
        k_shear: ksh,
        k_bend: kb,
        damping: drag,
        spring_damping: sd,
        drape: Drape::Heightfield { placement, gap: 1e-3 },
        anchored: Vec::new(),
    };
    // The edge on the positive side of the plane is fixed to the body wall.
    tissue.anchored = (0..nz)
        .flat_map(|k| (0..nx).map(move |i| (i, k)))
        .map(|(i, k)| tissue.index(i, ny - 1, k))
        .collect();

    let camera = CameraSpec {
        position: center + rot * Vec3::new(0.0, -0.12, 0.0) + Vec3::new(0.0, 0.0, 0.28),
        look_at: center,
        grid: [128, 128],
        fov_deg: 50.0,
    };
    Scene {
        task: Task::Retraction,
        obstacle: Some(obstacle),
        tissue,
        gravity: Vec3::new(0.0, 0.0, -9.81),
        camera,
        target_plane: Some(target_plane),
        rng_seed,
    }
}

fn wrapping_scene(rng: &mut ChaCha8Rng, rng_seed: u64) -> Scene {
    let nx = rng.gen_range(SHEET_VERTICES.0..=SHEET_VERTICES.1);
    let ny_half = rng.gen_range(WRAP_ROWS.0 / 2..=WRAP_ROWS.1 / 2);
    // Odd row count puts a lattice row exactly on the crest.
    let ny = 2 * ny_half + 1;
    let cell = rng.gen_range(WRAP_CELL.0..=WRAP_CELL.1);
    let yaw = rng.gen_range(0.0..TAU);
    let cx = rng.gen_range(-0.02..=0.02);
    let cy = rng.gen_range(-0.02..=0.02);

    let half_len = ny_half as f64 * cell;
    let arc = WRAP_ARC.to_radians();
    // The sheet half reaches exactly the grasp arc's end at full sweep.
    let radius = half_len / arc - 0.5 * cell;
    let width = (nx - 1) as f64 * cell;
    let height = 0.9 * width;
    let elevation = half_len + radius + 0.03;

    let rot = yaw_matrix(yaw);
    // Local z (tube axis) along the horizontal direction rot·x.
    let axis = rot * Vec3::x();
    let side = Vec3::z().cross(&axis);
    // Local x → world up (the crest), local z → tube axis.
    let tube_rot = Matrix3::from_columns(&[Vec3::z(), axis.cross(&Vec3::z()), axis]);
    let center = Vec3::new(cx, cy, elevation);
    let pose = RigidTransform {
        rotation: tube_rot,
        translation: center,
    };
    let obstacle = Obstacle::Cylinder { radius, height, pose };

    let (mass, ks, ksh, kb, drag, sd) = tissue_material();
    let mut tissue = TissueSpec {
        nx,
        ny,
        nz: WRAP_LAYERS,
        cell,
        mass,
        k_structural: ks,
        k_shear: ksh,
        k_bend: kb,
        damping: drag,
        spring_damping: sd,
        drape: Drape::OverTube {
            axial_offset: 0.0,
            gap: 1e-3,
            wrap_deg: WRAP_DRAPE_DEG,
        },
        anchored: Vec::new(),
    };
    tissue.anchored = (0..WRAP_LAYERS)
        .flat_map(|k| (0..nx).map(move |i| (i, k)))
        .map(|(i, k)| tissue.index(i, ny_half, k))
        .collect();

    let camera = CameraSpec {
        position: center + side * 0.22 + axis * 0.08 + Vec3::new(0.0, 0.0, 0.12),
        look_at: center - Vec3::new(0.0, 0.0, 0.02),
        grid: [128, 128],
        fov_deg: 50.0,
    };
    Scene {
        task: Task::Wrapping,
        obstacle: Some(obstacle),
        tissue,
        gravity: Vec3::new(0.0, 0.0, -9.81),
        camera,
        target_plane: None,
        rng_seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        for task in [Task::Retraction, Task::Wrapping] {
            assert_eq!(build_scene(task, 17), build_scene(task, 17));
            assert_ne!(build_scene(task, 17), build_scene(task, 18));
        }
    }

    #[test]
    fn ranges_hold_over_many_seeds() {
        for seed in 0..1000 {
            let s = build_scene(Task::Retraction, seed);
            let Some(Obstacle::Ellipsoid {
                half_axes: [a, b, c], ..
            }) = s.obstacle
            else {
                panic!("retraction uses an ellipsoid")
            };
            assert!((KIDNEY_LONG_AXIS.0..=KIDNEY_LONG_AXIS.1).contains(&a));
            assert!((KIDNEY_SHORT_AXES.0..=KIDNEY_SHORT_AXES.1).contains(&b));
            assert!((KIDNEY_SHORT_AXES.0..=KIDNEY_SHORT_AXES.1).contains(&c));
            let t = &s.tissue;
            assert!((SHEET_VERTICES.0..=SHEET_VERTICES.1).contains(&t.nx));
            assert!((SHEET_VERTICES.0..=SHEET_VERTICES.1).contains(&t.ny));
            assert!((SHEET_CELL.0..=SHEET_CELL.1).contains(&t.cell));
            s.validate().unwrap();
        }
    }

    #[test]
    fn target_plane_geometry() {
        for seed in 0..50 {
            let s = build_scene(Task::Retraction, seed);
            let o = s.obstacle.unwrap();
            let plane = s.target_plane.unwrap();
            assert!((plane.origin - o.center()).norm() < 1e-15);
            let long_axis = o.pose().rotation * Vec3::x();
            assert!(plane.normal.dot(&long_axis).abs() < 1e-12);
            assert!(plane.normal.z.abs() < 1e-12);
            assert!((plane.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_json_round_trip() {
        for task in [Task::Retraction, Task::Wrapping] {
            let s = build_scene(task, 3);
            let json = serde_json::to_string(&s).unwrap();
            let back: Scene = serde_json::from_str(&json).unwrap();
            assert_eq!(s, back);
        }
    }

    #[test]
    fn tube_pose_is_proper() {
        for seed in 0..20 {
            let s = build_scene(Task::Wrapping, seed);
            let o = s.obstacle.unwrap();
            let r = o.pose().rotation;
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let axis = r * Vec3::z();
            assert!(axis.z.abs() < 1e-12);
            s.validate().unwrap();
        }
    }
}
