use serde::{Deserialize, Serialize};

use super::physics::DeformableState;
use super::Scene;
use crate::cloud::{fps_downsample, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Spacing of the dense surface samples fed to the z-buffer, m. Kept below
/// the pixel footprint at working distance so near surfaces occlude.
pub const SURFACE_SPACING: f64 = 1.5e-3;

/// Camera placement as stored in scene files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: Vec3,
    pub look_at: Vec3,
    pub grid: [usize; 2],
    pub fov_deg: f64,
}

impl CameraSpec {
    pub fn view(&self) -> Result<CameraView> {
        CameraView::new(self.position, self.look_at - self.position, self.grid, self.fov_deg)
    }
}

/// Pinhole camera with a square field of view sampled on a `grid` of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub position: Vec3,
    pub direction: Vec3,
    pub grid: [usize; 2],
    pub fov_deg: f64,
}

impl CameraView {
    pub fn new(position: Vec3, direction: Vec3, grid: [usize; 2], fov_deg: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 1e-12) {
            return Err(Error::invalid("camera direction must be nonzero"));
        }
        if grid[0] < 16 || grid[1] < 16 {
            return Err(Error::invalid(format!("camera grid {grid:?} below 16×16")));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid(format!("field of view {fov_deg}° out of range")));
        }
        Ok(Self {
            position,
            direction: direction / n,
            grid,
            fov_deg,
        })
    }

    fn basis(&self) -> (Vec3, Vec3) {
        let helper = if self.direction.z.abs() < 0.99 {
            Vec3::z()
        } else {
            Vec3::y()
        };
        let right = self.direction.cross(&helper).normalize();
        let up = right.cross(&self.direction);
        (right, up)
    }

    /// Grid cell and depth of `p`, or `None` when behind the camera or
    /// outside the field of view.
    pub fn project(&self, p: &Vec3) -> Option<(usize, f64)> {
        let (right, up) = self.basis();
        self.project_with(p, &right, &up)
    }

    fn project_with(&self, p: &Vec3, right: &Vec3, up: &Vec3) -> Option<(usize, f64)> {
        let d = p - self.position;
        let depth = d.dot(&self.direction);
        if depth <= 1e-9 {
            return None;
        }
        let half = (0.5 * self.fov_deg).to_radians().tan();
        let u = d.dot(right) / (depth * half);
        let v = d.dot(up) / (depth * half);
        if !(u.abs() <= 1.0 && v.abs() <= 1.0) {
            return None;
        }
        let [w, h] = self.grid;
        let col = (((u + 1.0) * 0.5 * w as f64) as usize).min(w - 1);
        let row = (((1.0 - v) * 0.5 * h as f64) as usize).min(h - 1);
        Some((row * w + col, depth))
    }

    /// Indices (ascending) of the points that win their grid cell's depth
    /// test. Ties go to the lower index.
    pub fn visible(&self, points: &[Vec3]) -> Result<Vec<usize>> {
        let (right, up) = self.basis();
        let [w, h] = self.grid;
        let mut best: Vec<Option<(f64, usize)>> = vec![None; w * h];
        let mut in_front = false;
        for (i, p) in points.iter().enumerate() {
            if (p - self.position).dot(&self.direction) > 1e-9 {
                in_front = true;
            }
            if let Some((cell, depth)) = self.project_with(p, &right, &up) {
                let slot = &mut best[cell];
                if slot.is_none_or(|(d, _)| depth < d) {
                    *slot = Some((depth, i));
                }
            }
        }
        if !in_front {
            return Err(Error::EmptyView("all points are behind the camera".into()));
        }
        let mut idx: Vec<usize> = best.into_iter().flatten().map(|(_, i)| i).collect();
        if idx.is_empty() {
            return Err(Error::EmptyView("no point inside the field of view".into()));
        }
        idx.sort_unstable();
        Ok(idx)
    }
}

/// Hidden-point removal: keeps, per grid cell, the point nearest the camera.
pub fn render_partial_view(positions: &PointCloud, camera: &CameraView) -> Result<PointCloud> {
    let idx = camera.visible(positions.points())?;
    Ok(positions.select(&idx))
}

/// Dense samples of the tissue's outer layers, bilinearly interpolated
/// between lattice vertices.
pub fn tissue_surface(scene: &Scene, positions: &[Vec3]) -> Vec<Vec3> {
    let t = &scene.tissue;
    let sub = ((t.cell / SURFACE_SPACING).ceil() as usize).max(1);
    let layers: Vec<usize> = if t.nz > 1 { vec![t.nz - 1, 0] } else { vec![0] };
    let (su, sv) = ((t.nx - 1) * sub + 1, (t.ny - 1) * sub + 1);
    let mut out = Vec::with_capacity(layers.len() * su * sv);
    for k in layers {
        for b in 0..sv {
            let (j, fy) = split(b, sub, t.ny);
            for a in 0..su {
                let (i, fx) = split(a, sub, t.nx);
                let p00 = positions[t.index(i, j, k)];
                let p10 = positions[t.index(i + 1, j, k)];
                let p01 = positions[t.index(i, j + 1, k)];
                let p11 = positions[t.index(i + 1, j + 1, k)];
                out.push(
                    p00 * ((1.0 - fx) * (1.0 - fy))
                        + p10 * (fx * (1.0 - fy))
                        + p01 * ((1.0 - fx) * fy)
                        + p11 * (fx * fy),
                );
            }
        }
    }
    out
}

/// Lattice cell and fraction for sample `s` with `sub` samples per cell.
fn split(s: usize, sub: usize, n: usize) -> (usize, f64) {
    let cell = (s / sub).min(n - 2);
    (cell, (s - cell * sub) as f64 / sub as f64)
}

/// Full (unoccluded) dense tissue surface as a cloud.
pub fn tissue_cloud(scene: &Scene, state: &DeformableState) -> Result<PointCloud> {
    PointCloud::new(tissue_surface(scene, &state.positions))
}

/// Segmented partial view, each part resampled to exactly `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub current: PointCloud,
    pub context: PointCloud,
    pub raw_current: usize,
    pub raw_context: usize,
}

/// Renders tissue and obstacle through one z-buffer and splits the visible
/// points by provenance: tissue → P_c, obstacle → P_T.
pub fn observe(scene: &Scene, state: &DeformableState, camera: &CameraView, n: usize) -> Result<Observation> {
    let (tissue, obstacle) = raw_view(scene, state, camera)?;
    if tissue.is_empty() {
        return Err(Error::EmptyView("no tissue point visible".into()));
    }
    if obstacle.is_empty() {
        return Err(Error::EmptyView("no context point visible".into()));
    }
    Ok(Observation {
        raw_current: tissue.len(),
        raw_context: obstacle.len(),
        current: resample(tissue, n)?,
        context: resample(obstacle, n)?,
    })
}

/// The tissue part of the view only; the obstacle may be fully hidden.
pub fn observe_current(scene: &Scene, state: &DeformableState, camera: &CameraView, n: usize) -> Result<PointCloud> {
    let (tissue, _) = raw_view(scene, state, camera)?;
    if tissue.is_empty() {
        return Err(Error::EmptyView("no tissue point visible".into()));
    }
    resample(tissue, n)
}

/// Visible tissue and obstacle points before resampling.
pub fn raw_view(scene: &Scene, state: &DeformableState, camera: &CameraView) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let mut all = tissue_surface(scene, &state.positions);
    let n_tissue = all.len();
    if let Some(o) = &scene.obstacle {
        all.extend(o.surface_samples(SURFACE_SPACING));
    }
    let idx = camera.visible(&all)?;
    let (t, o): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| i < n_tissue);
    Ok((t.iter().map(|&i| all[i]).collect(), o.iter().map(|&i| all[i]).collect()))
}

/// FPS down to `n`, or cyclic duplication up to `n`.
pub fn resample(points: Vec<Vec3>, n: usize) -> Result<PointCloud> {
    let count = points.len();
    let cloud = PointCloud::new(points)?;
    if count >= n {
        fps_downsample(&cloud, n)
    } else {
        let idx: Vec<usize> = (0..n).map(|i| i % count).collect();
        Ok(cloud.select(&idx))
    }
}
