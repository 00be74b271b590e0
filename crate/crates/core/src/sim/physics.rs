use serde::{Deserialize, Serialize};

use super::Scene;
use crate::cloud::{RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Settling stops once every free vertex is slower than this (m/s).
pub const SETTLE_SPEED: f64 = 1e-3;
pub const SETTLE_MAX_STEPS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub k: f64,
}

/// Kinematic attachment of a vertex set to a grasp frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub vertices: Vec<usize>,
    pub frame: RigidTransform,
    /// Vertex positions in the frame's coordinates.
    pub offsets: Vec<Vec3>,
}

impl Grasp {
    /// Frame at the centroid of the grasped vertices, world-aligned.
    pub fn attach(positions: &[Vec3], vertices: Vec<usize>) -> Grasp {
        let origin = vertices.iter().map(|&v| positions[v]).sum::<Vec3>() / vertices.len() as f64;
        let offsets = vertices.iter().map(|&v| positions[v] - origin).collect();
        Grasp {
            vertices,
            frame: RigidTransform::from_translation(origin),
            offsets,
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.frame.translation
    }

    fn world(&self, i: usize) -> Vec3 {
        self.frame.apply(&self.offsets[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub grasps: Vec<Grasp>,
    /// Number of simulation steps taken so far.
    pub steps: u64,
}

impl DeformableState {
    /// Attaches a new grasp. At most two grasps, with disjoint vertex sets.
    pub fn add_grasp(&mut self, vertices: Vec<usize>) -> Result<()> {
        if vertices.is_empty() {
            return Err(Error::invalid("grasp needs at least one vertex"));
        }
        if self.grasps.len() >= 2 {
            return Err(Error::invalid("at most two grasps"));
        }
        if let Some(&v) = vertices.iter().find(|&&v| v >= self.positions.len()) {
            return Err(Error::invalid(format!("grasp vertex {v} out of range")));
        }
        if self
            .grasps
            .iter()
            .any(|g| g.vertices.iter().any(|v| vertices.contains(v)))
        {
            return Err(Error::invalid("grasp vertex sets must be disjoint"));
        }
        self.grasps.push(Grasp::attach(&self.positions, vertices));
        Ok(())
    }

    pub fn release(&mut self) {
        self.grasps.clear();
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|p| p.iter().all(|c| c.is_finite()))
    }
}

/// Precomputed springs and vertex roles for one scene.
#[derive(Debug, Clone)]
pub struct Simulator {
    scene: Scene,
    springs: Vec<Spring>,
    anchored: Vec<bool>,
}

impl Simulator {
    pub fn new(scene: &Scene) -> Result<Self> {
        scene.validate()?;
        let t = &scene.tissue;
        let mut anchored = vec![false; t.vertex_count()];
        for &a in &t.anchored {
            anchored[a] = true;
        }
        Ok(Self {
            scene: scene.clone(),
            springs: lattice_springs(scene),
            anchored,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn springs(&self) -> &[Spring] {
        &self.springs
    }

    /// Force spring `s` exerts on its `a` end; the `b` end receives the
    /// negation.
    pub fn spring_force(&self, s: &Spring, x: &[Vec3], v: &[Vec3]) -> Vec3 {
        let d = x[s.b] - x[s.a];
        let len = d.norm();
        if len < 1e-12 {
            return Vec3::zeros();
        }
        let u = d / len;
        let rate = (v[s.b] - v[s.a]).dot(&u);
        u * (s.k * (len - s.rest) + self.scene.tissue.spring_damping * rate)
    }

    /// Kinetic plus elastic energy (gravity excluded).
    pub fn energy(&self, state: &DeformableState) -> f64 {
        let m = self.scene.tissue.mass;
        let kinetic: f64 = state.velocities.iter().map(|v| 0.5 * m * v.norm_squared()).sum();
        let elastic: f64 = self
            .springs
            .iter()
            .map(|s| {
                let e = (state.positions[s.b] - state.positions[s.a]).norm() - s.rest;
                0.5 * s.k * e * e
            })
            .sum();
        kinetic + elastic
    }

    /// Vertices that are neither anchored nor grasped.
    pub fn free_mask(&self, state: &DeformableState) -> Vec<bool> {
        let mut free: Vec<bool> = self.anchored.iter().map(|a| !a).collect();
        for g in &state.grasps {
            for &v in &g.vertices {
                free[v] = false;
            }
        }
        free
    }

    pub fn max_free_speed(&self, state: &DeformableState) -> f64 {
        let free = self.free_mask(state);
        state
            .velocities
            .iter()
            .zip(&free)
            .filter(|(_, f)| **f)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }

    /// One semi-implicit Euler step.
    ///
    /// `deltas[i]` rotates grasp frame `i` about its own origin and then
    /// translates it; missing entries hold the frame still. A frame that
    /// would drive a grasped vertex into the obstacle or the ground is pushed
    /// back out along the contact normal, and its vertices follow it exactly.
    pub fn step(&self, state: &mut DeformableState, deltas: &[RigidTransform], dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 5e-3) {
            return Err(Error::invalid(format!("dt = {dt} outside (0, 5e-3]")));
        }
        if deltas.len() > state.grasps.len() {
            return Err(Error::invalid(format!(
                "{} grasp deltas for {} grasps",
                deltas.len(),
                state.grasps.len()
            )));
        }
        let n = state.positions.len();
        if n != self.scene.tissue.vertex_count() || state.velocities.len() != n {
            return Err(Error::SizeMismatch(n, self.scene.tissue.vertex_count()));
        }
        if state
            .grasps
            .iter()
            .any(|g| g.vertices.iter().any(|&v| v >= n) || g.vertices.len() != g.offsets.len())
        {
            return Err(Error::invalid("grasp vertex index out of range"));
        }

        for (gi, grasp) in state.grasps.iter_mut().enumerate() {
            if let Some(d) = deltas.get(gi) {
                grasp.frame = RigidTransform {
                    rotation: d.rotation * grasp.frame.rotation,
                    translation: grasp.frame.translation + d.translation,
                }
                .orthonormalized();
            }
            self.push_out(grasp);
            for (i, &v) in grasp.vertices.iter().enumerate() {
                let p = grasp.world(i);
                state.velocities[v] = (p - state.positions[v]) / dt;
                state.positions[v] = p;
            }
        }

        let t = &self.scene.tissue;
        let mut force: Vec<Vec3> = state
            .velocities
            .iter()
            .map(|v| self.scene.gravity * t.mass - v * t.damping)
            .collect();
        for s in &self.springs {
            let f = self.spring_force(s, &state.positions, &state.velocities);
            force[s.a] += f;
            force[s.b] -= f;
        }

        let free = self.free_mask(state);
        let inv_m = 1.0 / t.mass;
        for v in 0..n {
            if free[v] {
                state.velocities[v] += force[v] * (inv_m * dt);
                state.positions[v] += state.velocities[v] * dt;
            } else if self.anchored[v] {
                state.velocities[v] = Vec3::zeros();
            }
        }
        for v in 0..n {
            if free[v] {
                self.resolve_contact(&mut state.positions[v], &mut state.velocities[v]);
            }
        }

        state.steps += 1;
        if !state.is_finite() {
            return Err(Error::NumericBlowup { step: state.steps });
        }
        Ok(())
    }

    /// Runs `substeps` steps, spreading each delta evenly across them.
    pub fn advance(
        &self,
        state: &mut DeformableState,
        deltas: &[RigidTransform],
        substeps: usize,
        dt: f64,
    ) -> Result<()> {
        let pieces: Vec<RigidTransform> = deltas
            .iter()
            .map(|d| RigidTransform::from_rotvec(d.rotvec() / substeps as f64, d.translation / substeps as f64))
            .collect();
        for _ in 0..substeps {
            self.step(state, &pieces, dt)?;
        }
        Ok(())
    }

    fn resolve_contact(&self, p: &mut Vec3, v: &mut Vec3) {
        for round in 0..3 {
            if let Some(o) = &self.scene.obstacle {
                if let Some(c) = o.penetration(p) {
                    *p = c.point;
                    let vn = v.dot(&c.normal);
                    if vn < 0.0 {
                        *v -= c.normal * vn;
                    }
                }
            }
            if round == 2 {
                break;
            }
            if p.z < 0.0 {
                p.z = 0.0;
                if v.z < 0.0 {
                    v.z = 0.0;
                }
            } else {
                break;
            }
        }
    }

    fn push_out(&self, grasp: &mut Grasp) {
        for _ in 0..8 {
            let mut worst: Option<(f64, Vec3)> = None;
            for i in 0..grasp.vertices.len() {
                let p = grasp.world(i);
                if let Some(c) = self.scene.obstacle.as_ref().and_then(|o| o.penetration(&p)) {
                    if worst.is_none_or(|(d, _)| c.depth > d) {
                        worst = Some((c.depth, c.normal));
                    }
                }
                if p.z < 0.0 && worst.is_none_or(|(d, _)| -p.z > d) {
                    worst = Some((-p.z, Vec3::z()));
                }
            }
            match worst {
                Some((depth, normal)) => grasp.frame.translation += normal * (depth + 1e-7),
                None => break,
            }
        }
    }

    /// Lets the tissue come to rest with the current grasps held still.
    pub fn settle(&self, state: &mut DeformableState, dt: f64) -> Result<usize> {
        for s in 1..=SETTLE_MAX_STEPS {
            self.step(state, &[], dt)?;
            if s >= 10 && self.max_free_speed(state) < SETTLE_SPEED {
                return Ok(s);
            }
        }
        Err(Error::SettleTimeout {
            steps: SETTLE_MAX_STEPS,
            max_speed: self.max_free_speed(state),
        })
    }
}

fn lattice_springs(scene: &Scene) -> Vec<Spring> {
    let t = &scene.tissue;
    let structural = [(1, 0, 0), (0, 1, 0), (0, 0, 1)];
    let shear = [
        (1, 1, 0),
        (1, -1, 0),
        (1, 0, 1),
        (1, 0, -1),
        (0, 1, 1),
        (0, 1, -1),
        (1, 1, 1),
        (1, 1, -1),
        (1, -1, 1),
        (1, -1, -1),
    ];
    let bend = [(2, 0, 0), (0, 2, 0), (0, 0, 2)];
    let groups: [(&[(i64, i64, i64)], f64); 3] =
        [(&structural, t.k_structural), (&shear, t.k_shear), (&bend, t.k_bend)];
    let mut springs = Vec::new();
    for v in 0..t.vertex_count() {
        let (i, j, k) = t.coords(v);
        for (offsets, stiffness) in groups {
            for &(di, dj, dk) in offsets {
                let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                if ni < 0 || nj < 0 || nk < 0 || ni >= t.nx as i64 || nj >= t.ny as i64 || nk >= t.nz as i64 {
                    continue;
                }
                let rest = ((di * di + dj * dj + dk * dk) as f64).sqrt() * t.cell;
                springs.push(Spring {
                    a: v,
                    b: t.index(ni as usize, nj as usize, nk as usize),
                    rest,
                    k: stiffness,
                });
            }
        }
    }
    springs
}

/// Draped and settled tissue with zero velocities and no grasps.
pub fn init_state(scene: &Scene) -> Result<DeformableState> {
    let sim = Simulator::new(scene)?;
    let positions = scene.draped_positions();
    let n = positions.len();
    let mut state = DeformableState {
        positions,
        velocities: vec![Vec3::zeros(); n],
        grasps: Vec::new(),
        steps: 0,
    };
    sim.settle(&mut state, super::DEFAULT_DT)?;
    for v in &mut state.velocities {
        *v = Vec3::zeros();
    }
    Ok(state)
}

/// Functional form of [`Simulator::step`].
pub fn step(state: &DeformableState, scene: &Scene, deltas: &[RigidTransform], dt: f64) -> Result<DeformableState> {
    let sim = Simulator::new(scene)?;
    let mut next = state.clone();
    sim.step(&mut next, deltas, dt)?;
    Ok(next)
}
