//! Scripted demonstrators and the on-disk demonstration dataset.

mod dataset;

pub use dataset::{
    read_commands, read_dataset, read_manifest, subset_indices, write_commands, write_dataset, Manifest, MANIFEST,
};

use serde::{Deserialize, Serialize};

use crate::cloud::{coverage_percentage, knn, success_percentage, PointCloud, RigidTransform, Vec3};
use crate::error::{Error, Result};
use crate::sim::{
    init_state, observe, observe_current, tissue_cloud, CameraView, DeformableState, Obstacle, Scene, Simulator, Task,
    DEFAULT_DT, WRAP_ARC,
};

/// Points per stored cloud unless configured otherwise.
pub const DEFAULT_N: usize = 512;

/// Vertices attached to each grasp.
pub const GRASP_VERTICES: usize = 9;

/// Retraction lift direction, degrees above horizontal.
pub const LIFT_ANGLE_DEG: f64 = 30.0;
/// Retraction advance per control step, m.
pub const LIFT_INCREMENT: f64 = 2e-3;
pub const MAX_RETRACTION_STEPS: usize = 400;
/// Wrapping angular advance per control step, degrees.
pub const WRAP_INCREMENT_DEG: f64 = 3.0;
pub const MIN_WRAP_COVERAGE: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Grasp,
    Move,
}

/// One entry of a command log. Commands sharing a `step` execute together:
/// grasps attach first, then all moves are spread over `substeps`
/// simulation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub step: usize,
    pub arm: usize,
    pub kind: CommandKind,
    /// Rotation vector of the move, applied about the grasp frame origin.
    pub rotvec: Vec3,
    pub translation: Vec3,
    pub substeps: usize,
    /// Grasped vertex indices (grasp commands only).
    pub vertices: Vec<usize>,
}

impl Command {
    fn grasp(step: usize, arm: usize, vertices: Vec<usize>) -> Self {
        Self {
            step,
            arm,
            kind: CommandKind::Grasp,
            rotvec: Vec3::zeros(),
            translation: Vec3::zeros(),
            substeps: 0,
            vertices,
        }
    }

    fn movement(step: usize, arm: usize, rotvec: Vec3, translation: Vec3, substeps: usize) -> Self {
        Self {
            step,
            arm,
            kind: CommandKind::Move,
            rotvec,
            translation,
            substeps,
            vertices: Vec::new(),
        }
    }

    pub fn delta(&self) -> RigidTransform {
        RigidTransform::from_rotvec(self.rotvec, self.translation)
    }
}

/// Control-rate settings shared by demonstrators, replay and the servo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub n_points: usize,
    /// Simulation steps per control step.
    pub substeps: usize,
    /// Simulation steps of rest before the terminal observation.
    pub hold_steps: usize,
    pub dt: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_N,
            substeps: 25,
            hold_steps: 100,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Observed tissue cloud after every control step, first to last.
    pub waypoints: Vec<PointCloud>,
    pub commands: Vec<Command>,
    /// Grasp frame origins after every control step, one list per arm.
    pub grasp_paths: Vec<Vec<Vec3>>,
    /// Task metric (success or coverage %) of each waypoint, computed on the
    /// full tissue surface.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task: Task,
    pub current: PointCloud,
    pub context: PointCloud,
    pub goal: PointCloud,
    pub scene: Scene,
    pub commands: Vec<Command>,
}

/// Task metric of the full (unoccluded) tissue surface.
pub fn task_metric(scene: &Scene, state: &DeformableState) -> Result<f64> {
    let tissue = tissue_cloud(scene, state)?;
    cloud_metric(scene, &tissue)
}

/// Success percentage (retraction) or coverage percentage (wrapping).
pub fn cloud_metric(scene: &Scene, cloud: &PointCloud) -> Result<f64> {
    match scene.task {
        Task::Retraction => {
            let plane = scene
                .target_plane
                .ok_or_else(|| Error::invalid("retraction scene without a target plane"))?;
            Ok(success_percentage(cloud, &plane))
        }
        Task::Wrapping => {
            let cyl = scene
                .obstacle
                .and_then(|o| o.as_cylinder())
                .ok_or_else(|| Error::invalid("wrapping scene without a cylinder"))?;
            coverage_percentage(cloud, &cyl, cyl.default_proximity())
        }
    }
}

pub fn demonstrate(scene: &Scene, config: &DemoConfig) -> Result<(Trajectory, Demonstration)> {
    match scene.task {
        Task::Retraction => demonstrate_retraction(scene, config),
        Task::Wrapping => demonstrate_wrapping(scene, config),
    }
}

/// The `GRASP_VERTICES` lattice vertices nearest `point`.
pub fn grasp_vertices_near(state: &DeformableState, point: &Vec3) -> Result<Vec<usize>> {
    let lattice = PointCloud::new(state.positions.clone())?;
    knn(&lattice, point, GRASP_VERTICES.min(lattice.len()))
}

/// Midpoint of the top-layer lattice row `j`.
fn edge_midpoint(scene: &Scene, state: &DeformableState, j: usize) -> Vec3 {
    let t = &scene.tissue;
    let k = t.nz - 1;
    let (lo, hi) = ((t.nx - 1) / 2, t.nx / 2);
    0.5 * (state.positions[t.index(lo, j, k)] + state.positions[t.index(hi, j, k)])
}

struct Recorder<'a> {
    scene: &'a Scene,
    sim: Simulator,
    camera: CameraView,
    config: DemoConfig,
    state: DeformableState,
    traj: Trajectory,
    step: usize,
}

impl<'a> Recorder<'a> {
    fn new(scene: &'a Scene, config: &DemoConfig) -> Result<Self> {
        let sim = Simulator::new(scene)?;
        let state = init_state(scene)?;
        Ok(Self {
            scene,
            sim,
            camera: scene.camera_view()?,
            config: *config,
            state,
            traj: Trajectory {
                waypoints: Vec::new(),
                commands: Vec::new(),
                grasp_paths: Vec::new(),
                metrics: Vec::new(),
            },
            step: 0,
        })
    }

    fn grasp(&mut self, vertices: Vec<usize>) -> Result<()> {
        let arm = self.state.grasps.len();
        self.state.add_grasp(vertices.clone())?;
        self.traj.commands.push(Command::grasp(self.step, arm, vertices));
        self.traj.grasp_paths.push(Vec::new());
        Ok(())
    }

    fn record(&mut self) -> Result<()> {
        let current = observe_current(self.scene, &self.state, &self.camera, self.config.n_points)?;
        self.traj.waypoints.push(current.quantized_f32());
        self.traj.metrics.push(task_metric(self.scene, &self.state)?);
        for (path, g) in self.traj.grasp_paths.iter_mut().zip(&self.state.grasps) {
            path.push(g.origin());
        }
        Ok(())
    }

    fn advance(&mut self, deltas: &[RigidTransform], substeps: usize) -> Result<()> {
        // Execute exactly what the log will replay.
        let mut logged = Vec::with_capacity(deltas.len());
        for (arm, d) in deltas.iter().enumerate() {
            let cmd = Command::movement(self.step, arm, d.rotvec(), d.translation, substeps);
            logged.push(cmd.delta());
            self.traj.commands.push(cmd);
        }
        self.sim.advance(&mut self.state, &logged, substeps, self.config.dt)?;
        self.step += 1;
        self.record()
    }

    fn hold(&mut self) -> Result<()> {
        let still = vec![RigidTransform::identity(); self.state.grasps.len()];
        self.advance(&still, self.config.hold_steps)
    }

    fn finish(self, first: crate::sim::Observation) -> (Trajectory, Demonstration) {
        let goal = self.traj.waypoints.last().expect("at least one waypoint").clone();
        let demo = Demonstration {
            task: self.scene.task,
            current: first.current.quantized_f32(),
            context: first.context.quantized_f32(),
            goal,
            scene: self.scene.clone(),
            commands: self.traj.commands.clone(),
        };
        (self.traj, demo)
    }
}

/// Grasps the middle of the tissue edge on the plane's negative side and
/// lifts it along the plane normal, tilted `LIFT_ANGLE_DEG` upward, in
/// `LIFT_INCREMENT` steps until every tissue point lies beyond the plane.
pub fn demonstrate_retraction(scene: &Scene, config: &DemoConfig) -> Result<(Trajectory, Demonstration)> {
    if scene.task != Task::Retraction {
        return Err(Error::invalid("retraction demonstrator needs a retraction scene"));
    }
    let plane = scene
        .target_plane
        .ok_or_else(|| Error::invalid("retraction scene without a target plane"))?;
    let mut rec = Recorder::new(scene, config)?;
    let first = observe(scene, &rec.state, &rec.camera, config.n_points)?;
    let edge = edge_midpoint(scene, &rec.state, 0);
    let vertices = grasp_vertices_near(&rec.state, &edge)?;
    rec.grasp(vertices)?;
    rec.record()?;

    let angle = LIFT_ANGLE_DEG.to_radians();
    let dir = plane.normal * angle.cos() + Vec3::z() * angle.sin();
    let delta = RigidTransform::from_translation(dir * LIFT_INCREMENT);
    let mut moves = 0;
    loop {
        if moves >= MAX_RETRACTION_STEPS {
            return Err(Error::DemoFailure(format!(
                "retraction seed {}: success {:.1}% after {moves} steps",
                scene.rng_seed,
                rec.traj.metrics.last().copied().unwrap_or(0.0)
            )));
        }
        rec.advance(&[delta], config.substeps)?;
        moves += 1;
        if *rec.traj.metrics.last().unwrap() >= 100.0 {
            rec.hold()?;
            if *rec.traj.metrics.last().unwrap() >= 100.0 {
                break;
            }
        }
    }
    Ok(rec.finish(first))
}

/// Grasps both free edges and carries each around the tube along a
/// circular arc of radius `R + cell/2`, ending `WRAP_ARC` degrees from the
/// crest. The grasps are held at the end; the held shape is the goal.
pub fn demonstrate_wrapping(scene: &Scene, config: &DemoConfig) -> Result<(Trajectory, Demonstration)> {
    let Some(Obstacle::Cylinder { radius, pose, .. }) = scene.obstacle else {
        return Err(Error::invalid("wrapping demonstrator needs a cylinder scene"));
    };
    if scene.task != Task::Wrapping {
        return Err(Error::invalid("wrapping demonstrator needs a wrapping scene"));
    }
    let mut rec = Recorder::new(scene, config)?;
    let first = observe(scene, &rec.state, &rec.camera, config.n_points)?;
    let t = &scene.tissue;
    for j in [0, t.ny - 1] {
        let edge = edge_midpoint(scene, &rec.state, j);
        let vertices = grasp_vertices_near(&rec.state, &edge)?;
        rec.grasp(vertices)?;
    }
    rec.record()?;

    let center = pose.translation;
    let axis = pose.rotation * Vec3::z();
    let crest = pose.rotation * Vec3::x();
    let side = axis.cross(&crest);
    let polar = |p: &Vec3| {
        let rel = p - center;
        let s = rel.dot(&axis);
        let radial = rel - axis * s;
        (s, radial.norm(), radial.dot(&side).atan2(radial.dot(&crest)))
    };
    let arc_radius = radius + 0.5 * t.cell;
    let target = WRAP_ARC.to_radians();

    let starts: Vec<(f64, f64, f64)> = rec.state.grasps.iter().map(|g| polar(&g.origin())).collect();
    let spans: Vec<f64> = starts.iter().map(|&(_, _, th)| th.signum() * target - th).collect();
    let longest = spans.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let count = (longest / WRAP_INCREMENT_DEG.to_radians()).ceil().max(1.0) as usize;

    let point_at = |s: f64, r: f64, th: f64| center + axis * s + (crest * th.cos() + side * th.sin()) * r;
    for k in 1..=count {
        let f = k as f64 / count as f64;
        let f_prev = (k - 1) as f64 / count as f64;
        let deltas: Vec<RigidTransform> = starts
            .iter()
            .zip(&spans)
            .zip(&rec.state.grasps)
            .map(|((&(s, r0, th0), &span), g)| {
                let r = r0 + (arc_radius - r0) * f;
                let goal = point_at(s, r, th0 + span * f);
                RigidTransform::from_rotvec(axis * (span * (f - f_prev)), goal - g.origin())
            })
            .collect();
        rec.advance(&deltas, config.substeps)?;
    }
    rec.hold()?;
    let coverage = *rec.traj.metrics.last().unwrap();
    if coverage < MIN_WRAP_COVERAGE {
        return Err(Error::DemoFailure(format!(
            "wrapping seed {}: coverage {coverage:.1}% below {MIN_WRAP_COVERAGE}%",
            scene.rng_seed
        )));
    }
    Ok(rec.finish(first))
}

/// Re-executes a command log from the scene's settled initial state.
pub fn replay(scene: &Scene, commands: &[Command], dt: f64) -> Result<DeformableState> {
    let sim = Simulator::new(scene)?;
    let mut state = init_state(scene)?;
    let mut i = 0;
    while i < commands.len() {
        let step = commands[i].step;
        let mut deltas: Vec<RigidTransform> = Vec::new();
        let mut substeps = 0;
        while i < commands.len() && commands[i].step == step {
            let c = &commands[i];
            match c.kind {
                CommandKind::Grasp => {
                    if c.arm != state.grasps.len() {
                        return Err(Error::invalid(format!("grasp for arm {} out of order", c.arm)));
                    }
                    state.add_grasp(c.vertices.clone())?;
                }
                CommandKind::Move => {
                    if c.arm != deltas.len() {
                        return Err(Error::invalid(format!("move for arm {} out of order", c.arm)));
                    }
                    deltas.push(c.delta());
                    substeps = c.substeps;
                }
            }
            i += 1;
        }
        if !deltas.is_empty() {
            sim.advance(&mut state, &deltas, substeps, dt)?;
        }
    }
    Ok(state)
}
