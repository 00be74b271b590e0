//! Goal-conditioned closed-loop control: transport matching picks where to
//! grasp, local rigid fits decide how to move.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cloud::{
    chamfer, kabsch_fit, knn, mean_pairwise_distance, sinkhorn_with_cost, CostKind, PointCloud, RigidTransform, Vec3,
};
use crate::demo::{grasp_vertices_near, task_metric};
use crate::error::{Error, Result};
use crate::sim::{init_state, observe_current, DeformableState, Scene, Simulator, Task, DEFAULT_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub gain: f64,
    pub max_rotation_deg: f64,
    /// Per-step translation bound, m.
    pub max_translation: f64,
    /// Current points around each grasp used for the rigid fit.
    pub neighbors: usize,
    pub max_iterations: usize,
    /// Chamfer to goal below which the episode stops, m².
    pub threshold: f64,
    /// Simulation steps per control iteration.
    pub substeps: usize,
    pub dt: f64,
    pub n_points: usize,
    /// Sinkhorn temperature as a fraction of the squared mean pairwise
    /// distance.
    pub epsilon_scale: f64,
    pub sinkhorn_iters: usize,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            gain: 0.3,
            max_rotation_deg: 10.0,
            max_translation: 5e-3,
            neighbors: 64,
            max_iterations: 60,
            threshold: 1e-4,
            substeps: 25,
            dt: DEFAULT_DT,
            n_points: crate::demo::DEFAULT_N,
            epsilon_scale: 1e-2,
            sinkhorn_iters: 100,
        }
    }
}

/// Grasp-frame changes, one per arm, each rotating about its frame origin
/// before translating.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub deltas: Vec<RigidTransform>,
    /// Set when a rigid fit was degenerate and that arm's delta was zeroed.
    pub degenerate: bool,
}

impl Action {
    pub fn zero(arms: usize) -> Self {
        Self {
            deltas: vec![RigidTransform::identity(); arms],
            degenerate: false,
        }
    }

    /// World-frame transform equivalent to arm `arm`'s delta.
    pub fn world_transform(&self, arm: usize, origin: &Vec3) -> RigidTransform {
        let d = &self.deltas[arm];
        RigidTransform {
            rotation: d.rotation,
            translation: origin - d.rotation * origin + d.translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmGrasp {
    pub vertices: Vec<usize>,
    pub frame: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSpec {
    pub arms: Vec<ArmGrasp>,
}

impl GraspSpec {
    pub fn from_state(state: &DeformableState) -> Result<Self> {
        if state.grasps.is_empty() {
            return Err(Error::invalid("state has no grasp"));
        }
        Ok(Self {
            arms: state
                .grasps
                .iter()
                .map(|g| ArmGrasp {
                    vertices: g.vertices.clone(),
                    frame: g.frame,
                })
                .collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.arms.len() > 2 {
            return Err(Error::invalid(format!("{} arms, expected 1 or 2", self.arms.len())));
        }
        if self.arms.iter().any(|a| a.vertices.is_empty()) {
            return Err(Error::invalid("empty grasp vertex set"));
        }
        if let [a, b] = &self.arms[..] {
            if a.vertices.iter().any(|v| b.vertices.contains(v)) {
                return Err(Error::invalid("grasp vertex sets overlap"));
            }
        }
        Ok(())
    }
}

fn barycentric(current: &PointCloud, other: &PointCloud, epsilon: f64, config: &ServoConfig) -> Result<Vec<Vec3>> {
    let (_, plan) = sinkhorn_with_cost(
        current,
        other,
        epsilon,
        config.sinkhorn_iters,
        CostKind::SquaredEuclidean,
    )?;
    Ok(plan.barycentric_map(other))
}

/// Where each current point should go. The barycentric image of `current`
/// under an entropic plan to `goal` is blurred towards local means, so the
/// same blur of `current` onto itself is subtracted; identical clouds give
/// zero displacement exactly.
pub fn goal_targets(current: &PointCloud, goal: &PointCloud, config: &ServoConfig) -> Result<Vec<Vec3>> {
    let scale = mean_pairwise_distance(current, goal);
    let epsilon = (config.epsilon_scale * scale * scale).max(1e-12);
    let there = barycentric(current, goal, epsilon, config)?;
    let here = barycentric(current, current, epsilon, config)?;
    Ok(current
        .points()
        .iter()
        .zip(there.iter().zip(&here))
        .map(|(x, (t, h))| x + (t - h))
        .collect())
}

/// Minimum separation of two manipulation points as a fraction of the
/// current cloud's bounding-box diagonal.
pub const MIN_SEPARATION: f64 = 0.25;

/// Current points with the largest displacement to their matched goal
/// position. Ties resolve to the lowest index.
pub fn select_manipulation_points(
    current: &PointCloud,
    goal: &PointCloud,
    count: usize,
    config: &ServoConfig,
) -> Result<Vec<Vec3>> {
    if count != 1 && count != 2 {
        return Err(Error::invalid(format!("count must be 1 or 2, got {count}")));
    }
    let targets = goal_targets(current, goal, config)?;
    let scores: Vec<f64> = current
        .points()
        .iter()
        .zip(&targets)
        .map(|(p, t)| (t - p).norm())
        .collect();
    let mut order: Vec<usize> = (0..current.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let first = current.get(order[0]);
    let mut out = vec![first];
    if count == 2 {
        let min_sep = MIN_SEPARATION * current.bbox_diagonal();
        let second = order
            .iter()
            .map(|&i| current.get(i))
            .find(|p| (p - first).norm() >= min_sep)
            .ok_or_else(|| Error::invalid("no point satisfies the separation constraint"))?;
        out.push(second);
    }
    Ok(out)
}

/// One control step: fit a rigid motion to the neighbourhood of each grasp,
/// scale it by the gain and clip it to the step bounds.
pub fn compute_action(
    current: &PointCloud,
    goal: &PointCloud,
    grasp: &GraspSpec,
    config: &ServoConfig,
) -> Result<Action> {
    grasp.validate()?;
    let targets = goal_targets(current, goal, config)?;
    let mut action = Action::zero(grasp.arms.len());
    for (arm, g) in grasp.arms.iter().enumerate() {
        let origin = g.frame.translation;
        let idx = knn(current, &origin, config.neighbors.min(current.len()))?;
        let src = current.select(&idx);
        let dst = PointCloud::new(idx.iter().map(|&i| targets[i]).collect())?;
        let fit = match kabsch_fit(&src, &dst, &vec![1.0; idx.len()]) {
            Ok(t) => t,
            Err(Error::DegenerateFit(msg)) => {
                warn!("arm {arm}: degenerate fit ({msg}), holding still");
                action.degenerate = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        // World map x ↦ R·x + t as a rotation about the grasp origin plus a
        // shift of that origin.
        let shift = fit.rotation * origin + fit.translation - origin;
        let rotvec = fit.rotvec() * config.gain;
        let shift = shift * config.gain;
        action.deltas[arm] = clip(rotvec, shift, config);
    }
    Ok(action)
}

fn clip(rotvec: Vec3, shift: Vec3, config: &ServoConfig) -> RigidTransform {
    let max_angle = config.max_rotation_deg.to_radians();
    let angle = rotvec.norm();
    let rotvec = if angle > max_angle {
        rotvec * (max_angle / angle)
    } else {
        rotvec
    };
    let dist = shift.norm();
    let shift = if dist > config.max_translation {
        shift * (config.max_translation / dist)
    } else {
        shift
    };
    RigidTransform::from_rotvec(rotvec, shift)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSource {
    Learned,
    Oracle,
}

impl GoalSource {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalSource::Learned => "learned",
            GoalSource::Oracle => "oracle",
        }
    }
}

impl fmt::Display for GoalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GoalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(GoalSource::Learned),
            "oracle" => Ok(GoalSource::Oracle),
            _ => Err(Error::invalid(format!("unknown goal source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    NumericBlowup,
    EmptyView,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::NumericBlowup => "numeric-blowup",
            Termination::EmptyView => "empty-view",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scene_seed: u64,
    pub task: Task,
    pub goal_source: GoalSource,
    /// Chamfer to goal at every observation, iteration 0 first.
    pub chamfers: Vec<f64>,
    /// Task metric of the full tissue surface at the start and the end.
    pub initial_metric: f64,
    pub final_metric: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl EpisodeReport {
    pub fn initial_chamfer(&self) -> f64 {
        self.chamfers[0]
    }

    pub fn final_chamfer(&self) -> f64 {
        *self.chamfers.last().expect("at least one observation")
    }
}

/// Runs the closed loop from a grasped state until the observed cloud is
/// within `threshold` of the goal or the iteration budget runs out.
pub fn servo_loop(
    scene: &Scene,
    mut state: DeformableState,
    goal: &PointCloud,
    source: GoalSource,
    config: &ServoConfig,
) -> Result<EpisodeReport> {
    if state.grasps.is_empty() {
        return Err(Error::invalid("servo needs a grasped state"));
    }
    let sim = Simulator::new(scene)?;
    let camera = scene.camera_view()?;
    let initial_metric = task_metric(scene, &state)?;
    let mut chamfers = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        let current = match observe_current(scene, &state, &camera, config.n_points) {
            Ok(c) => c,
            Err(Error::EmptyView(msg)) => {
                warn!("seed {}: {msg}", scene.rng_seed);
                break Termination::EmptyView;
            }
            Err(e) => return Err(e),
        };
        let c = chamfer(&current, goal);
        chamfers.push(c);
        if c < config.threshold {
            break Termination::Converged;
        }
        if iterations == config.max_iterations {
            break Termination::MaxIterations;
        }
        let grasp = GraspSpec::from_state(&state)?;
        let action = compute_action(&current, goal, &grasp, config)?;
        iterations += 1;
        match sim.advance(&mut state, &action.deltas, config.substeps, config.dt) {
            Ok(()) => {}
            Err(Error::NumericBlowup { step }) => {
                warn!("seed {}: simulation blew up at step {step}", scene.rng_seed);
                break Termination::NumericBlowup;
            }
            Err(e) => return Err(e),
        }
    };
    if chamfers.is_empty() {
        chamfers.push(f64::NAN);
    }
    let final_metric = if state.is_finite() {
        task_metric(scene, &state)?
    } else {
        0.0
    };
    Ok(EpisodeReport {
        scene_seed: scene.rng_seed,
        task: scene.task,
        goal_source: source,
        chamfers,
        initial_metric,
        final_metric,
        iterations,
        termination,
    })
}

/// Arms used per task.
pub fn arm_count(task: Task) -> usize {
    match task {
        Task::Retraction => 1,
        Task::Wrapping => 2,
    }
}

/// Settles the scene, picks manipulation points from the first view and
/// attaches the grasps.
pub fn prepare_episode(scene: &Scene, goal: &PointCloud, config: &ServoConfig) -> Result<DeformableState> {
    let mut state = init_state(scene)?;
    let camera = scene.camera_view()?;
    let current = observe_current(scene, &state, &camera, config.n_points)?;
    let points = select_manipulation_points(&current, goal, arm_count(scene.task), config)?;
    let mut taken: Vec<usize> = Vec::new();
    for p in &points {
        let mut vertices = grasp_vertices_near(&state, p)?;
        vertices.retain(|v| !taken.contains(v));
        taken.extend(&vertices);
        state.add_grasp(vertices)?;
    }
    Ok(state)
}

/// A full episode from the scene's rest state.
pub fn run_episode(
    scene: &Scene,
    goal: &PointCloud,
    source: GoalSource,
    config: &ServoConfig,
) -> Result<EpisodeReport> {
    let state = prepare_episode(scene, goal, config)?;
    servo_loop(scene, state, goal, source, config)
}

pub const REPORT_HEADER: [&str; 7] = [
    "scene_seed",
    "task",
    "goal_source",
    "iterations",
    "final_metric",
    "final_chamfer",
    "termination",
];

/// Appends report rows to `path`, writing the header when the file is new.
pub fn append_reports(path: &Path, reports: &[EpisodeReport]) -> Result<()> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::corrupt(path, e.to_string());
    if fresh {
        w.write_record(REPORT_HEADER).map_err(io)?;
    }
    for r in reports {
        w.write_record([
            r.scene_seed.to_string(),
            r.task.to_string(),
            r.goal_source.to_string(),
            r.iterations.to_string(),
            r.final_metric.to_string(),
            r.final_chamfer().to_string(),
            r.termination.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
