//! Training loss: Chamfer distance plus a debiased entropic transport cost.
//!
//! Both terms supply their own gradient. Chamfer holds the nearest-neighbour
//! correspondences fixed; the transport term holds the Sinkhorn plans fixed,
//! which is the exact gradient of the entropic objective at its optimum.

use goalshape_diff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::cloud::{mean_pairwise_distance, sinkhorn_with_cost, CostKind, PointCloud, TransportPlan, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_chamfer: f64,
    pub lambda_emd: f64,
    /// Sinkhorn temperature as a fraction of the target's mean pairwise
    /// distance.
    pub epsilon_scale: f64,
    pub sinkhorn_iters: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_chamfer: 1.0,
            lambda_emd: 0.5,
            epsilon_scale: 0.05,
            sinkhorn_iters: 50,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_chamfer >= 0.0
            && self.lambda_emd >= 0.0
            && self.lambda_chamfer + self.lambda_emd > 0.0
            && self.epsilon_scale > 0.0
            && self.sinkhorn_iters > 0;
        if !ok {
            return Err(Error::invalid(format!("bad loss configuration {self:?}")));
        }
        Ok(())
    }
}

/// A ground-truth cloud with the quantities that depend on it alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTarget {
    pub cloud: PointCloud,
    pub epsilon: f64,
    /// Entropic self-transport value of the target.
    pub self_value: f64,
}

impl LossTarget {
    pub fn new(cloud: PointCloud, config: &LossConfig) -> Result<Self> {
        config.validate()?;
        let epsilon = (config.epsilon_scale * mean_pairwise_distance(&cloud, &cloud)).max(1e-12);
        let self_value = if config.lambda_emd > 0.0 {
            entropic(&cloud, &cloud, epsilon, config.sinkhorn_iters)?.0
        } else {
            0.0
        };
        Ok(Self {
            cloud,
            epsilon,
            self_value,
        })
    }
}

/// Chamfer distance and its gradient with respect to `pred`.
pub fn chamfer_term(pred: &PointCloud, gt: &PointCloud) -> (f64, Vec<Vec3>) {
    let (p, g) = (pred.points(), gt.points());
    let (np, ng) = (p.len() as f64, g.len() as f64);
    let mut grad = vec![Vec3::zeros(); p.len()];
    let mut total = 0.0;
    let mut fwd = 0.0;
    for (i, x) in p.iter().enumerate() {
        let (j, d2) = crate::cloud::nearest(g, x);
        fwd += d2;
        grad[i] += (x - g[j]) * (2.0 / np);
    }
    total += fwd / np;
    let mut bwd = 0.0;
    for y in g {
        let (i, d2) = crate::cloud::nearest(p, y);
        bwd += d2;
        grad[i] += (p[i] - y) * (2.0 / ng);
    }
    total += bwd / ng;
    (total, grad)
}

/// `⟨P, C⟩ + ε·KL(P ‖ a⊗b)` on Euclidean ground cost, and the plan.
fn entropic(a: &PointCloud, b: &PointCloud, epsilon: f64, iters: usize) -> Result<(f64, TransportPlan)> {
    let (cost, plan) = sinkhorn_with_cost(a, b, epsilon, iters, CostKind::Euclidean)?;
    let prior = 1.0 / (a.len() * b.len()) as f64;
    let kl: f64 = plan
        .weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * (w / prior).ln())
        .sum();
    Ok((cost + epsilon * kl, plan))
}

fn unit(d: Vec3) -> Vec3 {
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vec3::zeros()
    }
}

/// Debiased entropic transport `½[OT(p, g) + OT(g, p)] − ½OT(p, p) − ½OT(g, g)`
/// and its gradient with respect to `pred`. The cross term is taken both
/// ways so that at `pred == target` every plan coincides and the value and
/// gradient are exactly zero.
pub fn ot_term(pred: &PointCloud, target: &LossTarget, config: &LossConfig) -> Result<(f64, Vec<Vec3>)> {
    let (p, g) = (pred.points(), target.cloud.points());
    let eps = target.epsilon;
    let (fwd, plan) = entropic(pred, &target.cloud, eps, config.sinkhorn_iters)?;
    let (bwd, back) = entropic(&target.cloud, pred, eps, config.sinkhorn_iters)?;
    let (own, own_plan) = entropic(pred, pred, eps, config.sinkhorn_iters)?;
    let mut grad = vec![Vec3::zeros(); p.len()];
    for (i, x) in p.iter().enumerate() {
        let mut acc = Vec3::zeros();
        for j in 0..g.len() {
            let cross = 0.5 * (plan.weight(i, j) + back.weight(j, i));
            // p appears on both sides of the self term.
            let own = 0.5 * (own_plan.weight(i, j) + own_plan.weight(j, i));
            acc += unit(x - g[j]) * cross - unit(x - p[j]) * own;
        }
        grad[i] = acc;
    }
    Ok((0.5 * (fwd + bwd) - 0.5 * own - 0.5 * target.self_value, grad))
}

fn check_sizes(pred: &PointCloud, gt: &PointCloud) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(pred.len(), gt.len()));
    }
    Ok(())
}

fn weighted(pred: &PointCloud, target: &LossTarget, config: &LossConfig) -> Result<(f64, Vec<Vec3>)> {
    check_sizes(pred, &target.cloud)?;
    let (mut value, mut grad) = (0.0, vec![Vec3::zeros(); pred.len()]);
    if config.lambda_chamfer > 0.0 {
        let (v, g) = chamfer_term(pred, &target.cloud);
        value += config.lambda_chamfer * v;
        for (acc, d) in grad.iter_mut().zip(g) {
            *acc += d * config.lambda_chamfer;
        }
    }
    if config.lambda_emd > 0.0 {
        let (v, g) = ot_term(pred, target, config)?;
        value += config.lambda_emd * v;
        for (acc, d) in grad.iter_mut().zip(g) {
            *acc += d * config.lambda_emd;
        }
    }
    Ok((value, grad))
}

/// `λ_c·chamfer + λ_e·transport` and its gradient with respect to `pred`.
pub fn loss(pred: &PointCloud, gt: &PointCloud, config: &LossConfig) -> Result<(f64, Vec<Vec3>)> {
    check_sizes(pred, gt)?;
    let target = LossTarget::new(gt.clone(), config)?;
    weighted(pred, &target, config)
}

/// The loss with nearest-neighbour correspondences and transport plans
/// fixed at a reference prediction. At that prediction its value and
/// gradient equal those of [`loss`]; elsewhere it is the smooth function
/// the backward pass differentiates, which is what finite differences
/// should probe.
#[derive(Debug, Clone)]
pub struct FrozenLoss {
    config: LossConfig,
    gt: PointCloud,
    nn_fwd: Vec<usize>,
    nn_bwd: Vec<usize>,
    /// `(pred → gt, gt → pred, pred → pred)`.
    plans: Option<(TransportPlan, TransportPlan, TransportPlan)>,
    offset: f64,
}

impl FrozenLoss {
    pub fn at(pred: &PointCloud, gt: &PointCloud, config: &LossConfig) -> Result<Self> {
        check_sizes(pred, gt)?;
        let target = LossTarget::new(gt.clone(), config)?;
        let (p, g) = (pred.points(), gt.points());
        let nn_fwd = p.iter().map(|x| crate::cloud::nearest(g, x).0).collect();
        let nn_bwd = g.iter().map(|y| crate::cloud::nearest(p, y).0).collect();
        let plans = if config.lambda_emd > 0.0 {
            let iters = config.sinkhorn_iters;
            Some((
                entropic(pred, gt, target.epsilon, iters)?.1,
                entropic(gt, pred, target.epsilon, iters)?.1,
                entropic(pred, pred, target.epsilon, iters)?.1,
            ))
        } else {
            None
        };
        let mut frozen = Self {
            config: *config,
            gt: gt.clone(),
            nn_fwd,
            nn_bwd,
            plans,
            offset: 0.0,
        };
        frozen.offset = weighted(pred, &target, config)?.0 - frozen.value(pred);
        Ok(frozen)
    }

    pub fn value(&self, pred: &PointCloud) -> f64 {
        let (p, g) = (pred.points(), self.gt.points());
        let fwd: f64 = p
            .iter()
            .zip(&self.nn_fwd)
            .map(|(x, &j)| (x - g[j]).norm_squared())
            .sum();
        let bwd: f64 = g
            .iter()
            .zip(&self.nn_bwd)
            .map(|(y, &i)| (p[i] - y).norm_squared())
            .sum();
        let mut total = self.config.lambda_chamfer * (fwd / p.len() as f64 + bwd / g.len() as f64);
        if let Some((there, back, own)) = &self.plans {
            let mut ot = 0.0;
            for (i, x) in p.iter().enumerate() {
                for j in 0..g.len() {
                    ot += 0.5 * (there.weight(i, j) + back.weight(j, i)) * (x - g[j]).norm();
                    ot -= 0.5 * own.weight(i, j) * (x - p[j]).norm();
                }
            }
            total += self.config.lambda_emd * ot;
        }
        total + self.offset
    }
}

/// Records the loss of an `[N, 3]` node against `target` as a scalar node.
pub fn loss_node(tape: &mut Tape, pred: Var, target: &LossTarget, config: &LossConfig) -> Result<Var> {
    let flat = tape.value(pred).data().to_vec();
    let cloud = PointCloud::from_flat(&flat)?;
    let (value, grad) = weighted(&cloud, target, config)?;
    let shape = tape.value(pred).shape().to_vec();
    let grad: Vec<f64> = grad.iter().flat_map(|d| [d.x, d.y, d.z]).collect();
    let grad = Tensor::new(shape, grad)?;
    Ok(tape.custom(
        &[pred],
        Tensor::scalar(value),
        Box::new(move |upstream, _, _| {
            let s = upstream.item();
            let data = grad.data().iter().map(|g| g * s).collect();
            vec![Some(Tensor::new(grad.shape().to_vec(), data).expect("same shape"))]
        }),
    ))
}
