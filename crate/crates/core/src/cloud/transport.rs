//! Exact earth mover's distance and entropic optimal transport between
//! uniformly weighted point clouds.

use super::{solve_assignment, PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// A permutation matrix scaled by `1/n`.
    ExactMatching,
    Entropic,
}

/// Ground cost between two points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// `‖x − y‖₂`, the earth mover's ground cost.
    #[default]
    Euclidean,
    /// `‖x − y‖₂²`.
    SquaredEuclidean,
}

impl CostKind {
    fn eval(self, x: &Vec3, y: &Vec3) -> f64 {
        match self {
            CostKind::Euclidean => (x - y).norm(),
            CostKind::SquaredEuclidean => (x - y).norm_squared(),
        }
    }
}

/// Coupling between two clouds with uniform marginals `1/n_a` and `1/n_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_a: usize,
    pub n_b: usize,
    /// Row-major `n_a × n_b` nonnegative weights.
    pub weights: Vec<f64>,
    pub kind: PlanKind,
}

impl TransportPlan {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_b + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_b..(i + 1) * self.n_b]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_a).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_b];
        for i in 0..self.n_a {
            for (acc, w) in s.iter_mut().zip(self.row(i)) {
                *acc += w;
            }
        }
        s
    }

    /// For an exact plan, the target index of every source point.
    pub fn matching(&self) -> Option<Vec<usize>> {
        if self.kind != PlanKind::ExactMatching {
            return None;
        }
        Some(
            (0..self.n_a)
                .map(|i| {
                    self.row(i)
                        .iter()
                        .position(|&w| w > 0.0)
                        .expect("exact plan row has one nonzero entry")
                })
                .collect(),
        )
    }

    /// Conditional mean of the target cloud under the plan, for every source point.
    pub fn barycentric_map(&self, target: &PointCloud) -> Vec<Vec3> {
        assert_eq!(target.len(), self.n_b);
        (0..self.n_a)
            .map(|i| {
                let row = self.row(i);
                let mass: f64 = row.iter().sum();
                let acc = row
                    .iter()
                    .zip(target.points())
                    .fold(Vec3::zeros(), |acc, (&w, y)| acc + y * w);
                if mass > 0.0 {
                    acc / mass
                } else {
                    target.centroid()
                }
            })
            .collect()
    }

    pub fn cost(&self, a: &PointCloud, b: &PointCloud, kind: CostKind) -> f64 {
        let mut total = 0.0;
        for (i, x) in a.points().iter().enumerate() {
            for (j, y) in b.points().iter().enumerate() {
                let w = self.weight(i, j);
                if w != 0.0 {
                    total += w * kind.eval(x, y);
                }
            }
        }
        total
    }
}

fn cost_matrix(a: &PointCloud, b: &PointCloud, kind: CostKind) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for x in a.points() {
        for y in b.points() {
            c.push(kind.eval(x, y));
        }
    }
    c
}

/// Mean of `‖a_i − b_j‖₂` over all pairs; the natural length scale for
/// choosing an entropic regularization.
pub fn mean_pairwise_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    let c = cost_matrix(a, b, CostKind::Euclidean);
    c.iter().sum::<f64>() / c.len() as f64
}

/// Earth mover's distance between equal-size clouds: the minimum over
/// bijections of the mean matched Euclidean distance, with the optimal
/// permutation as a plan.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<(f64, TransportPlan)> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::SizeMismatch(n, b.len()));
    }
    let cost = cost_matrix(a, b, CostKind::Euclidean);
    let assign = solve_assignment(&cost, n, n);
    let mut weights = vec![0.0; n * n];
    let mut total = 0.0;
    for (i, &j) in assign.iter().enumerate() {
        weights[i * n + j] = 1.0 / n as f64;
        total += cost[i * n + j];
    }
    Ok((
        total / n as f64,
        TransportPlan {
            n_a: n,
            n_b: n,
            weights,
            kind: PlanKind::ExactMatching,
        },
    ))
}

const MARGINAL_TOL: f64 = 1e-6;

/// Entropic optimal transport with uniform marginals and Euclidean ground
/// cost. Returns `⟨plan, C⟩` and the plan.
pub fn sinkhorn_ot(a: &PointCloud, b: &PointCloud, epsilon: f64, max_iters: usize) -> Result<(f64, TransportPlan)> {
    sinkhorn_with_cost(a, b, epsilon, max_iters, CostKind::Euclidean)
}

/// Sinkhorn scaling on a caller-chosen ground cost.
///
/// Iterates until the row-marginal violation (max abs) drops below 1e-6 or
/// `max_iters` is reached, then rounds the plan onto the feasible set so the
/// returned marginals are exact up to floating point regardless of how many
/// iterations ran.
pub fn sinkhorn_with_cost(
    a: &PointCloud,
    b: &PointCloud,
    epsilon: f64,
    max_iters: usize,
    kind: CostKind,
) -> Result<(f64, TransportPlan)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "sinkhorn epsilon must be positive, got {epsilon}"
        )));
    }
    let (na, nb) = (a.len(), b.len());
    let cost = cost_matrix(a, b, kind);
    let ra = 1.0 / na as f64;
    let rb = 1.0 / nb as f64;

    // Shift by c-transform style offsets so every row and column of the
    // kernel has a unit maximum.
    let alpha: Vec<f64> = (0..na)
        .map(|i| cost[i * nb..(i + 1) * nb].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mut beta = vec![f64::INFINITY; nb];
    for i in 0..na {
        for j in 0..nb {
            beta[j] = beta[j].min(cost[i * nb + j] - alpha[i]);
        }
    }
    let inv = 1.0 / epsilon;
    let mut kernel = vec![0.0; na * nb];
    for ((krow, crow), ai) in kernel.chunks_exact_mut(nb).zip(cost.chunks_exact(nb)).zip(&alpha) {
        for ((k, c), bj) in krow.iter_mut().zip(crow).zip(&beta) {
            *k = (-(c - ai - bj) * inv).exp();
        }
    }

    let mut plan = match scale_kernel(&kernel, na, nb, ra, rb, max_iters) {
        Some(p) => p,
        None => log_domain(&cost, na, nb, ra, rb, epsilon, max_iters),
    };
    round_to_marginals(&mut plan, na, nb, ra, rb);

    let total = plan.iter().zip(&cost).map(|(p, c)| p * c).sum();
    Ok((
        total,
        TransportPlan {
            n_a: na,
            n_b: nb,
            weights: plan,
            kind: PlanKind::Entropic,
        },
    ))
}

/// Dot product with split accumulators so the compiler can vectorize it.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn scale_kernel(k: &[f64], na: usize, nb: usize, ra: f64, rb: f64, iters: usize) -> Option<Vec<f64>> {
    let mut u = vec![1.0; na];
    let mut v = vec![1.0; nb];
    let mut ktu = vec![0.0; nb];
    let matvec = |v: &[f64]| -> Vec<f64> { k.chunks_exact(nb).map(|row| dot(row, v)).collect() };
    let mut kv = matvec(&v);
    for _ in 0..iters.max(1) {
        for (ui, kvi) in u.iter_mut().zip(&kv) {
            *ui = ra / kvi;
        }
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for (row, ui) in k.chunks_exact(nb).zip(&u) {
            for (acc, kij) in ktu.iter_mut().zip(row) {
                *acc += kij * ui;
            }
        }
        for (vj, s) in v.iter_mut().zip(&ktu) {
            *vj = rb / s;
        }
        if !u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0) {
            return None;
        }
        // Row marginals of the current plan; reused by the next update.
        kv = matvec(&v);
        let worst = u
            .iter()
            .zip(&kv)
            .map(|(ui, kvi)| (ui * kvi - ra).abs())
            .fold(0.0, f64::max);
        if worst < MARGINAL_TOL {
            break;
        }
    }
    let mut plan = vec![0.0; na * nb];
    for ((prow, krow), ui) in plan.chunks_exact_mut(nb).zip(k.chunks_exact(nb)).zip(&u) {
        for ((p, kij), vj) in prow.iter_mut().zip(krow).zip(&v) {
            *p = ui * kij * vj;
        }
    }
    Some(plan)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dual-potential Sinkhorn; slower but immune to kernel underflow.
fn log_domain(cost: &[f64], na: usize, nb: usize, ra: f64, rb: f64, eps: f64, iters: usize) -> Vec<f64> {
    let mut f = vec![0.0; na];
    let mut g = vec![0.0; nb];
    let (la, lb) = (ra.ln(), rb.ln());
    for _ in 0..iters.max(1) {
        for i in 0..na {
            let lse = log_sum_exp((0..nb).map(|j| (g[j] - cost[i * nb + j]) / eps));
            f[i] = eps * (la - lse);
        }
        for j in 0..nb {
            let lse = log_sum_exp((0..na).map(|i| (f[i] - cost[i * nb + j]) / eps));
            g[j] = eps * (lb - lse);
        }
        let worst = (0..na)
            .map(|i| {
                let s: f64 = (0..nb).map(|j| ((f[i] + g[j] - cost[i * nb + j]) / eps).exp()).sum();
                (s - ra).abs()
            })
            .fold(0.0, f64::max);
        if worst < MARGINAL_TOL {
            break;
        }
    }
    let mut plan = vec![0.0; na * nb];
    for i in 0..na {
        for j in 0..nb {
            plan[i * nb + j] = ((f[i] + g[j] - cost[i * nb + j]) / eps).exp();
        }
    }
    plan
}

/// Projects a nonnegative matrix onto the transport polytope: shrink rows
/// and columns that exceed their marginal, then spread the remaining
/// deficit as a rank-one correction.
fn round_to_marginals(p: &mut [f64], na: usize, nb: usize, ra: f64, rb: f64) {
    for i in 0..na {
        let row = &mut p[i * nb..(i + 1) * nb];
        let s: f64 = row.iter().sum();
        if s > ra {
            let scale = ra / s;
            row.iter_mut().for_each(|x| *x *= scale);
        }
    }
    let mut cols = vec![0.0; nb];
    for i in 0..na {
        for j in 0..nb {
            cols[j] += p[i * nb + j];
        }
    }
    for j in 0..nb {
        if cols[j] > rb {
            let scale = rb / cols[j];
            for i in 0..na {
                p[i * nb + j] *= scale;
            }
        }
    }
    let row_def: Vec<f64> = (0..na)
        .map(|i| (ra - p[i * nb..(i + 1) * nb].iter().sum::<f64>()).max(0.0))
        .collect();
    let mut col_def = vec![rb; nb];
    for i in 0..na {
        for j in 0..nb {
            col_def[j] -= p[i * nb + j];
        }
    }
    col_def.iter_mut().for_each(|x| *x = x.max(0.0));
    let total: f64 = row_def.iter().sum();
    if total > 0.0 {
        for i in 0..na {
            for j in 0..nb {
                p[i * nb + j] += row_def[i] * col_def[j] / total;
            }
        }
    }
}
