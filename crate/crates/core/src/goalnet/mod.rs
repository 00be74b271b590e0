//! Goal-shape network: a shared set-abstraction encoder applied to the
//! current tissue cloud and the context cloud, features concatenated and
//! decoded to an `N`-point goal cloud.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{load_model, save_model, MAGIC};
pub use loss::{chamfer_term, loss, loss_node, ot_term, FrozenLoss, LossConfig, LossTarget};
pub use train::{train, EpochLog, TrainConfig, TrainLog, TrainOutcome};

use goalshape_diff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{fps_indices, knn, PointCloud, Vec3};
use crate::error::{Error, Result};

pub const STAGE1: usize = 64;
pub const CENTROIDS: usize = 128;
pub const GROUP: usize = 16;
pub const STAGE2: usize = 128;
pub const FEATURE: usize = 256;
pub const HIDDEN: usize = 256;

/// Centred coordinates are multiplied by this before entering the network
/// and the decoder output divided by it, so activations see decimetres.
pub const INPUT_SCALE: f64 = 10.0;

/// Names and shapes of every parameter tensor, in storage order.
pub fn layer_shapes(n: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("enc1.w", vec![3, STAGE1]),
        ("enc1.b", vec![STAGE1]),
        ("enc2.w", vec![STAGE1 + 3, STAGE2]),
        ("enc2.b", vec![STAGE2]),
        ("enc3.w", vec![STAGE2 + 3, FEATURE]),
        ("enc3.b", vec![FEATURE]),
        ("dec1.w", vec![2 * FEATURE, HIDDEN]),
        ("dec1.b", vec![HIDDEN]),
        ("dec2.w", vec![HIDDEN, HIDDEN]),
        ("dec2.b", vec![HIDDEN]),
        ("dec3.w", vec![HIDDEN, 3 * n]),
        ("dec3.b", vec![3 * n]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Points per input and output cloud.
    pub n: usize,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform He initialization for weights, zero biases. Values are
    /// rounded to `f32` so checkpoints reproduce them exactly.
    pub fn init(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("model needs at least one point"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layer_shapes(n)
            .into_iter()
            .map(|(_, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let bound = (6.0 / shape[0] as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
                    .collect();
                Tensor::new(shape, data).expect("declared shape")
            })
            .collect();
        Ok(Self { n, tensors })
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = layer_shapes(self.n);
        if shapes.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors, expected {}",
                self.tensors.len(),
                shapes.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&self.tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::invalid(format!("{name}: non-finite value")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn leaves(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }
}

/// Sampling structure of one input cloud: FPS centroids and the `GROUP`
/// nearest points of each. Depends only on the geometry, not on weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub centroids: Vec<usize>,
    /// Row-major `centroids.len() × group` point indices.
    pub members: Vec<usize>,
    pub group: usize,
}

impl Grouping {
    pub fn of(cloud: &PointCloud) -> Result<Self> {
        let centroids = fps_indices(cloud, CENTROIDS.min(cloud.len()))?;
        let group = GROUP.min(cloud.len());
        let mut members = Vec::with_capacity(centroids.len() * group);
        for &c in &centroids {
            members.extend(knn(cloud, &cloud.get(c), group)?);
        }
        Ok(Self {
            centroids,
            members,
            group,
        })
    }
}

/// One network input: a cloud already centred and scaled, plus its
/// grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub points: Tensor,
    pub grouping: Grouping,
}

impl Prepared {
    pub fn new(cloud: &PointCloud, center: &Vec3) -> Result<Self> {
        let grouping = Grouping::of(cloud)?;
        let data = cloud
            .points()
            .iter()
            .flat_map(|p| {
                let q = (p - center) * INPUT_SCALE;
                [q.x, q.y, q.z]
            })
            .collect();
        Ok(Self {
            points: Tensor::new(vec![cloud.len(), 3], data)?,
            grouping,
        })
    }
}

/// Records the shared encoder on `tape`, returning a `[1, FEATURE]` node.
fn encode_node(tape: &mut Tape, p: &[Var], input: &Prepared) -> Result<Var> {
    let g = &input.grouping;
    let m = g.centroids.len();
    let x = tape.constant(input.points.clone());

    // Stage 1: per-point features.
    let h1 = tape.matmul(x, p[0])?;
    let h1 = tape.bias_add(h1, p[1])?;
    let f1 = tape.relu(h1);

    // Stage 2: the first layer of the group MLP is linear in
    // [feature, point − centroid], so it is applied per point before the
    // gather and the centroid term is subtracted afterwards.
    let h = tape.concat(&[f1, x], 1)?;
    let z = tape.matmul(h, p[2])?;
    let mut pad = vec![0.0; m * (STAGE1 + 3)];
    let xs = input.points.data();
    for (r, &c) in g.centroids.iter().enumerate() {
        pad[r * (STAGE1 + 3) + STAGE1..(r + 1) * (STAGE1 + 3)].copy_from_slice(&xs[c * 3..c * 3 + 3]);
    }
    let pad = tape.constant(Tensor::new(vec![m, STAGE1 + 3], pad)?);
    let centre_term = tape.matmul(pad, p[2])?;
    let rows = tape.gather_rows(z, &g.members)?;
    let repeat: Vec<usize> = (0..m).flat_map(|r| std::iter::repeat_n(r, g.group)).collect();
    let centre_rows = tape.gather_rows(centre_term, &repeat)?;
    let centre_rows = tape.scale(centre_rows, -1.0);
    let h2 = tape.add(rows, centre_rows)?;
    let h2 = tape.bias_add(h2, p[3])?;
    let h2 = tape.relu(h2);
    let h2 = tape.reshape(h2, &[m, g.group, STAGE2])?;
    let f2 = tape.max_axis(h2, 1)?;

    // Stage 3: global features over the centroids.
    let cx: Vec<f64> = g
        .centroids
        .iter()
        .flat_map(|&c| xs[c * 3..c * 3 + 3].to_vec())
        .collect();
    let cx = tape.constant(Tensor::new(vec![m, 3], cx)?);
    let h3 = tape.concat(&[f2, cx], 1)?;
    let h3 = tape.matmul(h3, p[4])?;
    let h3 = tape.bias_add(h3, p[5])?;
    let h3 = tape.relu(h3);
    let f3 = tape.max_axis(h3, 0)?;
    Ok(tape.reshape(f3, &[1, FEATURE])?)
}

/// Records the full network; returns the decoded `[N, 3]` points, centred
/// and in metres.
pub fn forward_node(tape: &mut Tape, p: &[Var], current: &Prepared, context: &Prepared) -> Result<Var> {
    let n3 = tape.value(p[11]).len();
    let a = encode_node(tape, p, current)?;
    let b = encode_node(tape, p, context)?;
    let f = tape.concat(&[a, b], 1)?;
    let h = tape.matmul(f, p[6])?;
    let h = tape.bias_add(h, p[7])?;
    let h = tape.relu(h);
    let h = tape.matmul(h, p[8])?;
    let h = tape.bias_add(h, p[9])?;
    let h = tape.relu(h);
    let h = tape.matmul(h, p[10])?;
    let h = tape.bias_add(h, p[11])?;
    let h = tape.reshape(h, &[n3 / 3, 3])?;
    Ok(tape.scale(h, 1.0 / INPUT_SCALE))
}

fn check_count(cloud: &PointCloud, n: usize, what: &str) -> Result<()> {
    if cloud.len() != n {
        return Err(goalshape_diff::TensorError::Shape {
            op: "goalnet",
            detail: format!("{what} has {} points, model expects {n}", cloud.len()),
        }
        .into());
    }
    Ok(())
}

/// Shared encoder feature of `cloud` as given (no centring).
pub fn encode(cloud: &PointCloud, params: &ModelParams) -> Result<Vec<f64>> {
    check_count(cloud, params.n, "cloud")?;
    let mut tape = Tape::new();
    let p = params.leaves(&mut tape, false);
    let input = Prepared::new(cloud, &Vec3::zeros())?;
    let f = encode_node(&mut tape, &p, &input)?;
    Ok(tape.value(f).data().to_vec())
}

/// Inputs for one prediction, both centred on the current cloud's centroid.
pub fn prepare_pair(current: &PointCloud, context: &PointCloud) -> Result<(Vec3, Prepared, Prepared)> {
    let c = current.centroid();
    Ok((c, Prepared::new(current, &c)?, Prepared::new(context, &c)?))
}

/// Loss of the prediction for `(current, context)` against `goal`, and its
/// gradient with respect to every parameter tensor.
pub fn loss_and_grad(
    params: &ModelParams,
    current: &PointCloud,
    context: &PointCloud,
    goal: &PointCloud,
    config: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    check_count(current, params.n, "current cloud")?;
    check_count(context, params.n, "context cloud")?;
    let (c, a, b) = prepare_pair(current, context)?;
    let target = LossTarget::new(goal.translated(&-c), config)?;
    let mut tape = Tape::new();
    let p = params.leaves(&mut tape, true);
    let out = forward_node(&mut tape, &p, &a, &b)?;
    let l = loss_node(&mut tape, out, &target, config)?;
    let mut grads = tape.backward(l)?;
    let grads = p
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((tape.value(l).item(), grads))
}

/// Predicted goal cloud for a current and a context cloud.
pub fn forward_goal(current: &PointCloud, context: &PointCloud, params: &ModelParams) -> Result<PointCloud> {
    check_count(current, params.n, "current cloud")?;
    check_count(context, params.n, "context cloud")?;
    params.validate()?;
    let (c, a, b) = prepare_pair(current, context)?;
    let mut tape = Tape::new();
    let p = params.leaves(&mut tape, false);
    let out = forward_node(&mut tape, &p, &a, &b)?;
    let pts = tape
        .value(out)
        .data()
        .chunks_exact(3)
        .map(|q| Vec3::new(q[0], q[1], q[2]) + c)
        .collect();
    PointCloud::new(pts)
}
