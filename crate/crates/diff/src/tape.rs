use crate::tensor::gemm;
use crate::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a custom op: receives the output gradient, the
/// input values and the output value; returns one gradient per input
/// (`None` for inputs it does not differentiate).
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    BiasAdd(Var, Var),
    Relu(Var),
    MaxAxis { input: Var, argmax: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    SquaredNorm(Var),
    Scale(Var, f64),
    GatherRows { input: Var, index: Vec<usize> },
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Only leaves created with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] × [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum of equal-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// `[m, n] + [n]`, broadcasting the bias over rows.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("broadcast-add")?;
        if self.value(bias).shape() != [n] {
            return Err(shape_err(
                "broadcast-add",
                format!("[{m}, {n}] + {:?}", self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::BiasAdd(x, bias), &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x), &[x])
    }

    /// Maximum over `axis`; the gradient goes to the first maximal element.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("max-over-axis", format!("axis {axis} of shape {shape:?}")));
        }
        let (outer, len, inner) = around(&shape, axis);
        let src = v.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    let val = src[base + i];
                    if val > out[dst + i] || l == 0 {
                        out[dst + i] = val;
                        argmax[dst + i] = base + i;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::MaxAxis { input: x, argmax }, &[x]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} of shape {first:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{first:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(shape_err("reshape", format!("{:?} to {shape:?}", v.shape())));
        }
        let t = v.clone().with_shape(shape.to_vec());
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Sum of squares of all elements, as a scalar.
    pub fn squared_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|z| z * z).sum();
        self.push(Tensor::scalar(s), Op::SquaredNorm(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|z| z * factor).collect()).expect("same shape");
        self.push(t, Op::Scale(x, factor), &[x])
    }

    /// Selects rows of a matrix: `[n, d] → [index.len(), d]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (n, d) = self.value(x).dims2("gather-rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather-rows", format!("row {bad} of a [{n}, {d}] matrix")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![index.len(), d], data)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                input: x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Records an op whose forward value is already computed and whose
    /// vector-Jacobian product is supplied by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(TensorError::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::new(self.value(output).shape().to_vec(), vec![1.0])?);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2("matmul")?;
                let n = vb.shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga, 0.0);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut gb, 0.0);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::BiasAdd(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.nodes[bias.0].needs_grad {
                    let (_, n) = g.dims2("broadcast-add")?;
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(gb));
                }
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, out)| if *out > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::MaxAxis { input, argmax } => {
                let mut gi = Tensor::zeros(self.value(*input).shape());
                let buf = gi.data_mut();
                for (gv, &src) in g.data().iter().zip(argmax) {
                    buf[src] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = around(out_shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let shape = self.value(*v).shape().to_vec();
                    let len = shape[*axis];
                    if self.nodes[v.0].needs_grad {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[start..start + len * inner]);
                        }
                        self.accumulate(grads, *v, Tensor::new(shape, data)?);
                    }
                    offset += len;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().with_shape(shape));
            }
            Op::SquaredNorm(x) => {
                let s = 2.0 * g.item();
                let v = self.value(*x);
                let data = v.data().iter().map(|z| s * z).collect();
                self.accumulate(grads, *x, Tensor::new(v.shape().to_vec(), data)?);
            }
            Op::Scale(x, f) => {
                let data = g.data().iter().map(|z| z * f).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::GatherRows { input, index } => {
                let shape = self.value(*input).shape().to_vec();
                let d = shape[1];
                let mut gi = Tensor::zeros(&shape);
                let buf = gi.data_mut();
                for (row, &i) in g.data().chunks_exact(d).zip(index) {
                    for (acc, v) in buf[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let local = backward(g, &values, &node.value);
                if local.len() != inputs.len() {
                    return Err(TensorError::InvalidArgument(format!(
                        "custom op returned {} gradients for {} inputs",
                        local.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(local) {
                    if let Some(gi) = gi {
                        if gi.shape() != self.value(*v).shape() {
                            return Err(shape_err(
                                "custom",
                                format!("gradient {:?} for input {:?}", gi.shape(), self.value(*v).shape()),
                            ));
                        }
                        self.accumulate(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the leaf does not require grad or does not influence the
    /// output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[-1.0, 2.0]), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let w = tape.constant(t(&[2], &[1.0, 1.0]));
        let s = tape.custom(
            &[y, w],
            Tensor::scalar(2.0),
            Box::new(|g, vals, _| {
                vec![
                    Some(Tensor::new(vals[0].shape().to_vec(), vec![g.item(); 2]).unwrap()),
                    None,
                ]
            }),
        );
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0];
        let mut tape = Tape::new();
        let va = tape.constant(t(&[2, 3], &a));
        let vb = tape.constant(t(&[3, 1], &b));
        let c = tape.matmul(va, vb).unwrap();
        let mut expect = [0.0; 2];
        for (i, e) in expect.iter_mut().enumerate() {
            for k in 0..3 {
                *e += a[i * 3 + k] * b[k];
            }
        }
        assert_eq!(tape.value(c).data(), &expect);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(err.to_string().contains("[2, 3]"));
        let v = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.bias_add(a, v).unwrap_err().to_string().contains("broadcast-add"));
        assert!(tape.reshape(a, &[5]).unwrap_err().to_string().contains("reshape"));
        assert!(tape.concat(&[a, v], 0).is_err());
        assert!(tape.gather_rows(a, &[2]).is_err());
    }

    #[test]
    fn reshape_keeps_values() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = tape.reshape(a, &[3, 2]).unwrap();
        assert_eq!(tape.value(r).data(), tape.value(a).data());
        assert_eq!(tape.value(r).len(), 6);
    }

    #[test]
    fn max_axis_ties_route_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 2], &[1.0, 5.0, 1.0, 2.0, 0.0, 5.0]), true);
        let m = tape.max_axis(x, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 5.0]);
        let s = tape.squared_norm(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 10.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_middle_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(tape.backward(a), Err(TensorError::InvalidArgument(_))));
    }

    #[test]
    fn backward_leaves_forward_values_untouched() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.5, -1.5]), true);
        let w = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = tape.matmul(x, w).unwrap();
        let r = tape.relu(y);
        let s = tape.squared_norm(r);
        let before: Vec<Tensor> = (0..tape.len()).map(|i| tape.nodes[i].value.clone()).collect();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        for (i, b) in before.iter().enumerate() {
            assert_eq!(&tape.nodes[i].value, b);
        }
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = tape.add(x, x).unwrap();
        let s = tape.squared_norm(y);
        let g = tape.backward(s).unwrap();
        // s = 4‖x‖², ds/dx = 8x
        assert_eq!(g.get(x).unwrap().data(), &[8.0, 16.0]);
    }
}
