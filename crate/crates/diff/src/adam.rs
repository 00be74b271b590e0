use crate::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(TensorError::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(TensorError::Shape {
                op: "adam",
                detail: format!(
                    "param {i}: {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    state.first[i].shape()
                ),
            });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pi, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn quadratic_converges() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::from_vec(vec![0.0])];
        let mut s = AdamState::new(cfg, &p);
        let mut reached = None;
        for step in 1..=500 {
            let x = p[0].data()[0];
            let g = vec![Tensor::from_vec(vec![2.0 * (x - 3.0)])];
            adam_step(&mut p, &g, &mut s).unwrap();
            if reached.is_none() && (p[0].data()[0] - 3.0).abs() < 1e-3 {
                reached = Some(step);
            }
        }
        assert!((p[0].data()[0] - 3.0).abs() < 1e-3, "x = {}", p[0].data()[0]);
        assert!(reached.is_some());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![Tensor::from_vec(vec![0.3, 0.1])];
            let mut s = AdamState::new(AdamConfig::default(), &p);
            let g = vec![Tensor::from_vec(vec![0.7, -1.1])];
            adam_step(&mut p, &g, &mut s).unwrap();
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_shapes() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut s).is_err());
        assert!(adam_step(&mut p, &[], &mut s).is_err());
    }
}
