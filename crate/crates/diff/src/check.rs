//! Finite-difference gradient checking.

use crate::{Result, Tape, Tensor, TensorError, Var};

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8)
}

/// Central differences of `f` at `x` along the listed coordinates.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&c| {
            probe[c] = x[c] + h;
            let up = f(&probe);
            probe[c] = x[c] - h;
            let down = f(&probe);
            probe[c] = x[c];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error between the reverse-mode gradient of `f` at `point`
/// and central differences with step `h`, over every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, h, &coords)
}

/// As [`grad_check`], restricted to `coords`.
pub fn grad_check_coords<F>(f: F, point: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    if tape.value(y).len() != 1 {
        return Err(TensorError::InvalidArgument(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.value(y).shape()
        )));
    }
    let grads = tape.backward(y)?;
    let ad = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let shape = point.shape().to_vec();
    let mut failure = None;
    let fd = central_difference(
        |xs| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::new(shape.clone(), xs.to_vec()).expect("same shape"));
            match f(&mut t, v) {
                Ok(out) => t.value(out).item(),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        point.data(),
        coords,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(coords
        .iter()
        .zip(&fd)
        .map(|(&c, &d)| relative_error(ad.data()[c], d))
        .fold(0.0, f64::max))
}
