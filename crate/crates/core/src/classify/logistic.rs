use ndarray::{Array1, ArrayView2};

use super::LogisticParams;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective before the first step and after every step.
    pub losses: Vec<f64>,
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2` (bias unregularized).
pub fn log_loss(x: ArrayView2<f64>, y: &[u8], weights: &[f64], bias: f64, l2: f64) -> f64 {
    let w = Array1::from(weights.to_vec());
    let z = x.dot(&w) + bias;
    let data: f64 = z
        .iter()
        .zip(y)
        .map(|(z, &t)| if t == 1 { softplus(-z) } else { softplus(*z) })
        .sum::<f64>()
        / y.len() as f64;
    data + 0.5 * l2 * w.dot(&w)
}

/// Full-batch gradient descent from zero weights.
pub(crate) fn train(x: ArrayView2<f64>, y: &[u8], params: &LogisticParams) -> LogisticFit {
    let n = x.nrows() as f64;
    let target = Array1::from_iter(y.iter().map(|&t| f64::from(t)));
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    let mut losses = Vec::with_capacity(params.iterations + 1);
    losses.push(log_loss(x, y, w.as_slice().unwrap(), b, params.l2));
    for _ in 0..params.iterations {
        let z = x.dot(&w) + b;
        let residual = z.mapv(sigmoid) - &target;
        let grad_w = x.t().dot(&residual) / n + &w * params.l2;
        let grad_b = residual.sum() / n;
        w.scaled_add(-params.step, &grad_w);
        b -= params.step * grad_b;
        losses.push(log_loss(x, y, w.as_slice().unwrap(), b, params.l2));
    }
    LogisticFit {
        weights: w.to_vec(),
        bias: b,
        losses,
    }
}
