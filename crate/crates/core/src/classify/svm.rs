//! Support vector machines.
//!
//! The linear machine minimizes the hinge-loss primal by full-batch
//! subgradient descent (Pegasos step schedule). Kernel machines solve the dual
//! with SMO using second-order working-set selection.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ModelParams, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Poly { gamma: f64, coef0: f64, degree: u32 },
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Poly {
                gamma,
                coef0,
                degree,
            } => (gamma * dot(a, b) + coef0).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                // differences, not norm expansion, so constant columns add exactly zero
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn signed(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect()
}

/// `1 / (n_features * Var(X))` over all entries; falls back to `1 / n_features`.
pub(crate) fn scale_gamma(x: ArrayView2<f64>) -> f64 {
    let d = x.ncols().max(1) as f64;
    let n = x.len() as f64;
    if n == 0.0 {
        return 1.0 / d;
    }
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0 / d
    }
}

/// Returns `(weights, bias)`. The bias is learned as the weight of an
/// appended constant feature.
pub(crate) fn train_linear(x: ArrayView2<f64>, y: &[u8], params: &SvmParams) -> (Vec<f64>, f64) {
    let n = x.nrows();
    let d = x.ncols();
    let ys = signed(y);
    let lambda = 1.0 / (params.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let rows: Vec<Vec<f64>> = x
        .axis_iter(Axis(0))
        .map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect();

    let objective = |w: &[f64]| {
        let hinge: f64 = rows
            .iter()
            .zip(&ys)
            .map(|(r, yi)| (1.0 - yi * dot(w, r)).max(0.0))
            .sum();
        0.5 * lambda * dot(w, w) + hinge / n as f64
    };

    let mut w = vec![0.0; d + 1];
    let mut best = (objective(&w), w.clone());
    for t in 1..=params.linear_epochs {
        let eta = 1.0 / (lambda * t as f64);
        let mut step = vec![0.0; d + 1];
        for (r, yi) in rows.iter().zip(&ys) {
            if yi * dot(&w, r) < 1.0 {
                for (s, v) in step.iter_mut().zip(r) {
                    *s += yi * v;
                }
            }
        }
        let shrink = 1.0 - eta * lambda;
        let scale = eta / n as f64;
        for (wi, si) in w.iter_mut().zip(&step) {
            *wi = shrink * *wi + scale * si;
        }
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            let k = radius / norm;
            w.iter_mut().for_each(|v| *v *= k);
        }
        let obj = objective(&w);
        if obj < best.0 {
            best = (obj, w.clone());
        }
    }
    let mut w = best.1;
    let bias = w.pop().expect("bias weight");
    (w, bias)
}

const TAU: f64 = 1e-12;

/// Dual solution: `alpha` per training row and the offset `rho`, so that the
/// decision value is `sum_i alpha_i y_i K(x_i, x) - rho`.
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

pub(crate) fn smo(k: &Array2<f64>, ys: &[f64], c: f64, tol: f64, max_iter: usize) -> DualSolution {
    let n = ys.len();
    let q = |i: usize, j: usize| ys[i] * ys[j] * k[[i, j]];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    while iterations < max_iter {
        // maximal violating index i
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let in_up = if ys[t] > 0.0 {
                !upper(alpha[t])
            } else {
                !lower(alpha[t])
            };
            if in_up && -ys[t] * grad[t] >= gmax {
                gmax = -ys[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        // second-order choice of j
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let in_low = if ys[t] > 0.0 {
                !lower(alpha[t])
            } else {
                !upper(alpha[t])
            };
            if !in_low {
                continue;
            }
            let yg = ys[t] * grad[t];
            gmax2 = gmax2.max(yg);
            let grad_diff = gmax + yg;
            if grad_diff > 0.0 {
                let quad = k[[i, i]] + k[[t, t]] - 2.0 * ys[i] * ys[t] * k[[i, t]];
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if ys[i] != ys[j] {
            let mut quad = k[[i, i]] + k[[j, j]] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[[i, i]] + k[[j, j]] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut free_sum = 0.0;
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if upper(alpha[t]) {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    DualSolution {
        alpha,
        rho,
        iterations,
    }
}

pub(crate) fn gram(x: ArrayView2<f64>, kernel: &Kernel) -> Array2<f64> {
    let rows: Vec<&[f64]> = x
        .axis_iter(Axis(0))
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let n = rows.len();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(rows[i], rows[j]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

pub(crate) fn train_kernel(
    x: ArrayView2<f64>,
    y: &[u8],
    kernel: Kernel,
    params: &SvmParams,
) -> ModelParams {
    let x = x.as_standard_layout();
    let ys = signed(y);
    let k = gram(x.view(), &kernel);
    let sol = smo(&k, &ys, params.c, params.tol, params.max_iter);
    if sol.iterations >= params.max_iter {
        tracing::warn!("SMO stopped at the iteration cap ({})", params.max_iter);
    }
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for (t, a) in sol.alpha.iter().enumerate() {
        if *a > 0.0 {
            support_vectors.push(x.row(t).to_vec());
            dual_coef.push(a * ys[t]);
        }
    }
    ModelParams::Kernel {
        kernel,
        support_vectors,
        dual_coef,
        bias: -sol.rho,
    }
}
