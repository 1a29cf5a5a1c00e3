//! Smoothed quantile regression.
//!
//! The check loss is convolved with a Gaussian kernel of bandwidth `H`:
//!
//! ```text
//! l_H(u) = H * phi(u / H) + u * (q - Phi(-u / H))
//! ```
//!
//! `l_H` is convex, infinitely differentiable, bounded below by the check
//! loss and converges to it uniformly as `H -> 0` (the gap never exceeds
//! `H * phi(0)`). With `u = y - x'b` the gradient is
//! `-sum_i x_i (q - Phi(-u_i / H))` and the Hessian is
//! `sum_i x_i x_i' phi(u_i / H) / H`, so a damped Newton iteration is used.

use nalgebra::{DMatrix, DVector};

use super::qra::{dot, Design};
use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_pdf};

pub fn smoothed_loss(u: f64, q: f64, bandwidth: f64) -> f64 {
    let z = u / bandwidth;
    bandwidth * normal_pdf(z) + u * (q - normal_cdf(-z))
}

pub fn smoothed_objective(design: &Design, y: &[f64], beta: &[f64], q: f64, bandwidth: f64) -> f64 {
    design
        .rows()
        .zip(y)
        .map(|(r, yi)| smoothed_loss(yi - dot(r, beta), q, bandwidth))
        .sum()
}

pub fn smoothed_gradient(design: &Design, y: &[f64], beta: &[f64], q: f64, bandwidth: f64) -> Vec<f64> {
    let mut g = vec![0.0; design.n_cols()];
    for (r, yi) in design.rows().zip(y) {
        let u = yi - dot(r, beta);
        let w = q - normal_cdf(-u / bandwidth);
        for (gj, xj) in g.iter_mut().zip(r) {
            *gj -= w * xj;
        }
    }
    g
}

/// Rule-of-thumb bandwidth `1.06 * sd * m^(-1/5)`.
pub fn default_bandwidth(residual_sd: f64, sample_size: usize) -> f64 {
    1.06 * residual_sd * (sample_size as f64).powf(-0.2)
}

#[derive(Debug, Clone)]
pub struct SqrSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

pub const SQRA_MAX_ITERATIONS: usize = 500;

/// Minimizes the smoothed objective from `start` (typically the exact QRA
/// solution) or from zero.
pub fn fit_smoothed(
    design: &Design,
    y: &[f64],
    q: f64,
    bandwidth: f64,
    start: Option<&[f64]>,
) -> Result<SqrSolution> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Argument(format!("quantile level {q} outside (0, 1)")));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Argument(format!("bandwidth {bandwidth} must be positive")));
    }
    if y.len() != design.n_rows() {
        return Err(Error::Argument("target length does not match design".into()));
    }
    let p = design.n_cols();
    let mut beta = match start {
        Some(s) if s.len() == p => s.to_vec(),
        Some(_) => return Err(Error::Argument("start vector has wrong length".into())),
        None => vec![0.0; p],
    };
    // Gradient components are sums of |x| weighted by values in (q-1, q).
    let grad_scale: f64 = design.rows().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs()))).sum();
    let tol = 1e-9 * grad_scale.max(1.0);

    let mut objective = smoothed_objective(design, y, &beta, q, bandwidth);
    for iteration in 0..SQRA_MAX_ITERATIONS {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (r, yi) in design.rows().zip(y) {
            let z = (yi - dot(r, beta.as_slice())) / bandwidth;
            let w = q - normal_cdf(-z);
            let c = normal_pdf(z) / bandwidth;
            for a in 0..p {
                grad[a] -= w * r[a];
                if c > 0.0 {
                    for b in 0..=a {
                        hess[(a, b)] += c * r[a] * r[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let gnorm = grad.amax();
        if gnorm <= tol {
            return Ok(SqrSolution {
                coefficients: beta,
                objective,
                gradient_norm: gnorm,
                iterations: iteration,
            });
        }

        // Newton step, ridge-regularized only when the Hessian is not
        // numerically positive definite, with Armijo backtracking.
        let diag_scale = hess.diagonal().amax().max(1e-300);
        let mut ridge = 1e-12;
        let step = loop {
            let mut h = hess.clone();
            for a in 0..p {
                h[(a, a)] += ridge * diag_scale;
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&(-&grad));
            }
            ridge *= 100.0;
            if ridge > 1e6 {
                return Err(Error::Solver(format!(
                    "smoothed quantile regression: singular Hessian at iteration {iteration}, last iterate {beta:?}"
                )));
            }
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let f = smoothed_objective(design, y, &trial, q, bandwidth);
            if f <= objective + 1e-4 * t * slope && f < objective {
                beta = trial;
                objective = f;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            // Objective cannot decrease in floating point: stationary to
            // working precision if the gradient is at its rounding floor.
            if gnorm <= 1e-7 * grad_scale.max(1.0) {
                return Ok(SqrSolution {
                    coefficients: beta,
                    objective,
                    gradient_norm: gnorm,
                    iterations: iteration,
                });
            }
            return Err(Error::Solver(format!(
                "smoothed quantile regression stalled at iteration {iteration}: gradient norm {gnorm:.3e}, last iterate {beta:?}"
            )));
        }
    }
    let g = smoothed_gradient(design, y, &beta, q, bandwidth);
    let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Err(Error::Solver(format!(
        "smoothed quantile regression did not converge in {SQRA_MAX_ITERATIONS} iterations: gradient norm {gnorm:.3e}, last iterate {beta:?}"
    )))
}
