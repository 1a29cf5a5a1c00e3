//! Johnson SU distribution of point-forecast errors.
//!
//! `z = gamma + delta * asinh((x - xi) / lambda)` is standard normal. The
//! maximum-likelihood fit works on standardized data in the unconstrained
//! parameterization `(gamma, ln delta, xi, ln lambda)` with BFGS and a
//! backtracking Armijo line search.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{quantile_percents, ErrorSample, QuantileCurve};
use crate::error::{Error, Result};
use crate::stats::{empirical_quantile, normal_quantile};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsuParams {
    pub gamma: f64,
    pub delta: f64,
    pub xi: f64,
    pub lambda: f64,
}

impl JsuParams {
    pub fn new(gamma: f64, delta: f64, xi: f64, lambda: f64) -> Result<Self> {
        let p = Self { gamma, delta, xi, lambda };
        if !(delta > 0.0 && lambda > 0.0) || ![gamma, delta, xi, lambda].iter().all(|v| v.is_finite()) {
            return Err(Error::Argument(format!("invalid Johnson SU parameters {p:?}")));
        }
        Ok(p)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        jsu_quantile(self, q)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        crate::stats::normal_cdf(self.gamma + self.delta * ((x - self.xi) / self.lambda).asinh())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        -point_nll(self.gamma, self.delta, self.xi, self.lambda, x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.transform(z)
    }

    /// `xi + lambda * sinh((z - gamma) / delta)`, finite even when `lambda`
    /// underflows towards the lognormal boundary and the sinh argument is
    /// large.
    fn transform(&self, z: f64) -> f64 {
        let w = (z - self.gamma) / self.delta;
        if w.abs() < 20.0 {
            return self.xi + self.lambda * w.sinh();
        }
        let magnitude = (self.lambda.ln() + w.abs() - std::f64::consts::LN_2).exp() * (1.0 - (-2.0 * w.abs()).exp());
        self.xi + w.signum() * magnitude
    }

    /// Mean of the distribution.
    pub fn mean(&self) -> f64 {
        let w = (1.0 / (self.delta * self.delta)).exp();
        self.xi - self.lambda * w.sqrt() * (self.gamma / self.delta).sinh()
    }
}

pub fn jsu_quantile(params: &JsuParams, q: f64) -> f64 {
    params.transform(normal_quantile(q))
}

/// Point forecast plus each quantile of the fitted error distribution.
pub fn jsu_quantiles(point: f64, params: &JsuParams) -> QuantileCurve {
    quantile_percents().map(|k| point + jsu_quantile(params, k as f64 / 100.0))
}

fn point_nll(gamma: f64, delta: f64, xi: f64, lambda: f64, x: f64) -> f64 {
    let s = (x - xi) / lambda;
    let z = gamma + delta * s.asinh();
    -delta.ln() + lambda.ln() + 0.5 * (1.0 + s * s).ln() + 0.5 * z * z + LN_SQRT_2PI
}

/// Mean negative log-likelihood and its gradient with respect to
/// `(gamma, ln delta, xi, ln lambda)`.
fn nll_and_gradient(theta: &[f64; 4], xs: &[f64]) -> (f64, [f64; 4]) {
    let (gamma, delta, xi, lambda) = (theta[0], theta[1].exp(), theta[2], theta[3].exp());
    let mut f = 0.0;
    let mut g = [0.0; 4];
    for &x in xs {
        let s = (x - xi) / lambda;
        let one_s2 = 1.0 + s * s;
        let r = one_s2.sqrt();
        let a = s.asinh();
        let z = gamma + delta * a;
        f += 0.5 * one_s2.ln() + 0.5 * z * z;
        g[0] += z;
        g[1] += z * delta * a - 1.0;
        let common = s / one_s2 + z * delta / r;
        g[2] -= common / lambda;
        g[3] += 1.0 - s * common;
    }
    let n = xs.len() as f64;
    f = f / n - delta.ln() + lambda.ln() + LN_SQRT_2PI;
    (f, g.map(|v| v / n))
}

/// Outcome of a likelihood fit.
#[derive(Debug, Clone)]
pub struct JsuFit {
    pub params: JsuParams,
    /// Mean negative log-likelihood at the optimum, original units.
    pub mean_nll: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

pub const JSU_MAX_ITERATIONS: usize = 2_000;
pub const JSU_GRADIENT_TOLERANCE: f64 = 1e-6;
/// Iterations over which a relative decrease below [`JSU_STALL_TOLERANCE`],
/// or quantiles that no longer move, also count as convergence. Small
/// platykurtic or strongly skewed samples put the maximum on the normal or
/// lognormal boundary of the family, where the iterates drift along a ridge
/// of nearly constant likelihood.
pub const JSU_STALL_WINDOW: usize = 50;
pub const JSU_STALL_TOLERANCE: f64 = 1e-7;
/// Largest movement, in sample standard deviations, of the probe quantiles
/// over [`JSU_STALL_WINDOW`] iterations that still counts as convergence.
pub const JSU_QUANTILE_TOLERANCE: f64 = 1e-6;

/// Standard normal quantiles at 1, 5, 25, 50, 75, 95 and 99 percent.
const PROBE_Z: [f64; 7] = [-2.326_347_874, -1.644_853_627, -0.674_489_750, 0.0, 0.674_489_750, 1.644_853_627, 2.326_347_874];

/// Quantiles of the standardized fit at `PROBE_Z`.
fn probe_quantiles(theta: &[f64; 4]) -> [f64; 7] {
    let p = JsuParams {
        gamma: theta[0],
        delta: theta[1].exp(),
        xi: theta[2],
        lambda: theta[3].exp(),
    };
    PROBE_Z.map(|z| p.transform(z))
}

/// Location/scale-matched start for a given shape pair, standardized data
/// with mean 0 and variance 1.
fn moment_start(gamma: f64, delta: f64) -> [f64; 4] {
    let w = (1.0 / (delta * delta)).exp();
    let omega = gamma / delta;
    let var_unit = 0.5 * (w - 1.0) * (w * (2.0 * omega).cosh() + 1.0);
    let lambda = (1.0 / var_unit).sqrt();
    let xi = lambda * w.sqrt() * omega.sinh();
    [gamma, delta.ln(), xi, lambda.ln()]
}

pub fn jsu_fit(errors: &ErrorSample) -> Result<JsuParams> {
    jsu_fit_detailed(errors.residuals()).map(|f| f.params)
}

/// Maximum-likelihood fit with convergence diagnostics.
pub fn jsu_fit_detailed(xs: &[f64]) -> Result<JsuFit> {
    if xs.len() < 2 {
        return Err(Error::Fit("need at least two observations".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Fit("non-finite observation".into()));
    }
    let center = crate::stats::mean(xs);
    let spread = crate::stats::std_dev(xs);
    if !(spread > 1e-12 * center.abs().max(1.0)) {
        return Err(Error::Fit("sample has zero variance".into()));
    }
    let zs: Vec<f64> = xs.iter().map(|x| (x - center) / spread).collect();

    let mut best: Option<([f64; 4], f64)> = None;
    let skew_sign = {
        let mut sorted = zs.clone();
        sorted.sort_by(f64::total_cmp);
        let med = empirical_quantile(&sorted, 0.5);
        if med > 0.0 { 1.0 } else { -1.0 }
    };
    for delta in [0.6, 0.9, 1.3, 2.0, 3.0, 5.0, 9.0] {
        for gamma in [0.0, 0.5 * skew_sign, skew_sign] {
            let theta = moment_start(gamma, delta);
            let (f, _) = nll_and_gradient(&theta, &zs);
            if f.is_finite() && best.is_none_or(|(_, b)| f < b) {
                best = Some((theta, f));
            }
        }
    }
    let (theta0, _) = best.ok_or_else(|| Error::Fit("no finite starting point".into()))?;
    let (theta, f, grad_norm, iterations) = bfgs(theta0, &zs)?;

    let params = JsuParams::new(
        theta[0],
        theta[1].exp(),
        center + spread * theta[2],
        spread * theta[3].exp(),
    )
    .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(JsuFit {
        params,
        mean_nll: f + spread.ln(),
        iterations,
        gradient_norm: grad_norm,
    })
}

fn norm(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bfgs(mut theta: [f64; 4], zs: &[f64]) -> Result<([f64; 4], f64, f64, usize)> {
    let (mut f, mut g) = nll_and_gradient(&theta, zs);
    let mut hinv = [[0.0; 4]; 4];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut first_step = true;
    let mut history = std::collections::VecDeque::with_capacity(JSU_STALL_WINDOW + 1);
    for iter in 0..JSU_MAX_ITERATIONS {
        let gn = norm(&g);
        if gn < JSU_GRADIENT_TOLERANCE * f.abs().max(1.0) {
            return Ok((theta, f, gn, iter));
        }
        let probe = probe_quantiles(&theta);
        history.push_back((f, probe));
        if history.len() > JSU_STALL_WINDOW {
            let (old_f, old_probe) = history.pop_front().expect("non-empty");
            let moved = old_probe.iter().zip(&probe).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if old_f - f <= JSU_STALL_TOLERANCE * f.abs().max(1.0) || moved <= JSU_QUANTILE_TOLERANCE {
                return Ok((theta, f, gn, iter));
            }
        }
        let mut dir = [0.0; 4];
        for i in 0..4 {
            dir[i] = -(0..4).map(|j| hinv[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            for (i, row) in hinv.iter_mut().enumerate() {
                *row = [0.0; 4];
                row[i] = 1.0;
            }
            dir = g.map(|v| -v);
            slope = -gn * gn;
        }
        // Keep log-scale moves bounded so exp() stays finite.
        let max_move = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if max_move > 2.0 { 2.0 / max_move } else { 1.0 };
        let mut accepted = None;
        for _ in 0..80 {
            let trial: [f64; 4] = std::array::from_fn(|i| theta[i] + step * dir[i]);
            let (ft, gt) = nll_and_gradient(&trial, zs);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            // No decrease representable in floating point: accept the point
            // if it is stationary to within rounding of the objective.
            if gn < 1e-4 * f.abs().max(1.0) {
                return Ok((theta, f, gn, iter));
            }
            return Err(Error::Fit(format!(
                "line search failed after {iter} iterations (gradient norm {gn:.3e})"
            )));
        };
        let s: [f64; 4] = std::array::from_fn(|i| next[i] - theta[i]);
        let y: [f64; 4] = std::array::from_fn(|i| g_next[i] - g[i]);
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first_step {
                let scale = sy / dot(&y, &y);
                for (i, row) in hinv.iter_mut().enumerate() {
                    *row = [0.0; 4];
                    row[i] = scale;
                }
                first_step = false;
            }
            let rho = 1.0 / sy;
            let hy: [f64; 4] = std::array::from_fn(|i| (0..4).map(|j| hinv[i][j] * y[j]).sum());
            let yhy = dot(&y, &hy);
            for i in 0..4 {
                for j in 0..4 {
                    hinv[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        theta = next;
        f = f_next;
        g = g_next;
    }
    Err(Error::Fit(format!(
        "no convergence after {JSU_MAX_ITERATIONS} iterations (gradient norm {:.3e}, mean nll {f:.6}, gamma {:.4}, delta {:.4e}, lambda {:.4e})",
        norm(&g),
        theta[0],
        theta[1].exp(),
        theta[3].exp()
    )))
}
