//! Exact linear quantile regression.
//!
//! The check-loss objective `sum_i rho_q(y_i - x_i'b)` is convex and
//! piecewise linear; its minimum is attained at a vertex where `p`
//! observations are interpolated. [`solve_quantile_regression`] walks from
//! vertex to vertex: at each vertex it evaluates the directional derivative
//! along the `2p` edges obtained by releasing one interpolated observation,
//! follows the steepest descending edge, and stops at the minimizing
//! breakpoint of the one-dimensional piecewise-linear restriction (a weighted
//! median search, so several vertices can be passed in one step). This is the
//! simplex method on the LP formulation, specialised to the structure of
//! the problem. It terminates at a vertex with no descending edge, which is
//! an exact optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row-major regressor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let p = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if p == 0 {
            return Err(Error::Argument("design needs at least one row and column".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in rows {
            let r = r.as_ref();
            if r.len() != p {
                return Err(Error::Argument("ragged design rows".into()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("non-finite regressor".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n: rows.len(), p, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, beta)).collect()
    }

    pub fn residuals(&self, y: &[f64], beta: &[f64]) -> Vec<f64> {
        self.rows().zip(y).map(|(r, yi)| yi - dot(r, beta)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pinball (check) loss of residual `u = y - forecast` at level `q`.
#[inline]
pub fn check_loss(q: f64, u: f64) -> f64 {
    if u < 0.0 { (q - 1.0) * u } else { q * u }
}

pub fn check_objective(design: &Design, y: &[f64], beta: &[f64], q: f64) -> f64 {
    design.rows().zip(y).map(|(r, yi)| check_loss(q, yi - dot(r, beta))).sum()
}

#[derive(Debug, Clone)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    /// Observations interpolated at the optimal vertex.
    pub basis: Vec<usize>,
    pub iterations: usize,
}

fn validate(design: &Design, y: &[f64], q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Argument(format!("quantile level {q} outside (0, 1)")));
    }
    if y.len() != design.n_rows() {
        return Err(Error::Argument(format!(
            "{} targets for {} design rows",
            y.len(),
            design.n_rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite target".into()));
    }
    if design.n_rows() < design.n_cols() {
        return Err(Error::Solver(format!(
            "{} observations cannot identify {} coefficients",
            design.n_rows(),
            design.n_cols()
        )));
    }
    Ok(())
}

/// Picks `p` linearly independent rows, preferring rows with small
/// least-squares residuals so the walk starts near the centre of the data.
fn initial_basis(design: &Design, y: &[f64]) -> Result<Vec<usize>> {
    let (n, p) = (design.n_rows(), design.n_cols());
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (r, yi) in design.rows().zip(y) {
        for a in 0..p {
            xty[a] += r[a] * yi;
            for b in 0..p {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    let beta = xtx
        .cholesky()
        .map(|c| c.solve(&xty).as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; p]);
    let resid = design.residuals(y, &beta);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));

    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    for i in order {
        let row = design.row(i);
        let row_norm = dot(row, row).sqrt();
        if row_norm == 0.0 {
            continue;
        }
        let mut v = row.to_vec();
        for e in &ortho {
            let c = dot(&v, e);
            v.iter_mut().zip(e).for_each(|(vi, ei)| *vi -= c * ei);
        }
        let vn = dot(&v, &v).sqrt();
        if vn > 1e-9 * row_norm {
            v.iter_mut().for_each(|x| *x /= vn);
            ortho.push(v);
            basis.push(i);
            if basis.len() == p {
                return Ok(basis);
            }
        }
    }
    Err(Error::Solver(
        "regressors are linearly dependent (degenerate columns); no interpolating vertex exists".into(),
    ))
}

fn basis_inverse(design: &Design, basis: &[usize]) -> Option<DMatrix<f64>> {
    let p = design.n_cols();
    let xb = DMatrix::from_fn(p, p, |i, j| design.row(basis[i])[j]);
    xb.try_inverse()
}

/// Exact minimizer of the check-loss objective. `warm_basis`, if given and
/// valid, is used as the starting vertex (e.g. the optimal basis of a
/// neighbouring quantile level).
pub fn solve_quantile_regression(
    design: &Design,
    y: &[f64],
    q: f64,
    warm_basis: Option<&[usize]>,
) -> Result<QrSolution> {
    validate(design, y, q)?;
    let (n, p) = (design.n_rows(), design.n_cols());
    let mut basis = match warm_basis {
        Some(b) if b.len() == p && b.iter().all(|&i| i < n) && basis_inverse(design, b).is_some() => b.to_vec(),
        _ => initial_basis(design, y)?,
    };
    let max_iterations = 50 * n + 1_000;
    let mut in_basis = vec![false; n];
    let mut weights = vec![0.0; n];
    let mut breakpoints: Vec<(f64, f64, usize)> = Vec::with_capacity(n);

    for iteration in 0..max_iterations {
        let inv = basis_inverse(design, &basis)
            .ok_or_else(|| Error::Solver("singular basis encountered".into()))?;
        let yb = DVector::from_iterator(p, basis.iter().map(|&i| y[i]));
        let beta = (&inv * yb).as_slice().to_vec();
        in_basis.iter_mut().for_each(|b| *b = false);
        for &i in &basis {
            in_basis[i] = true;
        }
        let mut resid = design.residuals(y, &beta);
        for &i in &basis {
            resid[i] = 0.0;
        }

        // Linear part of the directional derivative: w_i = d rho / d(-u).
        // Nonbasic rows with an exactly zero residual contribute a kink that
        // is handled per direction below.
        let mut zero_rows = Vec::new();
        let mut xtw = vec![0.0; p];
        for i in 0..n {
            if in_basis[i] {
                weights[i] = 0.0;
                continue;
            }
            let w = if resid[i] > 0.0 {
                -q
            } else if resid[i] < 0.0 {
                1.0 - q
            } else {
                zero_rows.push(i);
                0.0
            };
            weights[i] = w;
            if w != 0.0 {
                let r = design.row(i);
                for (acc, x) in xtw.iter_mut().zip(r) {
                    *acc += w * x;
                }
            }
        }

        // For edge j with sign s the coefficient move is s * inv[:, j]; the
        // released basic observation's residual becomes -s * t.
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..p {
            let dir = inv.column(j);
            let lin: f64 = xtw.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
            let mut scale = 1.0;
            for (sign, base) in [(1.0, 1.0 - q), (-1.0, q)] {
                let mut slope = base + sign * lin;
                for &i in &zero_rows {
                    let a = sign * dot(design.row(i), dir.as_slice());
                    slope += if a > 0.0 { a * (1.0 - q) } else { -a * q };
                    scale += a.abs();
                }
                let tol = 1e-11 * (scale + lin.abs());
                if slope < -tol && best.is_none_or(|(s, _, _)| slope < s) {
                    best = Some((slope, j, sign));
                }
            }
        }
        let Some((slope0, leave, sign)) = best else {
            let objective = resid.iter().map(|&u| check_loss(q, u)).sum();
            return Ok(QrSolution {
                coefficients: beta,
                objective,
                basis,
                iterations: iteration,
            });
        };

        // Line search over breakpoints of the restricted objective.
        let dir: Vec<f64> = inv.column(leave).iter().map(|v| sign * v).collect();
        breakpoints.clear();
        for i in 0..n {
            if in_basis[i] || resid[i] == 0.0 {
                continue;
            }
            let a = dot(design.row(i), &dir);
            if a != 0.0 && (resid[i] > 0.0) == (a > 0.0) {
                breakpoints.push((resid[i] / a, a.abs(), i));
            }
        }
        breakpoints.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, gain, i) in &breakpoints {
            slope += gain;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let entering = entering.ok_or_else(|| Error::Solver("objective unbounded below along an edge".into()))?;
        basis[leave] = entering;
    }
    Err(Error::Solver(format!("no optimal vertex after {max_iterations} iterations")))
}

/// Coefficients for every percentile 1..=99, solved outward from the median
/// with each level warm-started from its neighbour's optimal vertex.
pub fn solve_quantile_grid(design: &Design, y: &[f64]) -> Result<Vec<QrSolution>> {
    let mut out: Vec<Option<QrSolution>> = vec![None; super::N_QUANTILES];
    let median = solve_quantile_regression(design, y, 0.5, None)?;
    let median_basis = median.basis.clone();
    out[49] = Some(median);
    for range in [(51..=99).collect::<Vec<_>>(), (1..=49).rev().collect()] {
        let mut warm = median_basis.clone();
        for k in range {
            let sol = solve_quantile_regression(design, y, k as f64 / 100.0, Some(&warm))?;
            warm = sol.basis.clone();
            out[k - 1] = Some(sol);
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every level solved")).collect())
}
