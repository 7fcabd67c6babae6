//! Principal-component regression on grouped score blocks.
//!
//! The design is a list of groups (the common scores first, then one block
//! per cluster). Ordinary least squares uses the stacked design; the group
//! lasso penalizes each block's Euclidean norm with unit weights:
//!
//! ```text
//! (1/2n) ‖y − Σ_g X_g b_g‖² + λ Σ_g ‖b_g‖₂
//! ```
//!
//! solved by block coordinate descent with an exact minimization per block.
//! The response should be centered by the caller; no intercept is fitted.

use nalgebra::DVector;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CpcaError, Result};
use crate::matrix::{hstack, symmetric_eigen, to_dmatrix};
use crate::par::{map_indexed, Execution};

/// Block changes below this end the descent.
pub const GROUP_LASSO_TOL: f64 = 1e-8;
pub const GROUP_LASSO_MAX_SWEEPS: usize = 10_000;
/// Number of penalty values searched by [`cv_lambda`].
pub const CV_GRID_SIZE: usize = 50;
/// Smallest grid value relative to the null-solution bound.
pub const CV_GRID_RATIO: f64 = 1e-4;

fn check_groups(groups: &[Array2<f64>], y: ArrayView1<'_, f64>) -> Result<usize> {
    let n = y.len();
    if groups.is_empty() {
        return Err(CpcaError::InvalidArgument("no predictor groups".into()));
    }
    for (g, x) in groups.iter().enumerate() {
        if x.nrows() != n {
            return Err(CpcaError::Shape(format!(
                "group {g} has {} rows, response has {n}",
                x.nrows()
            )));
        }
    }
    Ok(n)
}

/// Least-squares coefficients, split by group.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<Array1<f64>>,
}

/// Least squares on the stacked design.
///
/// Rejects designs with at least as many columns as rows, and rank-deficient
/// designs (reporting the stacked column indices that depend on earlier ones).
pub fn fit_ols_pcr(groups: &[Array2<f64>], y: ArrayView1<'_, f64>) -> Result<OlsFit> {
    let n = check_groups(groups, y)?;
    let design = hstack(groups, n);
    let k = design.ncols();
    if n <= k {
        return Err(CpcaError::InvalidArgument(format!(
            "need more observations ({n}) than predictors ({k})"
        )));
    }
    let dependent = dependent_columns(design.view());
    if !dependent.is_empty() {
        return Err(CpcaError::RankDeficient(dependent));
    }
    let a = to_dmatrix(design.view());
    let b = DVector::from_iterator(n, y.iter().cloned());
    let beta = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| CpcaError::InvalidArgument(e.to_string()))?;
    Ok(OlsFit {
        coefficients: split(beta.as_slice(), groups),
    })
}

fn dependent_columns(design: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut out = Vec::new();
    for (j, col) in design.columns().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        let mut r = col.to_owned();
        for q in &basis {
            let c = q.dot(&r);
            r.scaled_add(-c, q);
        }
        let rn = r.dot(&r).sqrt();
        if norm == 0.0 || rn <= 1e-10 * norm {
            out.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    out
}

fn split(flat: &[f64], groups: &[Array2<f64>]) -> Vec<Array1<f64>> {
    let mut at = 0;
    groups
        .iter()
        .map(|g| {
            let w = g.ncols();
            let out = Array1::from(flat[at..at + w].to_vec());
            at += w;
            out
        })
        .collect()
}

/// `Σ_g X_g b_g`.
pub fn predict(groups: &[Array2<f64>], coefficients: &[Array1<f64>]) -> Result<Array1<f64>> {
    if groups.len() != coefficients.len() {
        return Err(CpcaError::Shape(format!(
            "{} groups, {} coefficient blocks",
            groups.len(),
            coefficients.len()
        )));
    }
    let n = groups.first().map_or(0, |g| g.nrows());
    let mut out = Array1::zeros(n);
    for (x, b) in groups.iter().zip(coefficients) {
        if x.ncols() != b.len() || x.nrows() != n {
            return Err(CpcaError::Shape("group and coefficient sizes differ".into()));
        }
        out += &x.dot(b);
    }
    Ok(out)
}

/// Mean squared prediction error.
pub fn mspe(predicted: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>) -> Result<f64> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(CpcaError::Shape(format!(
            "lengths {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / actual.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLassoFit {
    /// One block per group, in design order (common block first when present).
    pub coefficients: Vec<Array1<f64>>,
    pub lambda: f64,
    /// Objective after each full sweep; non-increasing.
    pub objective: Vec<f64>,
    pub active: Vec<bool>,
    pub converged: bool,
}

impl GroupLassoFit {
    pub fn sweeps(&self) -> usize {
        self.objective.len()
    }
}

/// Per-group Gram eigen-decomposition `X_gᵀX_g / n = Q diag(d) Qᵀ`.
struct Prepared<'a> {
    groups: &'a [Array2<f64>],
    n: f64,
    eig: Vec<(Array1<f64>, Array2<f64>)>,
}

impl<'a> Prepared<'a> {
    fn new(groups: &'a [Array2<f64>]) -> Self {
        let n = groups[0].nrows() as f64;
        let eig = groups
            .iter()
            .map(|x| {
                let gram = x.t().dot(x) / n;
                let (d, q) = symmetric_eigen(gram.view());
                let top = d.iter().cloned().fold(0.0, f64::max).max(1e-300);
                (d.mapv(|v| v.max(1e-12 * top)), q)
            })
            .collect();
        Self { groups, n, eig }
    }
}

/// Exact minimizer of `½ bᵀ A b − cᵀ b + λ ‖b‖` for `A = Q diag(d) Qᵀ`.
fn block_solve(d: &Array1<f64>, q: &Array2<f64>, c: &Array1<f64>, lambda: f64) -> Array1<f64> {
    let cnorm = c.dot(c).sqrt();
    if cnorm <= lambda {
        return Array1::zeros(c.len());
    }
    let cr = q.t().dot(c);
    if lambda == 0.0 {
        return q.dot(&(&cr / d));
    }
    // ‖u(t)‖ = t at the optimum, with u_i(t) = c_i t / (d_i t + λ)
    let excess = |t: f64| -> f64 {
        cr.iter()
            .zip(d.iter())
            .map(|(ci, di)| {
                let v = ci / (di * t + lambda);
                v * v
            })
            .sum::<f64>()
            - 1.0
    };
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, cnorm / dmin);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let u: Array1<f64> = cr
        .iter()
        .zip(d.iter())
        .map(|(ci, di)| ci * t / (di * t + lambda))
        .collect();
    q.dot(&u)
}

fn objective(residual: &Array1<f64>, coefs: &[Array1<f64>], lambda: f64, n: f64) -> f64 {
    residual.dot(residual) / (2.0 * n) + lambda * coefs.iter().map(|b| b.dot(b).sqrt()).sum::<f64>()
}

fn descend(prep: &Prepared<'_>, y: ArrayView1<'_, f64>, lambda: f64, init: Option<&[Array1<f64>]>) -> GroupLassoFit {
    let groups = prep.groups;
    let mut coefs: Vec<Array1<f64>> = match init {
        Some(b) => b.to_vec(),
        None => groups.iter().map(|g| Array1::zeros(g.ncols())).collect(),
    };
    let mut residual = y.to_owned();
    for (x, b) in groups.iter().zip(&coefs) {
        residual -= &x.dot(b);
    }
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..GROUP_LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for (g, x) in groups.iter().enumerate() {
            let (d, q) = &prep.eig[g];
            let gram_b = x.t().dot(&x.dot(&coefs[g])) / prep.n;
            let c = x.t().dot(&residual) / prep.n + gram_b;
            let next = block_solve(d, q, &c, lambda);
            let delta = &next - &coefs[g];
            let change = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if change > 0.0 {
                residual -= &x.dot(&delta);
                coefs[g] = next;
            }
            max_change = max_change.max(change);
        }
        trace.push(objective(&residual, &coefs, lambda, prep.n));
        if max_change < GROUP_LASSO_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("group lasso did not converge in {GROUP_LASSO_MAX_SWEEPS} sweeps (lambda {lambda})");
    }
    GroupLassoFit {
        active: coefs.iter().map(|b| b.iter().any(|v| *v != 0.0)).collect(),
        coefficients: coefs,
        lambda,
        objective: trace,
        converged,
    }
}

/// Group lasso by block coordinate descent from a zero start.
pub fn fit_group_lasso(groups: &[Array2<f64>], y: ArrayView1<'_, f64>, lambda: f64) -> Result<GroupLassoFit> {
    check_groups(groups, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CpcaError::InvalidArgument(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(descend(&Prepared::new(groups), y, lambda, None))
}

/// Smallest penalty with the all-zero solution: `max_g ‖X_gᵀ y‖ / n`.
pub fn lambda_max(groups: &[Array2<f64>], y: ArrayView1<'_, f64>) -> Result<f64> {
    let n = check_groups(groups, y)? as f64;
    Ok(groups
        .iter()
        .map(|x| {
            let v = x.t().dot(&y);
            v.dot(&v).sqrt() / n
        })
        .fold(0.0, f64::max))
}

/// Largest violation of the optimality conditions: for an active group
/// `| ‖X_gᵀ r‖/n − λ |`, for an inactive one `max(0, ‖X_gᵀ r‖/n − λ)`.
pub fn kkt_violation(groups: &[Array2<f64>], y: ArrayView1<'_, f64>, fit: &GroupLassoFit) -> Result<f64> {
    let n = check_groups(groups, y)? as f64;
    let residual = &y - &predict(groups, &fit.coefficients)?;
    let mut worst = 0.0f64;
    for (g, x) in groups.iter().enumerate() {
        let grad = x.t().dot(&residual) / n;
        let norm = grad.dot(&grad).sqrt();
        let v = if fit.active[g] {
            (norm - fit.lambda).abs()
        } else {
            (norm - fit.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Outcome of [`cv_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    /// Decreasing penalty grid.
    pub grid: Vec<f64>,
    /// Mean validation squared error for each grid value.
    pub errors: Vec<f64>,
}

impl CvOutcome {
    pub fn selected_index(&self) -> usize {
        self.grid.iter().position(|&l| l == self.lambda).unwrap_or(0)
    }
}

/// Log-spaced grid from `lambda_max` down to `lambda_max · CV_GRID_RATIO`.
pub fn lambda_grid(lambda_max: f64) -> Vec<f64> {
    let steps = (CV_GRID_SIZE - 1) as f64;
    (0..CV_GRID_SIZE)
        .map(|i| lambda_max * CV_GRID_RATIO.powf(i as f64 / steps))
        .collect()
}

/// Penalty minimizing the mean validation error over contiguous folds.
///
/// Each fold's path is fitted from the largest penalty down with warm
/// starts; ties keep the larger penalty.
pub fn cv_lambda(groups: &[Array2<f64>], y: ArrayView1<'_, f64>, folds: usize, exec: Execution) -> Result<CvOutcome> {
    let n = check_groups(groups, y)?;
    if folds < 2 {
        return Err(CpcaError::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(CpcaError::InvalidArgument(format!("{n} observations for {folds} folds")));
    }
    let top = lambda_max(groups, y)?;
    if top == 0.0 {
        return Ok(CvOutcome {
            lambda: 0.0,
            grid: vec![0.0],
            errors: vec![y.dot(&y) / n as f64],
        });
    }
    let grid = lambda_grid(top);
    let per_fold: Vec<Vec<f64>> = map_indexed(exec, folds, |f| {
        let (start, end) = (f * n / folds, (f + 1) * n / folds);
        let train: Vec<usize> = (0..n).filter(|i| *i < start || *i >= end).collect();
        let test: Vec<usize> = (start..end).collect();
        let take = |rows: &[usize]| -> Vec<Array2<f64>> {
            groups.iter().map(|x| x.select(ndarray::Axis(0), rows)).collect()
        };
        let (gx, vx) = (take(&train), take(&test));
        let gy: Array1<f64> = train.iter().map(|&i| y[i]).collect();
        let vy: Array1<f64> = test.iter().map(|&i| y[i]).collect();
        let prep = Prepared::new(&gx);
        let mut warm: Option<Vec<Array1<f64>>> = None;
        grid.iter()
            .map(|&lambda| {
                let fit = descend(&prep, gy.view(), lambda, warm.as_deref());
                let pred = predict(&vx, &fit.coefficients).expect("shapes match");
                warm = Some(fit.coefficients);
                let d = &pred - &vy;
                d.dot(&d)
            })
            .collect()
    });
    let errors: Vec<f64> = (0..grid.len())
        .map(|i| per_fold.iter().map(|e| e[i]).sum::<f64>() / n as f64)
        .collect();
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = i;
        }
    }
    Ok(CvOutcome {
        lambda: grid[best],
        grid,
        errors,
    })
}
