//! Covariance estimates built from fitted components, plus baselines.
//!
//! All sample quantities use the divisor `n`, matching the eigenvalues of
//! `XᵀX / n` used throughout the crate.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::engine::{fit, CpcaModel, FitConfig};
use crate::error::{CpcaError, Result};
use crate::matrix::{center_view, from_dmatrix, pca_full, pca_spectrum, symmetric_eigen, to_dmatrix, DataMatrix};
use crate::select::{default_cap, ratio_select};

/// Lower bound applied to every cluster noise variance.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Largest condition number accepted by [`precision`] without a ridge.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance below zero tolerated for eigenvalues of a PSD estimate.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMethod {
    Cpca,
    Pca,
    Poet,
    Sample,
}

impl CovMethod {
    pub const ALL: [CovMethod; 4] = [CovMethod::Cpca, CovMethod::Pca, CovMethod::Poet, CovMethod::Sample];

    pub fn name(self) -> &'static str {
        match self {
            CovMethod::Cpca => "cpca",
            CovMethod::Pca => "pca",
            CovMethod::Poet => "poet",
            CovMethod::Sample => "sample",
        }
    }
}

impl fmt::Display for CovMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovMethod {
    type Err = CpcaError;

    fn from_str(s: &str) -> Result<Self> {
        CovMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CpcaError::InvalidArgument(format!("unknown covariance method `{s}`")))
    }
}

/// A `p × p` covariance estimate with its provenance.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub sigma: Array2<f64>,
    pub method: CovMethod,
    /// Number of low-rank components behind the estimate (0 for `sample`).
    pub rank: usize,
    /// Soft threshold used by POET.
    pub threshold: Option<f64>,
    /// Diagonal ridge added to restore positive semi-definiteness.
    pub ridge: f64,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// `L diag(d) Lᵀ`.
fn low_rank(loadings: ArrayView2<'_, f64>, d: &[f64]) -> Array2<f64> {
    let mut scaled = loadings.to_owned();
    for (mut col, &v) in scaled.columns_mut().into_iter().zip(d) {
        col *= v;
    }
    scaled.dot(&loadings.t())
}

/// Structured estimate from a fitted model:
/// `Φ diag(var G) Φᵀ + Σ_j Γ̃⁽ʲ⁾ diag(var F⁽ʲ⁾) Γ̃⁽ʲ⁾ᵀ + Σ_j σ²_j I⁽ʲ⁾`.
pub fn cpca_cov(model: &CpcaModel) -> CovarianceEstimate {
    let p = model.n_variables();
    let mut sigma = low_rank(model.phi.view(), model.common_variances.as_slice().unwrap_or(&[]));
    for c in &model.clusters {
        let block = low_rank(c.gamma.view(), &c.variances.to_vec());
        let s2 = c.sigma2.max(SIGMA2_FLOOR);
        for (a, &i) in c.members.iter().enumerate() {
            for (b, &j) in c.members.iter().enumerate() {
                sigma[[i, j]] += block[[a, b]];
            }
            sigma[[i, i]] += s2;
        }
    }
    symmetrize(&mut sigma);
    debug_assert_eq!(sigma.nrows(), p);
    CovarianceEstimate {
        sigma,
        method: CovMethod::Cpca,
        rank: model.total_components(),
        threshold: None,
        ridge: 0.0,
    }
}

/// Sample covariance of the columns (divisor `n`).
pub fn sample_cov(x: ArrayView2<'_, f64>) -> Result<CovarianceEstimate> {
    check_panel(x)?;
    let (c, _) = center_view(x);
    let mut sigma = c.t().dot(&c) / x.nrows() as f64;
    symmetrize(&mut sigma);
    Ok(CovarianceEstimate {
        sigma,
        method: CovMethod::Sample,
        rank: 0,
        threshold: None,
        ridge: 0.0,
    })
}

fn check_panel(x: ArrayView2<'_, f64>) -> Result<()> {
    let (n, p) = x.dim();
    if n < 2 || p < 1 {
        return Err(CpcaError::Shape(format!("need at least 2 rows and 1 column, got {n}×{p}")));
    }
    Ok(())
}

struct Decomposed {
    sample: Array2<f64>,
    low: Array2<f64>,
    tail_mean: f64,
}

fn decompose(x: ArrayView2<'_, f64>, r: usize) -> Result<Decomposed> {
    check_panel(x)?;
    let (n, p) = x.dim();
    let max = n.min(p);
    if r < 1 || r > max {
        return Err(CpcaError::RankOutOfRange { rank: r, max });
    }
    let (c, _) = center_view(x);
    let (svd, eig) = pca_full(c.view());
    let loadings = svd.v.slice(ndarray::s![.., ..r]);
    let low = low_rank(loadings, &eig.as_slice().expect("contiguous")[..r]);
    let mut sample = c.t().dot(&c) / n as f64;
    symmetrize(&mut sample);
    let total: f64 = sample.diag().sum();
    let kept: f64 = eig.iter().take(r).sum();
    Ok(Decomposed {
        sample,
        low,
        tail_mean: ((total - kept) / p as f64).max(0.0),
    })
}

/// `r` leading principal components plus a common residual variance
/// (the mean of the discarded spectrum over all `p` variables) on the diagonal.
pub fn pca_cov(x: ArrayView2<'_, f64>, r: usize) -> Result<CovarianceEstimate> {
    let d = decompose(x, r)?;
    let mut sigma = d.low;
    sigma.diag_mut().mapv_inplace(|v| v + d.tail_mean);
    symmetrize(&mut sigma);
    Ok(CovarianceEstimate {
        sigma,
        method: CovMethod::Pca,
        rank: r,
        threshold: None,
        ridge: 0.0,
    })
}

/// Default POET threshold on the correlation scale, `0.5 √(log p / n)`.
pub fn default_poet_threshold(n: usize, p: usize) -> f64 {
    0.5 * ((p.max(1) as f64).ln() / n.max(1) as f64).sqrt()
}

/// Low-rank PCA part plus the soft-thresholded residual covariance.
///
/// Off-diagonal residual entries are shrunk on the correlation scale,
/// `sign(ρ) (|ρ| − threshold)₊ √(u_ii u_jj)`; the diagonal is kept. An
/// indefinite result gets the smallest diagonal ridge that makes it PSD.
pub fn poet_cov(x: ArrayView2<'_, f64>, r: usize, threshold: f64) -> Result<CovarianceEstimate> {
    if !(threshold >= 0.0) {
        return Err(CpcaError::InvalidArgument(format!("threshold must be non-negative, got {threshold}")));
    }
    let d = decompose(x, r)?;
    let resid = &d.sample - &d.low;
    let p = resid.nrows();
    let mut sigma = d.low;
    for i in 0..p {
        sigma[[i, i]] += resid[[i, i]];
        for j in (i + 1)..p {
            let scale = (resid[[i, i]] * resid[[j, j]]).max(0.0).sqrt();
            let v = if scale > 0.0 {
                let rho = resid[[i, j]] / scale;
                rho.signum() * (rho.abs() - threshold).max(0.0) * scale
            } else {
                0.0
            };
            sigma[[i, j]] += v;
            sigma[[j, i]] += v;
        }
    }
    symmetrize(&mut sigma);
    let ridge = psd_ridge(sigma.view());
    if ridge > 0.0 {
        log::info!("poet estimate indefinite, ridge {ridge:.3e} added");
        sigma.diag_mut().mapv_inplace(|v| v + ridge);
    }
    Ok(CovarianceEstimate {
        sigma,
        method: CovMethod::Poet,
        rank: r,
        threshold: Some(threshold),
        ridge,
    })
}

/// Ridge lifting the smallest eigenvalue to zero, or 0 when already PSD.
fn psd_ridge(sigma: ArrayView2<'_, f64>) -> f64 {
    let (values, _) = symmetric_eigen(sigma);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -min
    } else {
        0.0
    }
}

/// Squared Frobenius distance `‖A − B‖²_F`.
pub fn frob_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CpcaError::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Inverse of a covariance estimate.
#[derive(Debug, Clone)]
pub struct Precision {
    pub matrix: Array2<f64>,
    /// Ridge added before inverting.
    pub ridge: f64,
    /// Condition number of the estimate before any ridge.
    pub condition: f64,
    /// Set when the condition number exceeded [`MAX_CONDITION`].
    pub flagged: bool,
}

/// Invert `est.sigma`. When the estimate is singular or its condition number
/// exceeds [`MAX_CONDITION`], a ridge bringing it down to that bound is added
/// first and the result is flagged.
pub fn precision(est: &CovarianceEstimate) -> Result<Precision> {
    precision_of(est.sigma.view())
}

pub(crate) fn precision_of(sigma: ArrayView2<'_, f64>) -> Result<Precision> {
    let p = sigma.nrows();
    if p == 0 || sigma.ncols() != p {
        return Err(CpcaError::Shape(format!("covariance must be square and non-empty, got {:?}", sigma.dim())));
    }
    if let Some(v) = sigma.iter().find(|v| !v.is_finite()) {
        return Err(CpcaError::InvalidArgument(format!("covariance contains {v}")));
    }
    let (values, _) = symmetric_eigen(sigma);
    let max = values[0];
    let min = values[p - 1];
    if max <= 0.0 {
        return Err(CpcaError::NotPositiveDefinite("largest eigenvalue is not positive".into()));
    }
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let flagged = condition > MAX_CONDITION;
    let ridge = if flagged { max / MAX_CONDITION - min } else { 0.0 };
    if flagged {
        log::warn!("covariance condition number {condition:.3e}, ridge {ridge:.3e} added");
    }
    let mut m = to_dmatrix(sigma);
    m = (&m + m.transpose()) * 0.5;
    for i in 0..p {
        m[(i, i)] += ridge;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| CpcaError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let mut matrix = from_dmatrix(&chol.inverse());
    symmetrize(&mut matrix);
    Ok(Precision {
        matrix,
        ridge,
        condition,
        flagged,
    })
}

/// Whole-panel component count by the ratio rule with the default cap.
pub fn ratio_rank(x: ArrayView2<'_, f64>) -> Result<usize> {
    check_panel(x)?;
    let (c, _) = center_view(x);
    let eig = pca_spectrum(c.view());
    let cap = default_cap(x.nrows(), x.ncols()).min(eig.len().saturating_sub(1)).max(1);
    if eig.len() < 2 {
        return Ok(1);
    }
    ratio_select(eig.as_slice().expect("contiguous"), cap)
}

/// An estimate together with the model behind it, when there is one.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub estimate: CovarianceEstimate,
    pub model: Option<CpcaModel>,
}

/// Fit `method` on a raw (uncentered) panel. PCA and POET use [`ratio_rank`]
/// components; POET uses [`default_poet_threshold`] unless one is given.
pub fn estimate(method: CovMethod, data: &DataMatrix, cfg: &FitConfig, poet_threshold: Option<f64>) -> Result<Fitted> {
    let x = data.view();
    match method {
        CovMethod::Cpca => {
            let model = fit(data, cfg)?;
            Ok(Fitted {
                estimate: cpca_cov(&model),
                model: Some(model),
            })
        }
        CovMethod::Pca => Ok(Fitted {
            estimate: pca_cov(x, ratio_rank(x)?)?,
            model: None,
        }),
        CovMethod::Poet => {
            let t = poet_threshold.unwrap_or_else(|| default_poet_threshold(x.nrows(), x.ncols()));
            Ok(Fitted {
                estimate: poet_cov(x, ratio_rank(x)?, t)?,
                model: None,
            })
        }
        CovMethod::Sample => Ok(Fitted {
            estimate: sample_cov(x)?,
            model: None,
        }),
    }
}
