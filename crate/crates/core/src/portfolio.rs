//! Global minimum-variance portfolios and a rolling out-of-sample backtest.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPartition;
use crate::covariance::{estimate, precision, CovMethod, CovarianceEstimate};
use crate::engine::FitConfig;
use crate::error::{CpcaError, Result};
use crate::matrix::DataMatrix;
use crate::par::{map_indexed, Execution};

/// Default trailing window, in days.
pub const DEFAULT_WINDOW: usize = 110;

/// `w = Σ⁻¹1 / (1ᵀΣ⁻¹1)`. Short positions are allowed.
pub fn mvp_weights(est: &CovarianceEstimate) -> Result<Array1<f64>> {
    let inv = precision(est)?;
    let raw = inv.matrix.sum_axis(ndarray::Axis(1));
    let total = raw.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(CpcaError::NotPositiveDefinite(format!("1ᵀΣ⁻¹1 = {total}")));
    }
    Ok(raw / total)
}

/// Sample standard deviation and mean-to-risk ratios of a return series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean: f64,
    /// Sample standard deviation (divisor `m − 1`).
    pub std: f64,
    /// `mean / std`; `None` when the standard deviation is zero.
    pub information_ratio: Option<f64>,
    /// `(mean − risk_free) / std`; `None` when the standard deviation is zero.
    pub sharpe_ratio: Option<f64>,
}

impl Metrics {
    /// Whether the ratios are undefined (no variation in the series).
    pub fn degenerate(&self) -> bool {
        self.information_ratio.is_none()
    }
}

pub fn performance_metrics(series: &[f64], risk_free: f64) -> Result<Metrics> {
    if series.is_empty() {
        return Err(CpcaError::InvalidArgument("return series is empty".into()));
    }
    let m = series.len() as f64;
    let mean = series.iter().sum::<f64>() / m;
    let std = if series.len() > 1 {
        (series.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let scale = series.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let defined = std > 1e-14 * scale.max(f64::MIN_POSITIVE);
    Ok(Metrics {
        mean,
        std,
        information_ratio: defined.then(|| mean / std),
        sharpe_ratio: defined.then(|| (mean - risk_free) / std),
    })
}

/// How the CPCA fit is started on each window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartMode {
    /// Start from the previous window's partition; windows run in order.
    #[default]
    Warm,
    /// Fresh initialization on every window; windows may run in parallel.
    Cold,
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub window: usize,
    pub method: CovMethod,
    /// Refit every `k` out-of-sample days, carrying weights in between.
    pub refit_every: usize,
    pub mode: StartMode,
    pub fit: FitConfig,
    pub poet_threshold: Option<f64>,
    /// Daily risk-free rate used for the Sharpe ratio.
    pub risk_free: f64,
    pub execution: Execution,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            method: CovMethod::Cpca,
            refit_every: 1,
            mode: StartMode::Warm,
            fit: FitConfig::default(),
            poet_threshold: None,
            risk_free: 0.0,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestResult {
    pub method: CovMethod,
    pub window: usize,
    pub mode: StartMode,
    /// Row index of each out-of-sample day in the input panel.
    pub days: Vec<usize>,
    /// Realized portfolio return per out-of-sample day.
    pub returns: Vec<f64>,
    /// Weights held on each out-of-sample day.
    pub weights: Vec<Vec<f64>>,
    pub metrics: Metrics,
    /// Days on which the estimator failed and earlier weights were carried.
    pub failures: Vec<usize>,
}

impl BacktestResult {
    pub fn degenerate(&self) -> bool {
        self.metrics.degenerate()
    }
}

struct Refit {
    weights: Option<Array1<f64>>,
    partition: Option<ClusterPartition>,
}

fn refit_window(
    window: ArrayView2<'_, f64>,
    ids: &[String],
    cfg: &BacktestConfig,
    start: Option<ClusterPartition>,
) -> Refit {
    let attempt = || -> Result<(Array1<f64>, Option<ClusterPartition>)> {
        let data = DataMatrix::new(window.to_owned(), ids.to_vec())?;
        let fit_cfg = FitConfig {
            initial_partition: start.clone(),
            ..cfg.fit.clone()
        };
        let fitted = estimate(cfg.method, &data, &fit_cfg, cfg.poet_threshold)?;
        let w = mvp_weights(&fitted.estimate)?;
        Ok((w, fitted.model.map(|m| m.partition)))
    };
    match attempt() {
        Ok((w, partition)) => Refit {
            weights: Some(w),
            partition,
        },
        Err(e) => {
            log::warn!("{} estimator failed on window: {e}", cfg.method);
            Refit {
                weights: None,
                partition: start,
            }
        }
    }
}

/// For each day `i ≥ window`, estimate the covariance on rows
/// `i − window .. i`, form minimum-variance weights and realize `wᵀ r_i`.
///
/// Estimator failures carry the previous weights (equal weights before the
/// first success) and are listed in `failures`.
pub fn rolling_backtest(returns: &DataMatrix, cfg: &BacktestConfig) -> Result<BacktestResult> {
    let (t, p) = returns.values().dim();
    if cfg.window < 2 || cfg.window >= t {
        return Err(CpcaError::InvalidArgument(format!(
            "window must lie in 2..{t} for {t} rows, got {}",
            cfg.window
        )));
    }
    if cfg.refit_every < 1 {
        return Err(CpcaError::InvalidArgument("refit_every must be at least 1".into()));
    }
    let x = returns.view();
    let ids = returns.column_ids();
    let days: Vec<usize> = (cfg.window..t).collect();
    let refit_days: Vec<usize> = days.iter().copied().step_by(cfg.refit_every).collect();

    let fitted: Vec<Option<Array1<f64>>> = match (cfg.method, cfg.mode) {
        (CovMethod::Cpca, StartMode::Warm) => {
            let mut start = None;
            let mut out = Vec::with_capacity(refit_days.len());
            for &day in &refit_days {
                let r = refit_window(x.slice(s![day - cfg.window..day, ..]), ids, cfg, start.take());
                start = r.partition;
                out.push(r.weights);
            }
            out
        }
        _ => map_indexed(cfg.execution, refit_days.len(), |k| {
            let day = refit_days[k];
            refit_window(x.slice(s![day - cfg.window..day, ..]), ids, cfg, None).weights
        }),
    };

    let mut current = Array1::from_elem(p, 1.0 / p as f64);
    let mut failures = Vec::new();
    let mut weights = Vec::with_capacity(days.len());
    let mut realized = Vec::with_capacity(days.len());
    let mut next = fitted.into_iter();
    for (k, &day) in days.iter().enumerate() {
        if k % cfg.refit_every == 0 {
            match next.next().flatten() {
                Some(w) => current = w,
                None => failures.push(day),
            }
        }
        realized.push(current.dot(&x.row(day)));
        weights.push(current.to_vec());
    }
    let metrics = performance_metrics(&realized, cfg.risk_free)?;
    if metrics.degenerate() {
        log::warn!("portfolio returns have no variation");
    }
    Ok(BacktestResult {
        method: cfg.method,
        window: cfg.window,
        mode: cfg.mode,
        days,
        returns: realized,
        weights,
        metrics,
        failures,
    })
}

/// `wᵀ Σ w`.
pub fn portfolio_variance(sigma: ArrayView2<'_, f64>, w: &Array1<f64>) -> f64 {
    w.dot(&sigma.dot(w))
}

/// Stack weight vectors into a days × p matrix.
pub fn weight_matrix(result: &BacktestResult) -> Array2<f64> {
    let p = result.weights.first().map_or(0, Vec::len);
    Array2::from_shape_fn((result.weights.len(), p), |(i, j)| result.weights[i][j])
}
