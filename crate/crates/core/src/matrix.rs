//! Dense linear-algebra substrate: data panels, centering, PCA, correlation
//! and random orthonormal frames.
//!
//! Data live in `ndarray` arrays; factorizations are delegated to `nalgebra`.
//! Eigenvalues follow the `XᵀX / n` convention throughout.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CpcaError, Result};

/// An `n × p` panel: rows are observations, columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    column_ids: Vec<String>,
}

impl DataMatrix {
    /// Build a panel, checking `n ≥ 2`, `p ≥ 1`, finite entries and one id per column.
    pub fn new(values: Array2<f64>, column_ids: Vec<String>) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(CpcaError::Shape(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(CpcaError::Shape("need at least 1 column".into()));
        }
        if column_ids.len() != p {
            return Err(CpcaError::Shape(format!(
                "{} column ids for {p} columns",
                column_ids.len()
            )));
        }
        check_finite(values.view())?;
        Ok(Self { values, column_ids })
    }

    /// Build a panel with generated ids `x1, x2, …`.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        let ids = default_ids(values.ncols());
        Self::new(values, ids)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Same column ids, new values of identical width.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(values, self.column_ids.clone())
    }
}

pub(crate) fn default_ids(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub(crate) fn check_finite(x: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(CpcaError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Subtract column means; the means are returned for later recovery.
pub fn center_columns(x: &DataMatrix) -> (DataMatrix, Array1<f64>) {
    let (centered, means) = center_view(x.view());
    let out = DataMatrix {
        values: centered,
        column_ids: x.column_ids.clone(),
    };
    (out, means)
}

pub(crate) fn center_view(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let means = x
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()));
    let centered = &x - &means.view().insert_axis(Axis(0));
    (centered, means)
}

/// Scores, loadings and the full eigenvalue sequence of one PCA pass.
#[derive(Debug, Clone)]
pub struct PcaFactorization {
    /// `n × r`, equal to centered data times loadings.
    pub scores: Array2<f64>,
    /// `p × r` with orthonormal columns.
    pub loadings: Array2<f64>,
    /// All `min(n, p)` eigenvalues of `XᵀX / n`, non-increasing.
    pub eigenvalues: Array1<f64>,
    pub rank: usize,
}

/// Thin SVD with singular triplets sorted in decreasing order and the
/// largest-magnitude entry of every right singular vector made positive.
pub(crate) struct SortedSvd {
    pub singular_values: Vec<f64>,
    /// `p × k`, columns are right singular vectors.
    pub v: Array2<f64>,
}

pub(crate) fn sorted_svd(x: ArrayView2<'_, f64>) -> SortedSvd {
    let (n, p) = x.dim();
    let k = n.min(p);
    let m = to_dmatrix(x);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut v = Array2::<f64>::zeros((p, k));
    let mut singular_values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        singular_values.push(svd.singular_values[src].max(0.0));
        for row in 0..p {
            v[[row, dst]] = v_t[(src, row)];
        }
    }
    fix_signs(&mut v);
    SortedSvd { singular_values, v }
}

/// Flip columns so that each column's largest-magnitude entry is positive
/// (earliest index wins ties).
pub(crate) fn fix_signs(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best.abs() + 1e-14 {
                best = v;
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// PCA of an already centered panel, keeping `rank` components.
pub fn pca(x: ArrayView2<'_, f64>, rank: usize) -> Result<PcaFactorization> {
    let (n, p) = x.dim();
    let max = n.min(p);
    if rank < 1 || rank > max {
        return Err(CpcaError::RankOutOfRange { rank, max });
    }
    let svd = sorted_svd(x);
    Ok(factorization_from_svd(x, &svd, rank))
}

/// Eigenvalues of `XᵀX / n` only.
pub fn pca_spectrum(x: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    let svd = sorted_svd(x);
    svd.singular_values.iter().map(|s| s * s / n).collect()
}

pub(crate) fn factorization_from_svd(
    x: ArrayView2<'_, f64>,
    svd: &SortedSvd,
    rank: usize,
) -> PcaFactorization {
    let n = x.nrows() as f64;
    let loadings = svd.v.slice(ndarray::s![.., ..rank]).to_owned();
    let scores = x.dot(&loadings);
    let eigenvalues = svd.singular_values.iter().map(|s| s * s / n).collect();
    PcaFactorization {
        scores,
        loadings,
        eigenvalues,
        rank,
    }
}

/// Full PCA (every component kept); callers choose the rank afterwards.
pub(crate) fn pca_full(x: ArrayView2<'_, f64>) -> (SortedSvd, Array1<f64>) {
    let n = x.nrows() as f64;
    let svd = sorted_svd(x);
    let eig = svd.singular_values.iter().map(|s| s * s / n).collect();
    (svd, eig)
}

/// Absolute Pearson correlation matrix of the columns of `x`.
///
/// Every column must have positive sample variance.
pub fn correlation_abs(x: &DataMatrix) -> Result<Array2<f64>> {
    abs_correlation(x.view(), Some(x.column_ids()), false)
}

/// When `lenient`, zero-variance columns get correlation 0 with every other
/// column instead of being rejected.
pub(crate) fn abs_correlation(
    x: ArrayView2<'_, f64>,
    ids: Option<&[String]>,
    lenient: bool,
) -> Result<Array2<f64>> {
    let (centered, _) = center_view(x);
    let p = centered.ncols();
    let norms: Vec<f64> = centered
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let degenerate: Vec<bool> = norms
        .iter()
        .map(|&s| s <= 1e-12 * scale.max(1e-300) || s == 0.0)
        .collect();
    if !lenient {
        if let Some(j) = degenerate.iter().position(|&d| d) {
            let name = ids
                .and_then(|ids| ids.get(j).cloned())
                .unwrap_or_else(|| format!("column {}", j + 1));
            return Err(CpcaError::ZeroVariance(name));
        }
    }
    let gram = centered.t().dot(&centered);
    let mut corr = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        corr[[i, i]] = 1.0;
        for j in (i + 1)..p {
            let v = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                (gram[[i, j]] / (norms[i] * norms[j])).abs().min(1.0)
            };
            corr[[i, j]] = v;
            corr[[j, i]] = v;
        }
    }
    Ok(corr)
}

/// A `rows × cols` matrix with orthonormal columns, from the QR factor of a
/// standard-normal matrix (Haar distributed after the sign correction).
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Array2<f64>> {
    if cols > rows {
        return Err(CpcaError::InvalidArgument(format!(
            "cannot build {cols} orthonormal columns in dimension {rows}"
        )));
    }
    if cols == 0 {
        return Ok(Array2::zeros((rows, 0)));
    }
    let gauss = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = gauss.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = Array2::<f64>::zeros((rows, cols));
    for j in 0..cols {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..rows {
            out[[i, j]] = s * q[(i, j)];
        }
    }
    Ok(out)
}

pub(crate) fn to_dmatrix(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (n, p) = x.dim();
    DMatrix::from_fn(n, p, |i, j| x[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues non-increasing.
pub(crate) fn symmetric_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let m = to_dmatrix(a);
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((k, k), |(i, j)| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Stack blocks horizontally; all blocks must share the row count.
pub(crate) fn hstack(blocks: &[Array2<f64>], rows: usize) -> Array2<f64> {
    let width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::<f64>::zeros((rows, width));
    let mut at = 0;
    for b in blocks {
        let w = b.ncols();
        out.slice_mut(ndarray::s![.., at..at + w]).assign(b);
        at += w;
    }
    out
}

pub(crate) fn select_columns(x: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(1), idx)
}
