//! The iterative complement-clustering fit.
//!
//! * Initial step: whole-panel PCA with the ratio rule, complement
//!   `X − G₀Φ₀ᵀ`, average-linkage clustering of `1 − |corr|` on the complement
//!   cut at the largest height gap.
//! * Iterative step: two-layer PCA on the current clusters gives `G, Φ` and the
//!   complement; a leave-one-out PCR sweep on the complement updates the
//!   clusters. Stops once the adjusted Rand index between successive
//!   partitions reaches `eta`, or after `max_iterations`.
//! * Final step: two-layer PCA on the converged clusters, then per-cluster PCA
//!   of the final complement.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{
    adjusted_rand_index, cut_by_max_gap, dissimilarity_from_abs_corr, hierarchical_cluster, loo_pcr_assign,
    normalized_ssr, ClusterPartition,
};
use crate::error::{CpcaError, Result};
use crate::matrix::{
    abs_correlation, center_columns, factorization_from_svd, hstack, pca, pca_full, select_columns,
    symmetric_eigen, to_dmatrix, DataMatrix,
};
use crate::par::{map_indexed, Execution};
use crate::select::{default_cap, iterative_ratio_select, ratio_select};

/// Tuning of [`fit`]. Defaults: `tau = 0.95`, `eta = 0.95`, 20 iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Normalized-SSR level above which a variable becomes its own cluster.
    pub tau: f64,
    /// ARI between successive partitions at which the iteration stops.
    pub eta: f64,
    pub max_iterations: usize,
    /// Ratio cap for the number of common components (default `⌊min(n, ·)/2⌋`).
    pub common_cap: Option<usize>,
    /// Ratio cap for per-cluster components (default `⌊min(n, p_j)/2⌋`).
    pub cluster_cap: Option<usize>,
    /// Tier limit of the iterative per-cluster selector.
    pub max_tiers: usize,
    /// Recorded with the model; the fit itself draws no random numbers.
    pub seed: u64,
    /// When false no common component is estimated and clustering runs on `X` itself.
    pub estimate_common: bool,
    /// Skip the hierarchical initialization and start from this partition.
    #[serde(skip)]
    pub initial_partition: Option<ClusterPartition>,
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            eta: 0.95,
            max_iterations: 20,
            common_cap: None,
            cluster_cap: None,
            max_tiers: 3,
            seed: 0,
            estimate_common: true,
            initial_partition: None,
            execution: Execution::Sequential,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CpcaError::InvalidArgument(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CpcaError::InvalidArgument(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.max_iterations < 1 {
            return Err(CpcaError::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.common_cap == Some(0) || self.cluster_cap == Some(0) {
            return Err(CpcaError::InvalidArgument("ratio caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which part of the algorithm produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Initial step only (no iteration).
    Initial,
    /// Full iterative fit.
    Final,
    /// Final step on a caller-supplied partition.
    Given,
}

/// Components of one cluster.
#[derive(Debug, Clone)]
pub struct ClusterComponents {
    /// Variable indices, ascending.
    pub members: Vec<usize>,
    /// `p_j × r_j` loadings over the members, orthonormal columns.
    pub gamma: Array2<f64>,
    /// `n × r_j` training scores.
    pub scores: Array2<f64>,
    /// Per-component score variances (divisor `n`).
    pub variances: Array1<f64>,
    pub rank: usize,
    /// Mean squared residual of the cluster after its components are removed.
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_clusters: usize,
    /// ARI between the partition entering and leaving this iteration.
    pub ari: f64,
    pub r_c: usize,
    /// Per-cluster ranks used by the leave-one-out sweep.
    pub ranks: Vec<usize>,
    pub singletons: usize,
}

#[derive(Debug, Clone)]
pub struct CpcaModel {
    pub column_ids: Vec<String>,
    pub means: Array1<f64>,
    /// `n × r_c` common scores.
    pub g: Array2<f64>,
    /// `p × r_c` common loadings.
    pub phi: Array2<f64>,
    pub common_variances: Array1<f64>,
    pub partition: ClusterPartition,
    pub clusters: Vec<ClusterComponents>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub stage: Stage,
}

/// Common and per-cluster scores of new data under a fitted model.
#[derive(Debug, Clone)]
pub struct ProjectedScores {
    pub common: Array2<f64>,
    pub clusters: Vec<Array2<f64>>,
}

impl ProjectedScores {
    /// Same grouping as [`CpcaModel::training_groups`].
    pub fn groups(&self) -> Vec<Array2<f64>> {
        let mut out = Vec::with_capacity(self.clusters.len() + 1);
        if self.common.ncols() > 0 {
            out.push(self.common.clone());
        }
        out.extend(self.clusters.iter().filter(|c| c.ncols() > 0).cloned());
        out
    }
}

impl CpcaModel {
    pub fn r_c(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_variables(&self) -> usize {
        self.phi.nrows()
    }

    pub fn cluster_ranks(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.rank).collect()
    }

    /// `r_c + Σ r_j`.
    pub fn total_components(&self) -> usize {
        self.r_c() + self.clusters.iter().map(|c| c.rank).sum::<usize>()
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Center new raw data with the training means.
    pub fn center(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        Ok(&x - &self.means.view().insert_axis(Axis(0)))
    }

    fn check_width(&self, p: usize) -> Result<()> {
        if p != self.n_variables() {
            return Err(CpcaError::Shape(format!(
                "model has {} variables, data has {p}",
                self.n_variables()
            )));
        }
        Ok(())
    }

    /// `X − X Φ Φᵀ` for centered data.
    pub fn complement(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let common = x.dot(&self.phi);
        Ok(&x - &common.dot(&self.phi.t()))
    }

    /// Scores of centered data: `X Φ` for the common block, and each cluster's
    /// complement columns times its loadings.
    pub fn project(&self, x: ArrayView2<'_, f64>) -> Result<ProjectedScores> {
        let xc = self.complement(x)?;
        let clusters = self
            .clusters
            .iter()
            .map(|c| select_columns(xc.view(), &c.members).dot(&c.gamma))
            .collect();
        Ok(ProjectedScores {
            common: x.dot(&self.phi),
            clusters,
        })
    }

    /// Training scores as regression groups: common block first (when present),
    /// then one block per cluster with at least one component.
    pub fn training_groups(&self) -> Vec<Array2<f64>> {
        let mut out = Vec::with_capacity(self.clusters.len() + 1);
        if self.r_c() > 0 {
            out.push(self.g.clone());
        }
        out.extend(self.clusters.iter().filter(|c| c.rank > 0).map(|c| c.scores.clone()));
        out
    }

    /// Stacked `p × Σ r_j` cluster loadings, zero outside each cluster's rows.
    pub fn gamma_embedded(&self) -> Array2<f64> {
        let width: usize = self.clusters.iter().map(|c| c.rank).sum();
        let mut out = Array2::<f64>::zeros((self.n_variables(), width));
        let mut at = 0;
        for c in &self.clusters {
            for (row, &m) in c.members.iter().enumerate() {
                for h in 0..c.rank {
                    out[[m, at + h]] = c.gamma[[row, h]];
                }
            }
            at += c.rank;
        }
        out
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            column_ids: self.column_ids.clone(),
            means: self.means.to_vec(),
            r_c: self.r_c(),
            phi: rows_of(self.phi.view()),
            common_variances: self.common_variances.to_vec(),
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterDocument {
                    members: c.members.clone(),
                    gamma: rows_of(c.gamma.view()),
                    r: c.rank,
                    sigma2: c.sigma2,
                    variances: c.variances.to_vec(),
                })
                .collect(),
            trace: self.trace.clone(),
            converged: self.converged,
            iterations: self.iterations(),
            stage: self.stage,
        }
    }
}

/// Serialized form of a fitted model. Matrices are stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub column_ids: Vec<String>,
    pub means: Vec<f64>,
    pub r_c: usize,
    pub phi: Vec<Vec<f64>>,
    pub common_variances: Vec<f64>,
    pub clusters: Vec<ClusterDocument>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDocument {
    pub members: Vec<usize>,
    pub gamma: Vec<Vec<f64>>,
    pub r: usize,
    pub sigma2: f64,
    pub variances: Vec<f64>,
}

fn rows_of(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Result of the initial step.
#[derive(Debug, Clone)]
pub struct InitialStep {
    pub g: Array2<f64>,
    pub phi: Array2<f64>,
    pub complement: Array2<f64>,
    pub partition: ClusterPartition,
    /// Whole-panel eigenvalues (empty when the common effect is not estimated).
    pub eigenvalues: Array1<f64>,
}

fn capped(cap: Option<usize>, default: usize, n_eigen: usize) -> usize {
    cap.unwrap_or(default).min(n_eigen.saturating_sub(1))
}

/// Whole-panel PCA plus hierarchical clustering of the complement.
///
/// `x` must be centered.
pub fn initial_step(x: ArrayView2<'_, f64>, cfg: &FitConfig) -> Result<InitialStep> {
    let (n, p) = x.dim();
    let (g, phi, complement, eigenvalues) = if cfg.estimate_common {
        let (svd, eig) = pca_full(x);
        let cap = capped(cfg.common_cap, default_cap(n, p), eig.len());
        let r = if cap < 1 {
            1
        } else {
            ratio_select(eig.as_slice().expect("contiguous"), cap)?
        };
        let f = factorization_from_svd(x, &svd, r);
        let xc = &x - &f.scores.dot(&f.loadings.t());
        (f.scores, f.loadings, xc, eig)
    } else {
        (
            Array2::zeros((n, 0)),
            Array2::zeros((p, 0)),
            x.to_owned(),
            Array1::zeros(0),
        )
    };
    let partition = if p < 2 {
        ClusterPartition::single(p)?
    } else {
        let corr = abs_correlation(complement.view(), None, true)?;
        let dend = hierarchical_cluster(dissimilarity_from_abs_corr(corr.view()).view())?;
        cut_by_max_gap(&dend)?.flag_size_one()
    };
    Ok(InitialStep {
        g,
        phi,
        complement,
        partition,
        eigenvalues,
    })
}

/// Result of a two-layer PCA.
#[derive(Debug, Clone)]
pub struct TwoLayer {
    pub g: Array2<f64>,
    pub phi: Array2<f64>,
    pub complement: Array2<f64>,
    /// Number of first-layer components kept in each cluster.
    pub first_layer_ranks: Vec<usize>,
    /// Eigenvalues of the stacked first-layer scores.
    pub eigenvalues: Array1<f64>,
    /// Stacked first-layer scores `Ψ`.
    pub psi: Array2<f64>,
    /// Second-layer loadings `H`.
    pub h: Array2<f64>,
}

struct Block {
    scores: Array2<f64>,
    loadings: Array2<f64>,
}

fn block_components(
    x: ArrayView2<'_, f64>,
    members: &[usize],
    singleton: bool,
    cfg: &FitConfig,
    cluster: usize,
) -> Result<Block> {
    let n = x.nrows();
    if members.len() < 2 && !singleton {
        return Err(CpcaError::ClusterTooSmall {
            cluster,
            size: members.len(),
            min: 2,
        });
    }
    let block = select_columns(x, members);
    if members.len() == 1 {
        return Ok(Block {
            scores: block,
            loadings: Array2::ones((1, 1)),
        });
    }
    let (svd, eig) = pca_full(block.view());
    let cap = capped(cfg.cluster_cap, default_cap(n, members.len()), eig.len());
    let r = if cap < 1 {
        1
    } else {
        iterative_ratio_select(eig.as_slice().expect("contiguous"), cap, cfg.max_tiers)?.count
    };
    let f = factorization_from_svd(block.view(), &svd, r);
    Ok(Block {
        scores: f.scores,
        loadings: f.loadings,
    })
}

/// Eigenvalues of the Gram matrix of the stacked first-layer scores after
/// scaling every score column to unit length, descending. A direction shared
/// by `k` clusters has eigenvalue near `k`, a cluster-specific one near 1.
pub fn shared_spectrum(blocks: &[Array2<f64>]) -> Array1<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let mut u = hstack(blocks, n);
    for mut col in u.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    symmetric_eigen(u.t().dot(&u).view()).0.mapv(|v| v.max(0.0))
}

/// Directions below this shared-spectrum level repeat earlier ones.
const SHARED_NULL_LEVEL: f64 = 0.5;

/// Number of common components: the ratio rule on the shared spectrum,
/// restricted to directions that are not repeats.
fn shared_rank(blocks: &[Block], n: usize, cap: Option<usize>) -> Result<usize> {
    let scores: Vec<Array2<f64>> = blocks.iter().map(|b| b.scores.clone()).collect();
    let eig = shared_spectrum(&scores);
    let distinct = eig.iter().filter(|&&v| v >= SHARED_NULL_LEVEL).count();
    let cap = cap.unwrap_or_else(|| default_cap(n, eig.len())).min(distinct.saturating_sub(1));
    if cap < 1 {
        return Ok(1);
    }
    ratio_select(&eig.as_slice().expect("contiguous")[..=cap], cap)
}

/// Common components from per-cluster PCA followed by PCA of the stacked
/// per-cluster scores.
///
/// With first-layer loadings `Π` (block diagonal) and second-layer loadings
/// `H`, the common loadings are `Φ = Π H`, the common scores `G = Ψ H = X Φ`,
/// and the complement is `X − G Φᵀ`. `x` must be centered; every cluster needs
/// two members unless it is a flagged singleton.
pub fn two_layer_pca(x: ArrayView2<'_, f64>, partition: &ClusterPartition, cfg: &FitConfig) -> Result<TwoLayer> {
    let (n, p) = x.dim();
    if partition.n_variables() != p {
        return Err(CpcaError::Shape(format!(
            "partition covers {} variables, panel has {p}",
            partition.n_variables()
        )));
    }
    let clusters = partition.clusters();
    let blocks: Vec<Result<Block>> = map_indexed(cfg.execution, clusters.len(), |j| {
        block_components(x, &clusters[j], partition.is_singleton_cluster(j + 1), cfg, j + 1)
    });
    let blocks: Vec<Block> = blocks.into_iter().collect::<Result<_>>()?;
    let first_layer_ranks: Vec<usize> = blocks.iter().map(|b| b.scores.ncols()).collect();
    let psi = hstack(&blocks.iter().map(|b| b.scores.clone()).collect::<Vec<_>>(), n);

    let (svd, eig) = pca_full(psi.view());
    let r_c = shared_rank(&blocks, n, cfg.common_cap)?;
    let second = factorization_from_svd(psi.view(), &svd, r_c);

    let mut phi = Array2::<f64>::zeros((p, r_c));
    let mut at = 0;
    for (members, b) in clusters.iter().zip(&blocks) {
        let w = b.loadings.ncols();
        let h = second.loadings.slice(s![at..at + w, ..]);
        let rows = b.loadings.dot(&h);
        for (row, &m) in members.iter().enumerate() {
            phi.row_mut(m).assign(&rows.row(row));
        }
        at += w;
    }
    let g = second.scores;
    let complement = &x - &g.dot(&phi.t());
    Ok(TwoLayer {
        g,
        phi,
        complement,
        first_layer_ranks,
        eigenvalues: eig,
        h: second.loadings,
        psi,
    })
}

/// Per-cluster ranks on the complement panel by the iterative ratio rule.
pub fn cluster_ranks(xc: ArrayView2<'_, f64>, partition: &ClusterPartition, cfg: &FitConfig) -> Result<Vec<usize>> {
    let n = xc.nrows();
    let clusters = partition.clusters();
    let ranks: Vec<Result<usize>> = map_indexed(cfg.execution, clusters.len(), |j| {
        let members = &clusters[j];
        if members.len() < 2 {
            return Ok(1);
        }
        // the leave-one-out sweep fits on p_j − 1 members
        let block = select_columns(xc, members);
        let eig = crate::matrix::pca_spectrum(block.view());
        let cap = capped(cfg.cluster_cap, default_cap(n, members.len() - 1), eig.len());
        if cap < 1 {
            return Ok(1);
        }
        Ok(iterative_ratio_select(eig.as_slice().expect("contiguous"), cap, cfg.max_tiers)?.count)
    });
    ranks.into_iter().collect()
}

fn cluster_components(
    xc: ArrayView2<'_, f64>,
    partition: &ClusterPartition,
    cfg: &FitConfig,
) -> Result<Vec<ClusterComponents>> {
    let n = xc.nrows() as f64;
    let clusters = partition.clusters();
    let out: Vec<Result<ClusterComponents>> = map_indexed(cfg.execution, clusters.len(), |j| {
        let members = clusters[j].clone();
        let block = select_columns(xc, &members);
        if partition.is_singleton_cluster(j + 1) {
            // a variable no cluster predicts carries no cluster component
            return Ok(ClusterComponents {
                sigma2: block.iter().map(|v| v * v).sum::<f64>() / n,
                gamma: Array2::zeros((1, 0)),
                scores: Array2::zeros((block.nrows(), 0)),
                variances: Array1::zeros(0),
                rank: 0,
                members,
            });
        }
        let b = block_components(xc, &members, false, cfg, j + 1)?;
        let resid = &block - &b.scores.dot(&b.loadings.t());
        let sigma2 = resid.iter().map(|v| v * v).sum::<f64>() / (n * members.len() as f64);
        Ok(ClusterComponents {
            rank: b.scores.ncols(),
            variances: column_variances(b.scores.view()),
            members,
            gamma: b.loadings,
            scores: b.scores,
            sigma2,
        })
    });
    out.into_iter().collect()
}

fn column_variances(m: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = m.nrows() as f64;
    m.columns().into_iter().map(|c| c.dot(&c) / n).collect()
}

struct Final {
    g: Array2<f64>,
    phi: Array2<f64>,
    clusters: Vec<ClusterComponents>,
}

fn final_step(x: ArrayView2<'_, f64>, partition: &ClusterPartition, cfg: &FitConfig) -> Result<Final> {
    let (n, p) = x.dim();
    let (g, phi, xc) = if cfg.estimate_common {
        let layer = two_layer_pca(x, partition, cfg)?;
        (layer.g, layer.phi, layer.complement)
    } else {
        (Array2::zeros((n, 0)), Array2::zeros((p, 0)), x.to_owned())
    };
    let clusters = cluster_components(xc.view(), partition, cfg)?;
    Ok(Final { g, phi, clusters })
}

fn assemble(
    data: &DataMatrix,
    means: Array1<f64>,
    fin: Final,
    partition: ClusterPartition,
    trace: Vec<IterationRecord>,
    converged: bool,
    stage: Stage,
) -> CpcaModel {
    CpcaModel {
        column_ids: data.column_ids().to_vec(),
        means,
        common_variances: column_variances(fin.g.view()),
        g: fin.g,
        phi: fin.phi,
        partition,
        clusters: fin.clusters,
        trace,
        converged,
        stage,
    }
}

/// Full iterative fit. The data are centered internally and the means kept
/// on the model. Hitting `max_iterations` is not an error: the last model is
/// returned with `converged == false`.
pub fn fit(data: &DataMatrix, cfg: &FitConfig) -> Result<CpcaModel> {
    cfg.validate()?;
    let (centered, means) = center_columns(data);
    let x = centered.view();
    let mut partition = match &cfg.initial_partition {
        Some(p) if p.n_variables() == x.ncols() => p.clone(),
        Some(p) => {
            return Err(CpcaError::Shape(format!(
                "initial partition covers {} variables, panel has {}",
                p.n_variables(),
                x.ncols()
            )))
        }
        None => initial_step(x, cfg)?.partition,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=cfg.max_iterations {
        let (xc, r_c) = if cfg.estimate_common {
            let layer = two_layer_pca(x, &partition, cfg)?;
            let r_c = layer.phi.ncols();
            (layer.complement, r_c)
        } else {
            (x.to_owned(), 0)
        };
        let ranks = cluster_ranks(xc.view(), &partition, cfg)?;
        let outcome = loo_pcr_assign(xc.view(), &partition, &ranks, cfg.tau)?;
        let ari = adjusted_rand_index(&partition, &outcome.partition)?;
        trace.push(IterationRecord {
            iteration,
            n_clusters: outcome.partition.n_clusters(),
            ari,
            r_c,
            ranks,
            singletons: outcome.partition.singleton_flags().iter().filter(|&&f| f).count(),
        });
        partition = outcome.partition;
        if ari >= cfg.eta {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("no convergence after {} iterations", cfg.max_iterations);
    }
    let fin = final_step(x, &partition, cfg)?;
    Ok(assemble(data, means, fin, partition, trace, converged, Stage::Final))
}

/// Initial step followed directly by per-cluster PCA of the initial
/// complement, with no iteration.
pub fn fit_initial(data: &DataMatrix, cfg: &FitConfig) -> Result<CpcaModel> {
    cfg.validate()?;
    let (centered, means) = center_columns(data);
    let init = initial_step(centered.view(), cfg)?;
    let clusters = cluster_components(init.complement.view(), &init.partition, cfg)?;
    let fin = Final {
        g: init.g,
        phi: init.phi,
        clusters,
    };
    Ok(assemble(data, means, fin, init.partition, Vec::new(), true, Stage::Initial))
}

/// Final step only, on a caller-supplied partition.
pub fn fit_with_partition(data: &DataMatrix, partition: &ClusterPartition, cfg: &FitConfig) -> Result<CpcaModel> {
    cfg.validate()?;
    let (centered, means) = center_columns(data);
    let partition = partition.clone().flag_size_one();
    let fin = final_step(centered.view(), &partition, cfg)?;
    Ok(assemble(data, means, fin, partition, Vec::new(), true, Stage::Given))
}

/// Reconstruction of centered data `X`:
/// `X Φ Φᵀ + (X − X Φ Φᵀ) Γ Γᵀ`, with `Γ` the zero-embedded cluster loadings.
pub fn recover(model: &CpcaModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let xc = model.complement(x)?;
    let mut out = &x - &xc;
    for c in &model.clusters {
        let block = select_columns(xc.view(), &c.members);
        let part = block.dot(&c.gamma).dot(&c.gamma.t());
        for (col, &m) in c.members.iter().enumerate() {
            let mut dst = out.column_mut(m);
            dst += &part.column(col);
        }
    }
    Ok(out)
}

/// Plain PCA reconstruction `X L Lᵀ`.
pub fn recover_pca(loadings: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if loadings.nrows() != x.ncols() {
        return Err(CpcaError::Shape(format!(
            "loadings have {} rows, data has {} columns",
            loadings.nrows(),
            x.ncols()
        )));
    }
    Ok(x.dot(&loadings).dot(&loadings.t()))
}

/// Mean squared recovering error `‖X̂ − X‖²_F / (n p)`.
pub fn msre(recovered: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<f64> {
    if recovered.dim() != x.dim() {
        return Err(CpcaError::Shape(format!("{:?} vs {:?}", recovered.dim(), x.dim())));
    }
    let (n, p) = x.dim();
    let sq: f64 = recovered.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / (n * p) as f64)
}

/// How well cluster scores separate variables of different clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Share of variables whose own cluster gives the strictly smallest normalized SSR.
    pub fraction: f64,
    pub n_variables: usize,
    /// Per-variable outcome.
    pub own_minimal: Vec<bool>,
    /// Cluster label pairs whose score spaces nearly coincide (leading
    /// canonical correlation above [`UNIDENTIFIABLE_CANONICAL_CORR`]).
    pub unidentifiable: Vec<(usize, usize)>,
}

pub const UNIDENTIFIABLE_CANONICAL_CORR: f64 = 0.99;

/// For every variable, regress its complement column on each cluster's scores
/// and check whether its own cluster fits strictly best. The own cluster's
/// scores are refitted without the variable, as in the leave-one-out sweep.
pub fn separation_check(model: &CpcaModel, xc: ArrayView2<'_, f64>) -> Result<SeparationReport> {
    let p = xc.ncols();
    if p != model.n_variables() {
        return Err(CpcaError::Shape(format!("model has {} variables, data has {p}", model.n_variables())));
    }
    let labels = model.partition.labels();
    let mut own_minimal = vec![true; p];
    if model.clusters.len() > 1 {
        for k in 0..p {
            let y = xc.column(k);
            let own = labels[k] - 1;
            let mut ssr: Vec<f64> = model.clusters.iter().map(|c| normalized_ssr(c.scores.view(), y)).collect();
            ssr[own] = leave_out_ssr(xc, &model.clusters[own], k);
            own_minimal[k] = ssr.iter().enumerate().all(|(d, &v)| d == own || ssr[own] < v);
        }
    }
    let mut unidentifiable = Vec::new();
    for a in 0..model.clusters.len() {
        for b in (a + 1)..model.clusters.len() {
            if leading_canonical_corr(model.clusters[a].scores.view(), model.clusters[b].scores.view())
                > UNIDENTIFIABLE_CANONICAL_CORR
            {
                unidentifiable.push((a + 1, b + 1));
            }
        }
    }
    let hits = own_minimal.iter().filter(|&&b| b).count();
    Ok(SeparationReport {
        fraction: hits as f64 / p as f64,
        n_variables: p,
        own_minimal,
        unidentifiable,
    })
}

/// Normalized SSR of variable `k` on its own cluster's scores refitted without it.
fn leave_out_ssr(xc: ArrayView2<'_, f64>, cluster: &ClusterComponents, k: usize) -> f64 {
    let rest: Vec<usize> = cluster.members.iter().copied().filter(|&m| m != k).collect();
    let rank = cluster.rank.min(rest.len()).min(xc.nrows());
    if rank == 0 {
        return 1.0;
    }
    let block = select_columns(xc, &rest);
    match pca(block.view(), rank) {
        Ok(f) => normalized_ssr(f.scores.view(), xc.column(k)),
        Err(_) => 1.0,
    }
}

fn leading_canonical_corr(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    let qa = to_dmatrix(a).qr().q();
    let qb = to_dmatrix(b).qr().q();
    let m = qa.transpose() * qb;
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}
