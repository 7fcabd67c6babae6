//! Synthetic panels with known common and cluster-specific structure.
//!
//! Each observation is
//!
//! ```text
//! x = Φ g + Σ_j Γ⁽ʲ⁾ f⁽ʲ⁾ + ε,   g_k = √δ_k W_k,   f_h⁽ʲ⁾ = √λ_h⁽ʲ⁾ Z_h⁽ʲ⁾
//! ```
//!
//! with `Φ` and every `Ψ⁽ʲ⁾` random orthonormal frames, `Γ⁽ʲ⁾` the
//! zero-embedded `Ψ⁽ʲ⁾`, and `ε` Gaussian with a per-cluster standard
//! deviation. Variables are laid out cluster by cluster.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPartition;
use crate::error::{CpcaError, Result};
use crate::matrix::{random_orthonormal, DataMatrix};

/// Eigenvalue draws below this are raised to it.
pub const EIGENVALUE_FLOOR: f64 = 0.1;

/// The four simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Example {
    /// n = 50, five clusters of 20.
    One,
    /// As `One` with n = 30.
    Two,
    /// n = 50, ten clusters of 20.
    Three,
    /// As `Two` without the common effect.
    Four,
}

impl Example {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            4 => Ok(Self::Four),
            _ => Err(CpcaError::InvalidArgument(format!("unknown example {id}, expected 1 to 4"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
            Self::Four => 4,
        }
    }

    pub fn design(self) -> Design {
        let five = vec![[25.0, 25.0], [25.0, 5.0], [25.0, 5.0], [25.0, 5.0], [5.0, 5.0]];
        let mut ten = vec![[25.0, 25.0]; 2];
        ten.extend(vec![[25.0, 5.0]; 6]);
        ten.extend(vec![[5.0, 5.0]; 2]);
        let (n, thetas, r_c) = match self {
            Self::One => (50, five, 3),
            Self::Two => (30, five, 3),
            Self::Three => (50, ten, 3),
            Self::Four => (30, five, 0),
        };
        Design {
            n,
            r_c,
            cluster_size: 20,
            delta_mean: 125.0,
            delta_variance: 5.0,
            lambda_means: thetas.into_iter().map(|t| t.to_vec()).collect(),
            lambda_variance: 1.0,
            noise_sd: 0.5,
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    /// Rows in each of the training and test halves.
    pub n: usize,
    pub r_c: usize,
    pub cluster_size: usize,
    pub delta_mean: f64,
    pub delta_variance: f64,
    /// Mean of each cluster component's variance; the inner length is `r_j`.
    pub lambda_means: Vec<Vec<f64>>,
    pub lambda_variance: f64,
    pub noise_sd: f64,
}

impl Design {
    pub fn n_clusters(&self) -> usize {
        self.lambda_means.len()
    }

    pub fn n_variables(&self) -> usize {
        self.cluster_size * self.n_clusters()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.cluster_size < 2 || self.lambda_means.is_empty() {
            return Err(CpcaError::InvalidArgument("design needs n ≥ 2, clusters of at least 2".into()));
        }
        let p = self.n_variables();
        if self.r_c > p {
            return Err(CpcaError::RankOutOfRange { rank: self.r_c, max: p });
        }
        if let Some(m) = self.lambda_means.iter().find(|m| m.len() > self.cluster_size) {
            return Err(CpcaError::RankOutOfRange { rank: m.len(), max: self.cluster_size });
        }
        if !(self.noise_sd >= 0.0 && self.delta_variance >= 0.0 && self.lambda_variance >= 0.0) {
            return Err(CpcaError::InvalidArgument("variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth of a generated panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    /// `p × r_c`.
    pub phi: Array2<f64>,
    /// Per-cluster `p_j × r_j` frames.
    pub psi: Vec<Array2<f64>>,
    /// Common score variances, descending.
    pub delta: Array1<f64>,
    /// Per-cluster score variances, descending.
    pub lambda: Vec<Array1<f64>>,
    /// One-based cluster label of every variable.
    pub labels: Vec<usize>,
    pub noise_sd: Vec<f64>,
    /// Population covariance of one observation.
    pub sigma: Array2<f64>,
}

impl SimTruth {
    pub fn r_c(&self) -> usize {
        self.phi.ncols()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.psi.iter().map(|p| p.ncols()).collect()
    }

    pub fn total_rank(&self) -> usize {
        self.r_c() + self.ranks().iter().sum::<usize>()
    }

    pub fn n_variables(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.psi.len()
    }

    pub fn partition(&self) -> ClusterPartition {
        ClusterPartition::from_labels(&self.labels).expect("generated labels are valid")
    }

    /// Variable indices of cluster `j` (zero-based).
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == j + 1)
            .map(|(i, _)| i)
            .collect()
    }

    /// Zero-embedded `p × r_j` loadings of cluster `j`.
    pub fn gamma(&self, j: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_variables(), self.psi[j].ncols()));
        for (row, m) in self.members(j).into_iter().enumerate() {
            out.row_mut(m).assign(&self.psi[j].row(row));
        }
        out
    }
}

/// Latent scores behind generated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentScores {
    /// `m × r_c`.
    pub common: Array2<f64>,
    /// Per-cluster `m × r_j`.
    pub clusters: Vec<Array2<f64>>,
}

impl LatentScores {
    fn rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            common: self.common.slice(s![range.clone(), ..]).to_owned(),
            clusters: self.clusters.iter().map(|c| c.slice(s![range.clone(), ..]).to_owned()).collect(),
        }
    }
}

/// A generated panel split into training and test halves.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub train: DataMatrix,
    pub test: DataMatrix,
    pub truth: SimTruth,
    pub train_scores: LatentScores,
    pub test_scores: LatentScores,
}

/// Generate one sample of a design with the given seed.
pub fn gen_example(example: Example, seed: u64) -> Result<SimSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_design(&example.design(), &mut rng)
}

/// Generate `2n` rows from a design; the first `n` form the training half.
pub fn gen_design<R: Rng + ?Sized>(design: &Design, rng: &mut R) -> Result<SimSample> {
    let truth = gen_truth(design, rng)?;
    let (rows, scores) = draw_rows(&truth, 2 * design.n, rng)?;
    let n = design.n;
    let ids = column_ids(truth.n_variables());
    Ok(SimSample {
        train: DataMatrix::new(rows.slice(s![..n, ..]).to_owned(), ids.clone())?,
        test: DataMatrix::new(rows.slice(s![n.., ..]).to_owned(), ids)?,
        train_scores: scores.rows(0..n),
        test_scores: scores.rows(n..2 * n),
        truth,
    })
}

/// `v001`, `v002`, ...
pub fn column_ids(p: usize) -> Vec<String> {
    let width = p.to_string().len().max(3);
    (1..=p).map(|i| format!("v{i:0width$}")).collect()
}

fn sorted_draws<R: Rng + ?Sized>(means: &[f64], variance: f64, rng: &mut R) -> Result<Array1<f64>> {
    let mut v: Vec<f64> = means
        .iter()
        .map(|&m| {
            let d = Normal::new(m, variance.sqrt()).map_err(|e| CpcaError::InvalidArgument(e.to_string()))?;
            Ok(d.sample(rng).max(EIGENVALUE_FLOOR))
        })
        .collect::<Result<_>>()?;
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(Array1::from(v))
}

/// Draw loadings, eigenvalues and the population covariance.
pub fn gen_truth<R: Rng + ?Sized>(design: &Design, rng: &mut R) -> Result<SimTruth> {
    design.validate()?;
    let p = design.n_variables();
    let phi = if design.r_c > 0 {
        random_orthonormal(p, design.r_c, rng)?
    } else {
        Array2::zeros((p, 0))
    };
    let psi = design
        .lambda_means
        .iter()
        .map(|m| random_orthonormal(design.cluster_size, m.len(), rng))
        .collect::<Result<Vec<_>>>()?;
    let delta = sorted_draws(&vec![design.delta_mean; design.r_c], design.delta_variance, rng)?;
    let lambda = design
        .lambda_means
        .iter()
        .map(|m| sorted_draws(m, design.lambda_variance, rng))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..p).map(|i| i / design.cluster_size + 1).collect();
    let mut truth = SimTruth {
        phi,
        psi,
        delta,
        lambda,
        labels,
        noise_sd: vec![design.noise_sd; design.n_clusters()],
        sigma: Array2::zeros((p, p)),
    };
    truth.sigma = population_covariance(&truth);
    Ok(truth)
}

/// `Φ diag(δ) Φᵀ + Σ_j Γ⁽ʲ⁾ diag(λ⁽ʲ⁾) Γ⁽ʲ⁾ᵀ + diag(σ²)`.
pub fn population_covariance(truth: &SimTruth) -> Array2<f64> {
    let p = truth.n_variables();
    let scaled = &truth.phi * &truth.delta.view().insert_axis(Axis(0));
    let mut sigma = scaled.dot(&truth.phi.t());
    for j in 0..truth.n_clusters() {
        let members = truth.members(j);
        let psi = &truth.psi[j];
        let block = (psi * &truth.lambda[j].view().insert_axis(Axis(0))).dot(&psi.t());
        for (a, &ma) in members.iter().enumerate() {
            for (b, &mb) in members.iter().enumerate() {
                sigma[[ma, mb]] += block[[a, b]];
            }
            sigma[[ma, ma]] += truth.noise_sd[j] * truth.noise_sd[j];
        }
    }
    debug_assert_eq!(sigma.nrows(), p);
    sigma
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Draw `m` observations and their latent scores.
pub fn draw_rows<R: Rng + ?Sized>(truth: &SimTruth, m: usize, rng: &mut R) -> Result<(Array2<f64>, LatentScores)> {
    let common = gaussian(m, truth.r_c(), rng) * &truth.delta.mapv(f64::sqrt).view().insert_axis(Axis(0));
    let clusters: Vec<Array2<f64>> = truth
        .lambda
        .iter()
        .map(|l| gaussian(m, l.len(), rng) * &l.mapv(f64::sqrt).view().insert_axis(Axis(0)))
        .collect();
    let mut x = common.dot(&truth.phi.t());
    for (j, f) in clusters.iter().enumerate() {
        let members = truth.members(j);
        let block = f.dot(&truth.psi[j].t()) + gaussian(m, members.len(), rng) * truth.noise_sd[j];
        for (col, &v) in members.iter().enumerate() {
            let mut target = x.column_mut(v);
            target += &block.column(col);
        }
    }
    Ok((x, LatentScores { common, clusters }))
}

/// Regression coefficients on the latent scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTruth {
    /// On the common scores (empty without a common effect).
    pub alpha: Array1<f64>,
    /// On the stacked cluster scores.
    pub beta: Array1<f64>,
    /// Noise standard deviation.
    pub theta: f64,
}

impl RegressionTruth {
    /// `α = 1`, `β = 0` except 25 on the last cluster's two components, `θ = 1`.
    pub fn for_example(example: Example) -> Self {
        let design = example.design();
        let width: usize = design.lambda_means.iter().map(Vec::len).sum();
        let mut beta = Array1::zeros(width);
        let last = design.lambda_means.last().map_or(0, Vec::len);
        beta.slice_mut(s![width - last..]).fill(25.0);
        Self {
            alpha: Array1::ones(design.r_c),
            beta,
            theta: 1.0,
        }
    }

    /// Coefficient blocks in regression-group order.
    pub fn blocks(&self, ranks: &[usize]) -> Vec<Array1<f64>> {
        let mut out = Vec::new();
        if !self.alpha.is_empty() {
            out.push(self.alpha.clone());
        }
        let mut at = 0;
        for &r in ranks {
            out.push(self.beta.slice(s![at..at + r]).to_owned());
            at += r;
        }
        out
    }
}

/// `y = g α + Σ_j f⁽ʲ⁾ β_j + θ e` on latent scores.
pub fn gen_pcr_response<R: Rng + ?Sized>(reg: &RegressionTruth, scores: &LatentScores, rng: &mut R) -> Result<Array1<f64>> {
    if scores.common.ncols() != reg.alpha.len() {
        return Err(CpcaError::Shape(format!(
            "{} common scores, {} common coefficients",
            scores.common.ncols(),
            reg.alpha.len()
        )));
    }
    let width: usize = scores.clusters.iter().map(|c| c.ncols()).sum();
    if width != reg.beta.len() {
        return Err(CpcaError::Shape(format!("{width} cluster scores, {} cluster coefficients", reg.beta.len())));
    }
    let m = scores.common.nrows();
    let mut y = scores.common.dot(&reg.alpha);
    let mut at = 0;
    for f in &scores.clusters {
        y += &f.dot(&reg.beta.slice(s![at..at + f.ncols()]));
        at += f.ncols();
    }
    if reg.theta > 0.0 {
        for v in y.iter_mut() {
            *v += reg.theta * rng.sample::<f64, _>(StandardNormal);
        }
    }
    debug_assert_eq!(y.len(), m);
    Ok(y)
}

/// Daily return panel with one market factor and one factor per block of
/// stocks, plus idiosyncratic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReturns {
    pub days: usize,
    pub blocks: usize,
    pub block_size: usize,
    pub drift: f64,
    pub market_sd: f64,
    pub block_sd: f64,
    pub idio_sd: f64,
}

impl Default for BlockReturns {
    fn default() -> Self {
        Self {
            days: 252,
            blocks: 4,
            block_size: 10,
            drift: 3e-4,
            market_sd: 0.01,
            block_sd: 0.008,
            idio_sd: 0.01,
        }
    }
}

impl BlockReturns {
    /// Returns `days × (blocks · block_size)` and the block labels.
    pub fn generate(&self, seed: u64) -> Result<(DataMatrix, Vec<usize>)> {
        let p = self.blocks * self.block_size;
        if self.days < 2 || p == 0 {
            return Err(CpcaError::InvalidArgument("need at least 2 days and one stock".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta_dist = Normal::new(1.0, 0.3).expect("valid");
        let betas: Vec<f64> = (0..p).map(|_| beta_dist.sample(&mut rng)).collect();
        let loads: Vec<f64> = (0..p).map(|_| beta_dist.sample(&mut rng).abs()).collect();
        let idio: Vec<f64> = (0..p).map(|_| self.idio_sd * (0.5 + rng.random::<f64>())).collect();
        let market = gaussian(self.days, 1, &mut rng) * self.market_sd;
        let factors = gaussian(self.days, self.blocks, &mut rng) * self.block_sd;
        let eps = gaussian(self.days, p, &mut rng);
        let labels: Vec<usize> = (0..p).map(|i| i / self.block_size + 1).collect();
        let x = Array2::from_shape_fn((self.days, p), |(t, i)| {
            self.drift
                + betas[i] * market[[t, 0]]
                + loads[i] * factors[[t, labels[i] - 1]]
                + idio[i] * eps[[t, i]]
        });
        Ok((DataMatrix::new(x, column_ids(p))?, labels))
    }
}
