//! Variable clustering: average-linkage agglomeration with a max-gap cut for
//! initialization, leave-one-out principal-component regression for
//! refinement, and the adjusted Rand index for convergence checks.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CpcaError, Result};
use crate::matrix::{pca, select_columns};

/// Assignment of `p` variables to clusters labelled `1..=J`.
///
/// Labels are kept in canonical order: cluster ids are numbered by the first
/// variable that belongs to them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    labels: Vec<usize>,
    n_clusters: usize,
    singleton_flags: Vec<bool>,
}

impl ClusterPartition {
    /// Canonicalize arbitrary labels. No variable is flagged as singleton.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        Self::with_singletons(labels, vec![false; labels.len()])
    }

    pub fn with_singletons(labels: &[usize], singleton_flags: Vec<bool>) -> Result<Self> {
        if labels.is_empty() {
            return Err(CpcaError::InvalidArgument("empty partition".into()));
        }
        if singleton_flags.len() != labels.len() {
            return Err(CpcaError::Shape("singleton flags length mismatch".into()));
        }
        let mut map = HashMap::new();
        let mut canon = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len() + 1;
            canon.push(*map.entry(l).or_insert(next));
        }
        Ok(Self {
            n_clusters: map.len(),
            labels: canon,
            singleton_flags,
        })
    }

    /// Every variable in one cluster.
    pub fn single(p: usize) -> Result<Self> {
        Self::from_labels(&vec![1; p])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_variables(&self) -> usize {
        self.labels.len()
    }

    pub fn singleton_flags(&self) -> &[bool] {
        &self.singleton_flags
    }

    /// Variable indices of cluster `id` (1-based), ascending.
    pub fn members(&self, id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(k, &l)| (l == id).then_some(k))
            .collect()
    }

    /// Member lists of all clusters, in label order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (k, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(k);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters().iter().map(Vec::len).collect()
    }

    /// Same labels, with every size-one cluster flagged as a singleton.
    pub fn flag_size_one(mut self) -> Self {
        let sizes = self.sizes();
        for (k, &l) in self.labels.iter().enumerate() {
            if sizes[l - 1] == 1 {
                self.singleton_flags[k] = true;
            }
        }
        self
    }

    /// Whether cluster `id` is a flagged singleton.
    pub fn is_singleton_cluster(&self, id: usize) -> bool {
        let m = self.members(id);
        m.len() == 1 && self.singleton_flags[m[0]]
    }
}

/// One agglomeration event. Leaves are nodes `0..p`; merge `k` creates node `p + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Partition obtained by replaying the first `steps` merges.
    pub fn partition_after(&self, steps: usize) -> Result<ClusterPartition> {
        let p = self.n_leaves;
        let mut parent: Vec<usize> = (0..p + self.merges.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (k, m) in self.merges.iter().take(steps).enumerate() {
            let node = p + k;
            let a = find(&mut parent, m.left);
            let b = find(&mut parent, m.right);
            parent[a] = node;
            parent[b] = node;
        }
        let labels: Vec<usize> = (0..p).map(|i| find(&mut parent, i)).collect();
        ClusterPartition::from_labels(&labels)
    }
}

/// Average-linkage agglomerative clustering of a dissimilarity matrix.
///
/// The closest pair is merged at each step (lowest index pair on ties).
pub fn hierarchical_cluster(d: ArrayView2<'_, f64>) -> Result<Dendrogram> {
    let p = d.nrows();
    if d.ncols() != p || p == 0 {
        return Err(CpcaError::Shape(format!("dissimilarity must be square, got {:?}", d.dim())));
    }
    let scale = d.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..p {
        if d[[i, i]].abs() > 1e-12 * scale {
            return Err(CpcaError::InvalidArgument(format!("non-zero diagonal at {i}")));
        }
        for j in 0..p {
            let v = d[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(CpcaError::InvalidArgument(format!(
                    "dissimilarity ({i}, {j}) = {v} is negative or non-finite"
                )));
            }
            if (v - d[[j, i]]).abs() > 1e-10 * scale {
                return Err(CpcaError::InvalidArgument(format!("asymmetric at ({i}, {j})")));
            }
        }
    }

    let mut dist = d.to_owned();
    let mut active: Vec<usize> = (0..p).collect();
    let mut node: Vec<usize> = (0..p).collect();
    let mut size = vec![1usize; p];
    let mut merges = Vec::with_capacity(p.saturating_sub(1));
    let mut last = 0.0f64;

    while active.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                if dist[[i, j]] < best.2 {
                    best = (i, j, dist[[i, j]]);
                }
            }
        }
        let (i, j, h) = best;
        let h = h.max(last);
        last = h;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for &k in &active {
            if k != i && k != j {
                let v = (ni * dist[[i, k]] + nj * dist[[j, k]]) / (ni + nj);
                dist[[i, k]] = v;
                dist[[k, i]] = v;
            }
        }
        let merged = size[i] + size[j];
        let (a, b) = (node[i].min(node[j]), node[i].max(node[j]));
        merges.push(Merge {
            left: a,
            right: b,
            height: h,
            size: merged,
        });
        size[i] = merged;
        node[i] = p + merges.len() - 1;
        active.retain(|&k| k != j);
    }
    Ok(Dendrogram { n_leaves: p, merges })
}

/// Cut where the height increment between consecutive merges is largest.
///
/// Stopping after merge `m` leaves `p − m` clusters; only `m ≤ p − 2` is
/// considered, so at least two clusters remain. Ties go to fewer clusters.
pub fn cut_by_max_gap(dend: &Dendrogram) -> Result<ClusterPartition> {
    let p = dend.n_leaves;
    if p < 2 {
        return ClusterPartition::single(p);
    }
    let h = dend.heights();
    let mut steps = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for m in 1..=p.saturating_sub(2) {
        let gap = h[m] - h[m - 1];
        if gap >= best_gap {
            best_gap = gap;
            steps = m;
        }
    }
    dend.partition_after(steps)
}

/// Per-variable outcome of a leave-one-out sweep.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LooDiagnostics {
    /// `(variable, cluster label at the time)` pairs skipped for lack of donors.
    pub skipped: Vec<(usize, usize)>,
    /// Smallest normalized SSR found for each variable (1 when no candidate).
    pub min_ssr: Vec<f64>,
    pub singletons_spawned: usize,
}

#[derive(Debug, Clone)]
pub struct LooOutcome {
    pub partition: ClusterPartition,
    pub diagnostics: LooDiagnostics,
}

/// Fraction of `y`'s energy left unexplained by least squares on `scores`.
///
/// Columns of `scores` are assumed mutually orthogonal (PCA scores); the
/// result is clamped to `[0, 1]`. A zero response counts as perfectly fit.
pub fn normalized_ssr(scores: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let tss = y.dot(&y);
    if tss <= 0.0 {
        return 0.0;
    }
    let mut explained = 0.0;
    for f in scores.columns() {
        let ff = f.dot(&f);
        if ff > 0.0 {
            let fy = f.dot(&y);
            explained += fy * fy / ff;
        }
    }
    (1.0 - explained / tss).clamp(0.0, 1.0)
}

/// Leading PCA scores of the given columns, rank clipped to what the block supports.
fn donor_scores(xc: ArrayView2<'_, f64>, members: &[usize], rank: usize) -> Result<Array2<f64>> {
    let block = select_columns(xc, members);
    let r = rank.clamp(1, members.len().min(xc.nrows()));
    Ok(pca(block.view(), r)?.scores)
}

/// One leave-one-out PCR sweep over all variables of the complement panel.
///
/// For each variable `k` in ascending order: drop it, recompute each cluster's
/// leading scores without it, regress column `k` on each cluster's scores and
/// move `k` to the cluster with the smallest normalized SSR. If that minimum
/// exceeds `tau`, `k` becomes a singleton. Labels change immediately, so later
/// variables see earlier moves. Clusters left with fewer than two members
/// after dropping `k` cannot serve as candidates.
///
/// `ranks[j - 1]` is the number of components used for cluster `j` of
/// `current`; clusters created during the sweep use one component.
pub fn loo_pcr_assign(
    xc: ArrayView2<'_, f64>,
    current: &ClusterPartition,
    ranks: &[usize],
    tau: f64,
) -> Result<LooOutcome> {
    let p = xc.ncols();
    if current.n_variables() != p {
        return Err(CpcaError::Shape(format!(
            "partition covers {} variables, panel has {p}",
            current.n_variables()
        )));
    }
    if ranks.len() != current.n_clusters() {
        return Err(CpcaError::Shape(format!(
            "{} ranks for {} clusters",
            ranks.len(),
            current.n_clusters()
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(CpcaError::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
    }

    let mut labels = current.labels().to_vec();
    let mut flags = current.singleton_flags().to_vec();
    let mut rank_of: HashMap<usize, usize> = ranks.iter().enumerate().map(|(j, &r)| (j + 1, r.max(1))).collect();
    let mut next_id = current.n_clusters() + 1;
    let mut cache: HashMap<usize, Array2<f64>> = HashMap::new();
    let mut diag = LooDiagnostics {
        min_ssr: vec![1.0; p],
        ..Default::default()
    };

    for k in 0..p {
        let y = xc.column(k);
        let own = labels[k];
        let mut ids: Vec<usize> = labels.clone();
        ids.sort_unstable();
        ids.dedup();

        let mut best: Option<(usize, f64)> = None;
        for &c in &ids {
            let members: Vec<usize> = (0..p).filter(|&m| m != k && labels[m] == c).collect();
            if members.len() < 2 {
                if !members.is_empty() {
                    diag.skipped.push((k, c));
                }
                continue;
            }
            let rank = rank_of.get(&c).copied().unwrap_or(1);
            let ssr = if c == own {
                normalized_ssr(donor_scores(xc, &members, rank)?.view(), y)
            } else {
                if !cache.contains_key(&c) {
                    cache.insert(c, donor_scores(xc, &members, rank)?);
                }
                normalized_ssr(cache[&c].view(), y)
            };
            let better = match best {
                None => true,
                Some((bc, bs)) => ssr < bs || (ssr == bs && c == own && bc != own),
            };
            if better {
                best = Some((c, ssr));
            }
        }

        let target = match best {
            Some((c, s)) if s <= tau => {
                diag.min_ssr[k] = s;
                flags[k] = false;
                c
            }
            other => {
                diag.min_ssr[k] = other.map_or(1.0, |(_, s)| s);
                flags[k] = true;
                let alone = labels.iter().filter(|&&l| l == own).count() == 1;
                if alone {
                    own
                } else {
                    diag.singletons_spawned += 1;
                    let id = next_id;
                    next_id += 1;
                    rank_of.insert(id, 1);
                    id
                }
            }
        };
        if target != own {
            labels[k] = target;
            cache.remove(&own);
            cache.remove(&target);
        }
    }

    Ok(LooOutcome {
        partition: ClusterPartition::with_singletons(&labels, flags)?.flag_size_one(),
        diagnostics: diag,
    })
}

/// Hubert–Arabie adjusted Rand index of two partitions of the same variables.
pub fn adjusted_rand_index(a: &ClusterPartition, b: &ClusterPartition) -> Result<f64> {
    ari_labels(a.labels(), b.labels())
}

/// [`adjusted_rand_index`] on raw label slices.
pub fn ari_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CpcaError::Shape(format!(
            "partitions cover {} and {} variables",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-300 {
        // both partitions trivial (all singletons or one block)
        return Ok(if a_eq_b(a, b) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

fn a_eq_b(a: &[usize], b: &[usize]) -> bool {
    let ca = ClusterPartition::from_labels(a).map(|p| p.labels().to_vec());
    let cb = ClusterPartition::from_labels(b).map(|p| p.labels().to_vec());
    matches!((ca, cb), (Ok(x), Ok(y)) if x == y)
}

/// `1 − |corr|` dissimilarity from an absolute-correlation matrix.
pub fn dissimilarity_from_abs_corr(corr: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = corr.mapv(|c| (1.0 - c).max(0.0));
    for i in 0..d.nrows() {
        d[[i, i]] = 0.0;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn four_var() -> Array2<f64> {
        // pairs {0,1} and {2,3} perfectly correlated, uncorrelated across
        array![
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0]
        ]
    }

    #[test]
    fn four_variable_tree_and_cut() {
        let d = hierarchical_cluster(four_var().view()).unwrap();
        let h = d.heights();
        assert_abs_diff_eq!(h[0], 0.0);
        assert_abs_diff_eq!(h[1], 0.0);
        assert_abs_diff_eq!(h[2], 1.0);
        let part = cut_by_max_gap(&d).unwrap();
        assert_eq!(part.n_clusters(), 2);
        assert_eq!(part.labels(), &[1, 1, 2, 2]);
    }

    #[test]
    fn two_leaves() {
        let d = hierarchical_cluster(array![[0.0, 0.3], [0.3, 0.0]].view()).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_abs_diff_eq!(d.merges[0].height, 0.3);
        assert_eq!(cut_by_max_gap(&d).unwrap().n_clusters(), 2);
    }

    #[test]
    fn all_tied_heights_cut_at_two() {
        let mut d = Array2::from_elem((5, 5), 0.7);
        for i in 0..5 {
            d[[i, i]] = 0.0;
        }
        let dend = hierarchical_cluster(d.view()).unwrap();
        assert!(dend.heights().iter().all(|&h| (h - 0.7).abs() < 1e-12));
        assert_eq!(cut_by_max_gap(&dend).unwrap().n_clusters(), 2);
    }

    #[test]
    fn average_linkage_hand_example() {
        // d(0,1)=1, d(0,2)=4, d(1,2)=6 → merge {0,1} at 1, then {01,2} at (4+6)/2
        let d = array![[0.0, 1.0, 4.0], [1.0, 0.0, 6.0], [4.0, 6.0, 0.0]];
        let dend = hierarchical_cluster(d.view()).unwrap();
        assert_eq!(dend.heights(), vec![1.0, 5.0]);
        assert_eq!(dend.merges[1].left, 2);
        assert_eq!(dend.merges[1].right, 3);
    }

    #[test]
    fn rejects_bad_dissimilarity() {
        assert!(hierarchical_cluster(array![[0.0, 1.0], [2.0, 0.0]].view()).is_err());
        assert!(hierarchical_cluster(array![[0.0, -1.0], [-1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn ari_axioms_and_hand_value() {
        let a = ClusterPartition::from_labels(&[1, 1, 2, 2]).unwrap();
        let b = ClusterPartition::from_labels(&[2, 2, 1, 1]).unwrap();
        assert_abs_diff_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_abs_diff_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
        // contingency {1,1,1,2,2,2} x {1,1,2,2,3,3}: cells 2,1,1,2 → Σ C(n_ij,2) = 2
        // rows 3,3 → 6; cols 2,2,2 → 3; C(6,2) = 15; expected 6*3/15 = 1.2
        // ARI = (2 − 1.2) / (4.5 − 1.2) = 0.8 / 3.3
        let ari = ari_labels(&[1, 1, 1, 2, 2, 2], &[1, 1, 2, 2, 3, 3]).unwrap();
        assert_abs_diff_eq!(ari, 0.8 / 3.3, epsilon = 1e-12);
        assert!(ari_labels(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn canonical_labels() {
        let p = ClusterPartition::from_labels(&[7, 7, 3, 9, 3]).unwrap();
        assert_eq!(p.labels(), &[1, 1, 2, 3, 2]);
        assert_eq!(p.n_clusters(), 3);
        assert_eq!(p.members(2), vec![2, 4]);
    }

    fn block_panel(n: usize, blocks: &[usize], noise: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: usize = blocks.iter().sum();
        let mut x = Array2::<f64>::zeros((n, p));
        let mut col = 0;
        for &b in blocks {
            let f: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..b {
                let w: f64 = 0.5 + rng.random::<f64>();
                for i in 0..n {
                    x[[i, col]] = w * f[i] + noise * rng.sample::<f64, _>(StandardNormal);
                }
                col += 1;
            }
        }
        crate::matrix::center_view(x.view()).0
    }

    #[test]
    fn three_separated_blocks_cut_to_three() {
        let mut hits = 0;
        for seed in 0..40 {
            let x = block_panel(60, &[6, 6, 6], 0.3, seed);
            let corr = crate::matrix::abs_correlation(x.view(), None, false).unwrap();
            let d = hierarchical_cluster(dissimilarity_from_abs_corr(corr.view()).view()).unwrap();
            if cut_by_max_gap(&d).unwrap().n_clusters() == 3 {
                hits += 1;
            }
        }
        assert!(hits >= 38, "J=3 in {hits}/40");
    }

    #[test]
    fn loo_assigns_duplicate_and_spawns_noise_singleton() {
        let mut x = block_panel(80, &[8, 8], 0.2, 4);
        let n = x.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // variable 16 copies cluster A's leading score plus tiny noise
        let a_scores = pca(select_columns(x.view(), &(0..8).collect::<Vec<_>>()).view(), 1).unwrap().scores;
        let dup: Array1<f64> = (0..n).map(|i| a_scores[[i, 0]] + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let noise: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut wide = Array2::<f64>::zeros((n, 18));
        wide.slice_mut(ndarray::s![.., ..16]).assign(&x);
        wide.column_mut(16).assign(&dup);
        wide.column_mut(17).assign(&noise);
        x = crate::matrix::center_view(wide.view()).0;
        // start with both extra variables in cluster B
        let mut labels = vec![1; 8];
        labels.extend(vec![2; 10]);
        let part = ClusterPartition::from_labels(&labels).unwrap();
        let out = loo_pcr_assign(x.view(), &part, &[1, 1], 0.95).unwrap();
        let l = out.partition.labels();
        assert_eq!(l[16], l[0]);
        assert!(out.diagnostics.min_ssr[16] < 0.05);
        assert!(out.partition.singleton_flags()[17]);
        assert_eq!(out.partition.members(l[17]), vec![17]);
        assert_eq!(out.partition.n_clusters(), 3);
    }

    #[test]
    fn loo_argument_checks() {
        let x = block_panel(20, &[3, 3], 0.2, 1);
        let part = ClusterPartition::from_labels(&[1, 1, 1, 2, 2, 2]).unwrap();
        assert!(loo_pcr_assign(x.view(), &part, &[1], 0.95).is_err());
        assert!(loo_pcr_assign(x.view(), &part, &[1, 1], 0.0).is_err());
        let short = ClusterPartition::from_labels(&[1, 1, 2]).unwrap();
        assert!(loo_pcr_assign(x.view(), &short, &[1, 1], 0.95).is_err());
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_bounded(
            a in proptest::collection::vec(1usize..5, 2..30),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(1..5)).collect();
            let ab = ari_labels(&a, &b).unwrap();
            let ba = ari_labels(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ari_labels(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn max_gap_cut_is_order_invariant(seed in 0u64..200) {
            let x = block_panel(40, &[4, 5, 3], 0.4, seed);
            let p = x.ncols();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let mut perm: Vec<usize> = (0..p).collect();
            for i in (1..p).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let cut = |m: &Array2<f64>| {
                let c = crate::matrix::abs_correlation(m.view(), None, false).unwrap();
                cut_by_max_gap(&hierarchical_cluster(dissimilarity_from_abs_corr(c.view()).view()).unwrap()).unwrap()
            };
            let base = cut(&x);
            let permuted = cut(&select_columns(x.view(), &perm));
            let mapped: Vec<usize> = (0..p).map(|k| {
                let pos = perm.iter().position(|&q| q == k).unwrap();
                permuted.labels()[pos]
            }).collect();
            prop_assert!((ari_labels(base.labels(), &mapped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn loo_output_is_valid_partition(seed in 0u64..50) {
            let x = block_panel(30, &[4, 4, 4], 0.5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..12).map(|_| rng.random_range(1..4)).collect();
            let part = ClusterPartition::from_labels(&labels).unwrap();
            let ranks = vec![1; part.n_clusters()];
            let out = loo_pcr_assign(x.view(), &part, &ranks, 0.95).unwrap();
            let sizes = out.partition.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), 12);
            prop_assert!(sizes.iter().all(|&s| s > 0));
            prop_assert!(out.diagnostics.min_ssr.iter().all(|&s| (0.0..=1.0).contains(&s)));
        }
    }
}
