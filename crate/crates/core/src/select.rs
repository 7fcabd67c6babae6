//! Number-of-components selection from consecutive eigenvalue ratios.
//!
//! `ratio_select` returns the index of the largest ratio `λ_i / λ_{i+1}` for
//! `1 ≤ i ≤ R` (the largest relative spectral gap). `iterative_ratio_select`
//! repeats the rule on the remaining spectrum to pick up several variance
//! tiers inside one block.

use crate::error::{CpcaError, Result};

/// Ratios are considered flat when the largest one stays below this value.
pub const NO_SPIKE_RATIO: f64 = 1.1;

/// A further tier must lead with an eigenvalue above this multiple of the
/// median of the trailing half of the spectrum.
pub const NOISE_FLOOR_FACTOR: f64 = 14.0;

/// Eigenvalues at or below this fraction of the largest one count as zero.
pub const NUMERICAL_ZERO: f64 = 1e-12;

/// Default cap `R = ⌊min(n, p) / 2⌋`, at least 1.
pub fn default_cap(n: usize, p: usize) -> usize {
    (n.min(p) / 2).max(1)
}

/// The ratio sequence `λ_i / λ_{i+1}` for `i = 1..=cap`.
///
/// A zero denominator gives `+∞`; `0 / 0` gives 1. Eigenvalues at or below
/// [`NUMERICAL_ZERO`] times the largest are treated as zero.
pub fn eigen_ratios(eigenvalues: &[f64], cap: usize) -> Result<Vec<f64>> {
    validate(eigenvalues, cap)?;
    let zero = eigenvalues[0].max(0.0) * NUMERICAL_ZERO;
    let clean = |v: f64| if v <= zero { 0.0 } else { v };
    Ok((0..cap)
        .map(|i| ratio(clean(eigenvalues[i]), clean(eigenvalues[i + 1])))
        .collect())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        if num <= 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn validate(eigenvalues: &[f64], cap: usize) -> Result<()> {
    if cap < 1 {
        return Err(CpcaError::InvalidArgument("ratio cap must be at least 1".into()));
    }
    if eigenvalues.len() < cap + 1 {
        return Err(CpcaError::InvalidArgument(format!(
            "need at least {} eigenvalues for cap {cap}, got {}",
            cap + 1,
            eigenvalues.len()
        )));
    }
    if let Some(v) = eigenvalues.iter().find(|v| !v.is_finite() || **v < -1e-12) {
        return Err(CpcaError::InvalidArgument(format!(
            "eigenvalues must be finite and non-negative, found {v}"
        )));
    }
    Ok(())
}

/// Number of leading components by the largest eigenvalue ratio; ties go to
/// the smallest index. The result is always in `1..=cap`.
pub fn ratio_select(eigenvalues: &[f64], cap: usize) -> Result<usize> {
    let ratios = eigen_ratios(eigenvalues, cap)?;
    Ok(argmax_first(&ratios) + 1)
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Outcome of [`iterative_ratio_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct TierSelection {
    /// Total number of components over all accepted tiers.
    pub count: usize,
    /// Size of each accepted tier, leading tier first.
    pub tiers: Vec<usize>,
    /// Set when the leading ratios are all close to 1 (no spike in the spectrum).
    pub no_spike: bool,
    /// Raw ratio sequence of the first pass, kept for audit.
    pub ratios: Vec<f64>,
}

/// Tier-stripping extension of [`ratio_select`].
///
/// The first tier is always accepted. After stripping the selected block the
/// rule is re-applied to what remains; a further tier is accepted while its
/// leading eigenvalue exceeds [`NOISE_FLOOR_FACTOR`] times the median of the
/// trailing half of the full spectrum. The total never exceeds `cap`.
pub fn iterative_ratio_select(eigenvalues: &[f64], cap: usize, max_tiers: usize) -> Result<TierSelection> {
    let ratios = eigen_ratios(eigenvalues, cap)?;
    let first = argmax_first(&ratios) + 1;
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let no_spike = max_ratio < NO_SPIKE_RATIO;
    let floor = (NOISE_FLOOR_FACTOR * trailing_median(eigenvalues)).max(eigenvalues[0] * NUMERICAL_ZERO);

    let mut tiers = vec![first];
    let mut count = first;
    while tiers.len() < max_tiers.max(1) && !no_spike {
        let rest = &eigenvalues[count..];
        let room = cap.saturating_sub(count).min(rest.len().saturating_sub(1));
        if room < 1 || rest[0] <= floor {
            break;
        }
        let k = ratio_select(rest, room)?;
        tiers.push(k);
        count += k;
    }
    Ok(TierSelection {
        count,
        tiers,
        no_spike,
        ratios,
    })
}

fn trailing_median(eigenvalues: &[f64]) -> f64 {
    let len = eigenvalues.len();
    let mut tail: Vec<f64> = eigenvalues[len / 2..].to_vec();
    if tail.is_empty() {
        return 0.0;
    }
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = tail.len();
    if m % 2 == 1 {
        tail[m / 2]
    } else {
        0.5 * (tail[m / 2 - 1] + tail[m / 2])
    }
}
