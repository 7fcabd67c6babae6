//! Iterative complement-clustering principal component analysis.
//!
//! A panel `X` (observations × variables) is decomposed into a low-rank part
//! shared by every variable and low-rank parts specific to clusters of
//! variables:
//!
//! ```text
//! X = G Φᵀ + Σ_j F⁽ʲ⁾ Γ⁽ʲ⁾ᵀ + E
//! ```
//!
//! The clusters are unknown; [`engine::fit`] alternates between estimating the
//! common part from per-cluster PCA (a two-layer PCA) and reassigning
//! variables by leave-one-out principal-component regression on the
//! complement `X − G Φᵀ`.
//!
//! Downstream, the fitted components feed principal-component regression
//! ([`pcr`]), structured covariance estimation (`covariance`) and
//! minimum-variance portfolios (`portfolio`). `simgen` and
//! `experiment` generate synthetic panels with known structure and run
//! seeded Monte Carlo studies.

pub mod cluster;
pub mod covariance;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod io;
pub mod matrix;
pub mod par;
pub mod pcr;
pub mod portfolio;
pub mod select;
pub mod simgen;

pub use engine::{fit, CpcaModel, FitConfig};
pub use error::{CpcaError, Result};
pub use matrix::{DataMatrix, PcaFactorization};
pub use par::Execution;
