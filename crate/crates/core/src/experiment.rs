//! Seeded Monte Carlo replications of the synthetic designs.
//!
//! Each replication draws a fresh panel from its own ChaCha stream (master
//! seed, stream = replication index), fits every method on the training half
//! and scores it on the test half and against the known truth.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::adjusted_rand_index;
use crate::covariance::{cpca_cov, default_poet_threshold, frob_distance, pca_cov, poet_cov, ratio_rank};
use crate::engine::{fit, fit_initial, msre, recover, recover_pca, CpcaModel, FitConfig};
use crate::error::{CpcaError, Result};
use crate::matrix::{center_view, pca};
use crate::par::{map_indexed, Execution};
use crate::pcr::{cv_lambda, fit_group_lasso, fit_ols_pcr, mspe, predict};
use crate::simgen::{gen_design, gen_pcr_response, population_covariance, Example, RegressionTruth, SimSample};

/// Cross-validation folds for the group-lasso penalty.
pub const CV_FOLDS: usize = 5;

/// A design, optionally with a regression response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub example: Example,
    pub regression: bool,
}

impl Scenario {
    pub fn name(&self) -> String {
        if self.regression {
            format!("pcr{}", self.example.id())
        } else {
            self.example.id().to_string()
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scenario {
    type Err = CpcaError;

    /// `1`–`4` for recovery studies, `pcr1`–`pcr3` for regression studies.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CpcaError::InvalidArgument(format!("unknown example `{s}` (expected 1-4 or pcr1-pcr3)"));
        let (regression, id) = match s.strip_prefix("pcr") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let id: u8 = id.parse().map_err(|_| bad())?;
        let example = Example::from_id(id).map_err(|_| bad())?;
        if regression && example == Example::Four {
            return Err(bad());
        }
        Ok(Scenario { example, regression })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cpca_i")]
    CpcaI,
    #[serde(rename = "cpca_f")]
    CpcaF,
    #[serde(rename = "pca")]
    Pca,
    #[serde(rename = "cpca_i_g")]
    CpcaIG,
    #[serde(rename = "cpca_f_g")]
    CpcaFG,
    #[serde(rename = "poet")]
    Poet,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::CpcaI, Method::CpcaF, Method::Pca, Method::CpcaIG, Method::CpcaFG, Method::Poet];

    pub fn name(self) -> &'static str {
        match self {
            Method::CpcaI => "cpca_i",
            Method::CpcaF => "cpca_f",
            Method::Pca => "pca",
            Method::CpcaIG => "cpca_i_g",
            Method::CpcaFG => "cpca_f_g",
            Method::Poet => "poet",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One method on one replication. Missing entries do not apply to the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub rep: usize,
    pub method: Method,
    pub n_pcs: Option<usize>,
    pub msre: Option<f64>,
    pub mspe: Option<f64>,
    pub cov_ed: Option<f64>,
    pub ari_vs_truth: Option<f64>,
}

impl ExperimentRow {
    fn new(rep: usize, method: Method) -> Self {
        Self {
            rep,
            method,
            n_pcs: None,
            msre: None,
            mspe: None,
            cov_ed: None,
            ari_vs_truth: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub reps: usize,
    pub seed: u64,
    pub tau: f64,
    pub eta: f64,
    pub max_iterations: usize,
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, reps: usize, seed: u64) -> Self {
        let d = FitConfig::default();
        Self {
            scenario,
            reps,
            seed,
            tau: d.tau,
            eta: d.eta,
            max_iterations: d.max_iterations,
            execution: Execution::Parallel,
        }
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            tau: self.tau,
            eta: self.eta,
            max_iterations: self.max_iterations,
            seed: self.seed,
            estimate_common: self.scenario.example != Example::Four,
            execution: Execution::Sequential,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub seed: u64,
    /// Sorted by replication, then method.
    pub rows: Vec<ExperimentRow>,
    /// Replications whose iterative fit stopped at the iteration limit.
    pub non_converged: Vec<usize>,
}

impl ExperimentResult {
    pub fn method_rows(&self, method: Method) -> Vec<&ExperimentRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    /// Values of one column for one method, indexed by replication.
    pub fn column(&self, method: Method, pick: impl Fn(&ExperimentRow) -> Option<f64>) -> Vec<Option<f64>> {
        self.method_rows(method).into_iter().map(pick).collect()
    }

    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        methods
            .into_iter()
            .map(|m| {
                let rows = self.method_rows(m);
                MethodSummary {
                    method: m,
                    n_pcs: Stat::of(rows.iter().map(|r| r.n_pcs.map(|v| v as f64))),
                    msre: Stat::of(rows.iter().map(|r| r.msre)),
                    mspe: Stat::of(rows.iter().map(|r| r.mspe)),
                    cov_ed: Stat::of(rows.iter().map(|r| r.cov_ed)),
                    ari_vs_truth: Stat::of(rows.iter().map(|r| r.ari_vs_truth)),
                }
            })
            .collect()
    }

    /// Per-replication rows followed by `mean` and `sd` footer rows per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rep", "method", "n_pcs", "msre", "mspe", "cov_ed", "ari_vs_truth"])?;
        for r in &self.rows {
            w.write_record([
                r.rep.to_string(),
                r.method.to_string(),
                r.n_pcs.map(|v| v.to_string()).unwrap_or_default(),
                fmt_opt(r.msre),
                fmt_opt(r.mspe),
                fmt_opt(r.cov_ed),
                fmt_opt(r.ari_vs_truth),
            ])?;
        }
        for s in self.summary() {
            for (label, pick) in [("mean", Stat::mean as fn(&Stat) -> Option<f64>), ("sd", Stat::sd)] {
                w.write_record([
                    label.to_string(),
                    s.method.to_string(),
                    fmt_opt(pick(&s.n_pcs)),
                    fmt_opt(pick(&s.msre)),
                    fmt_opt(pick(&s.mspe)),
                    fmt_opt(pick(&s.cov_ed)),
                    fmt_opt(pick(&s.ari_vs_truth)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Mean and standard deviation over the replications where a value exists.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let mut s = Stat::default();
        for v in values.flatten().filter(|v| v.is_finite()) {
            s.count += 1;
            s.sum += v;
            s.sum_sq += v * v;
        }
        s
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Sample standard deviation (divisor `count − 1`).
    pub fn sd(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let m = self.sum / self.count as f64;
        let var = (self.sum_sq - self.count as f64 * m * m) / (self.count - 1) as f64;
        Some(var.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_pcs: Stat,
    pub msre: Stat,
    pub mspe: Stat,
    pub cov_ed: Stat,
    pub ari_vs_truth: Stat,
}

/// The RNG stream of one replication.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Panel (and response, for regression scenarios) of one replication.
pub fn replication_data(scenario: Scenario, seed: u64, rep: usize) -> Result<(SimSample, Option<(Array1<f64>, Array1<f64>)>)> {
    let mut rng = replication_rng(seed, rep);
    let sample = gen_design(&scenario.example.design(), &mut rng)?;
    let response = if scenario.regression {
        let reg = RegressionTruth::for_example(scenario.example);
        let train = gen_pcr_response(&reg, &sample.train_scores, &mut rng)?;
        let test = gen_pcr_response(&reg, &sample.test_scores, &mut rng)?;
        Some((train, test))
    } else {
        None
    };
    Ok((sample, response))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.reps < 1 {
        return Err(CpcaError::InvalidArgument("reps must be at least 1".into()));
    }
    cfg.fit_config().validate()?;
    let outcomes = map_indexed(cfg.execution, cfg.reps, |rep| run_replication(cfg, rep));
    let mut rows = Vec::new();
    let mut non_converged = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        let (mut r, converged) = outcome?;
        if !converged {
            non_converged.push(rep);
        }
        rows.append(&mut r);
    }
    Ok(ExperimentResult {
        scenario: cfg.scenario,
        seed: cfg.seed,
        rows,
        non_converged,
    })
}

struct Response<'a> {
    train_mean: f64,
    train: Array1<f64>,
    test: ArrayView1<'a, f64>,
}

impl Response<'_> {
    fn ols(&self, train: &[Array2<f64>], test: &[Array2<f64>]) -> Option<f64> {
        let fitted = fit_ols_pcr(train, self.train.view())
            .map_err(|e| log::warn!("ols pcr failed: {e}"))
            .ok()?;
        self.score(test, &fitted.coefficients)
    }

    fn group_lasso(&self, train: &[Array2<f64>], test: &[Array2<f64>]) -> Option<(f64, usize)> {
        let attempt = || -> Result<_> {
            let cv = cv_lambda(train, self.train.view(), CV_FOLDS, Execution::Sequential)?;
            fit_group_lasso(train, self.train.view(), cv.lambda)
        };
        let fitted = attempt().map_err(|e| log::warn!("group lasso failed: {e}")).ok()?;
        let active: usize = fitted.active.iter().zip(train).filter(|(&a, _)| a).map(|(_, g)| g.ncols()).sum();
        Some((self.score(test, &fitted.coefficients)?, active))
    }

    fn score(&self, test: &[Array2<f64>], coefficients: &[Array1<f64>]) -> Option<f64> {
        let pred = predict(test, coefficients).ok()? + self.train_mean;
        mspe(pred.view(), self.test).ok()
    }
}

fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<(Vec<ExperimentRow>, bool)> {
    let (sample, response) = replication_data(cfg.scenario, cfg.seed, rep)?;
    let fit_cfg = cfg.fit_config();
    let truth = sample.truth.partition();
    let population = population_covariance(&sample.truth);
    let response = response.as_ref().map(|(train, test)| {
        let train_mean = train.mean().unwrap_or(0.0);
        Response {
            train_mean,
            train: train - train_mean,
            test: test.view(),
        }
    });

    let initial = fit_initial(&sample.train, &fit_cfg)?;
    let last = fit(&sample.train, &fit_cfg)?;
    let mut rows = Vec::new();
    for (method, group_method, model) in [(Method::CpcaI, Method::CpcaIG, &initial), (Method::CpcaF, Method::CpcaFG, &last)] {
        let test = model.center(sample.test.view())?;
        let mut row = ExperimentRow::new(rep, method);
        row.n_pcs = Some(model.total_components());
        row.msre = Some(msre(recover(model, test.view())?.view(), test.view())?);
        row.cov_ed = Some(frob_distance(cpca_cov(model).sigma.view(), population.view())?);
        row.ari_vs_truth = Some(adjusted_rand_index(&model.partition, &truth)?);
        if let Some(resp) = &response {
            let (train_groups, test_groups) = model_groups(model, test.view())?;
            row.mspe = resp.ols(&train_groups, &test_groups);
            let mut g = ExperimentRow::new(rep, group_method);
            if let Some((v, active)) = resp.group_lasso(&train_groups, &test_groups) {
                g.mspe = Some(v);
                g.n_pcs = Some(active);
            }
            rows.push(g);
        }
        rows.push(row);
    }

    let x = sample.train.view();
    let r = ratio_rank(x)?;
    let (train_c, means) = center_view(x);
    let test_c = &sample.test.view() - &means.view().insert_axis(ndarray::Axis(0));
    let pc = pca(train_c.view(), r)?;
    let mut row = ExperimentRow::new(rep, Method::Pca);
    row.n_pcs = Some(r);
    row.msre = Some(msre(recover_pca(pc.loadings.view(), test_c.view())?.view(), test_c.view())?);
    row.cov_ed = Some(frob_distance(pca_cov(x, r)?.sigma.view(), population.view())?);
    if let Some(resp) = &response {
        row.mspe = resp.ols(&[pc.scores.clone()], &[test_c.dot(&pc.loadings)]);
    }
    rows.push(row);

    let mut row = ExperimentRow::new(rep, Method::Poet);
    row.n_pcs = Some(r);
    let poet = poet_cov(x, r, default_poet_threshold(x.nrows(), x.ncols()))?;
    row.cov_ed = Some(frob_distance(poet.sigma.view(), population.view())?);
    rows.push(row);

    rows.sort_by_key(|r| r.method);
    Ok((rows, last.converged))
}

fn model_groups(model: &CpcaModel, test: ndarray::ArrayView2<'_, f64>) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let train = model.training_groups();
    let test = model.project(test)?.groups();
    debug_assert_eq!(train.len(), test.len());
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names() {
        for s in ["1", "2", "3", "4", "pcr1", "pcr2", "pcr3"] {
            assert_eq!(s.parse::<Scenario>().unwrap().name(), s);
        }
        for s in ["0", "5", "pcr4", "x", "pcr"] {
            assert!(s.parse::<Scenario>().is_err());
        }
    }

    #[test]
    fn stat_mean_and_sd() {
        let s = Stat::of([Some(1.0), None, Some(2.0), Some(3.0)].into_iter());
        assert_eq!(s.count, 3);
        assert!((s.mean().unwrap() - 2.0).abs() < 1e-15);
        assert!((s.sd().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of([None].into_iter()).mean(), None);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = replication_rng(7, 0).random();
        let b: u64 = replication_rng(7, 1).random();
        let c: u64 = replication_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn one_recovery_replication() {
        let cfg = ExperimentConfig::new("1".parse().unwrap(), 1, 3);
        let res = run_experiment(&cfg).unwrap();
        let methods: Vec<Method> = res.rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec![Method::CpcaI, Method::CpcaF, Method::Pca, Method::Poet]);
        for r in &res.rows {
            assert!(r.cov_ed.unwrap() > 0.0);
            assert!(r.mspe.is_none());
        }
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(res.rows, again.rows);
    }

    #[test]
    fn one_regression_replication() {
        let cfg = ExperimentConfig::new("pcr1".parse().unwrap(), 2, 5);
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.rows.len(), 12);
        for m in [Method::CpcaI, Method::CpcaF, Method::Pca, Method::CpcaIG, Method::CpcaFG] {
            for v in res.column(m, |r| r.mspe) {
                assert!(v.unwrap() > 0.0);
            }
        }
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 + 2 * 6);
        assert!(text.lines().any(|l| l.starts_with("mean,cpca_f_g,")));
    }

    #[test]
    fn no_common_scenario_has_no_common_rank() {
        let cfg = ExperimentConfig::new("4".parse().unwrap(), 1, 1);
        let (sample, _) = replication_data(cfg.scenario, 1, 0).unwrap();
        let model = fit(&sample.train, &cfg.fit_config()).unwrap();
        assert_eq!(model.r_c(), 0);
    }
}
