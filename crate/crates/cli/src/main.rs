use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cpca::covariance::{estimate, precision, CovMethod};
use cpca::experiment::{run_experiment, ExperimentConfig, Scenario};
use cpca::io::{self, Metadata};
use cpca::matrix::correlation_abs;
use cpca::portfolio::{rolling_backtest, BacktestConfig, StartMode, DEFAULT_WINDOW};
use cpca::simgen::{gen_example, BlockReturns, Example};
use cpca::{fit, CpcaError, Execution, FitConfig};
use serde_json::json;

/// Clustered principal component analysis.
#[derive(Debug, Parser)]
#[command(name = "cpca", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Cpca,
    Pca,
    Poet,
    Sample,
}

impl From<MethodArg> for CovMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cpca => CovMethod::Cpca,
            MethodArg::Pca => CovMethod::Pca,
            MethodArg::Poet => CovMethod::Poet,
            MethodArg::Sample => CovMethod::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Warm,
    Cold,
}

#[derive(Debug, Clone, clap::Args)]
struct FitArgs {
    #[arg(long, default_value_t = 0.95)]
    tau: f64,
    #[arg(long, default_value_t = 0.95)]
    eta: f64,
    #[arg(long = "max-iter", default_value_t = 20)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            tau: self.tau,
            eta: self.eta,
            max_iterations: self.max_iter,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a Monte Carlo experiment and write one row per replication and method.
    Simulate {
        /// 1, 2, 3, 4, pcr1, pcr2 or pcr3.
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for replications (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 0.95)]
        tau: f64,
        #[arg(long, default_value_t = 0.95)]
        eta: f64,
        #[arg(long = "max-iter", default_value_t = 20)]
        max_iter: usize,
    },
    /// Fit a CPCA model to a CSV panel.
    Fit {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Estimate a covariance matrix and export it as CSV.
    Cov {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Cpca)]
        method: MethodArg,
        /// Soft threshold for POET on the correlation scale.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the precision matrix here.
        #[arg(long)]
        precision: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Rolling minimum-variance portfolio backtest.
    Mvp {
        input: PathBuf,
        /// Portfolio return CSV.
        #[arg(long)]
        out: PathBuf,
        /// Metrics JSON (default: next to --out with a .json extension).
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, value_enum, default_value_t = MethodArg::Cpca)]
        method: MethodArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Warm)]
        mode: ModeArg,
        #[arg(long = "refit-every", default_value_t = 1)]
        refit_every: usize,
        #[arg(long = "risk-free", default_value_t = 0.0)]
        risk_free: f64,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Export a simulated panel in the input CSV schema.
    Generate {
        /// 1, 2, 3, 4 or `returns` for a dated block-factor return panel.
        #[arg(long)]
        design: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// For designs 1-4, where to write the test half.
        #[arg(long)]
        test_out: Option<PathBuf>,
        /// Trading days for `returns`.
        #[arg(long, default_value_t = 252)]
        days: usize,
        /// Stocks per block for `returns`.
        #[arg(long, default_value_t = 10)]
        block_size: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
    },
}

enum Outcome {
    Done,
    NotConverged,
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn create(path: &Path) -> cpca::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CpcaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load(path: &Path) -> cpca::Result<io::Panel> {
    let panel = io::read_panel_file(path)?;
    let (n, p) = (panel.data.n_rows(), panel.data.n_cols());
    if n < 4 || p < 4 {
        return Err(CpcaError::InvalidArgument(format!(
            "need at least 4 rows and 4 columns, got {n} x {p}"
        )));
    }
    correlation_abs(&panel.data)?;
    Ok(panel)
}

fn execution(jobs: Option<usize>) -> Execution {
    if jobs == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn simulate(
    example: &str,
    reps: usize,
    seed: u64,
    out: &Path,
    jobs: Option<usize>,
    tau: f64,
    eta: f64,
    max_iter: usize,
) -> cpca::Result<Outcome> {
    let scenario: Scenario = example.parse()?;
    if reps == 0 {
        return Err(CpcaError::InvalidArgument("reps must be at least 1".into()));
    }
    let mut cfg = ExperimentConfig::new(scenario, reps, seed);
    cfg.tau = tau;
    cfg.eta = eta;
    cfg.max_iterations = max_iter;
    cfg.execution = execution(jobs);
    let result = cpca::par::with_threads(jobs, || run_experiment(&cfg))?;

    let mut w = create(out)?;
    writeln!(w, "{}", Metadata::new(command_line(), Some(seed)).header_line())?;
    result.write_csv(&mut w)?;
    w.flush()?;

    println!("{} replications of {}", reps, scenario);
    println!("{:<10} {:>8} {:>10} {:>10} {:>10} {:>8}", "method", "n_pcs", "msre", "mspe", "cov_ed", "ari");
    for s in result.summary() {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} {:>8} {:>10} {:>10} {:>10} {:>8}",
            s.method.name(),
            f(s.n_pcs.mean()),
            f(s.msre.mean()),
            f(s.mspe.mean()),
            f(s.cov_ed.mean()),
            f(s.ari_vs_truth.mean())
        );
    }
    if result.non_converged.is_empty() {
        Ok(Outcome::Done)
    } else {
        log::warn!("{} replication(s) did not converge: {:?}", result.non_converged.len(), result.non_converged);
        Ok(Outcome::NotConverged)
    }
}

fn fit_cmd(input: &Path, out: &Path, args: &FitArgs) -> cpca::Result<Outcome> {
    let panel = load(input)?;
    let model = fit(&panel.data, &args.config())?;
    io::write_json_file(out, &Metadata::new(command_line(), Some(args.seed)), &model.to_document())?;

    let ranks = model.cluster_ranks();
    let final_ari = model.trace.last().map_or(f64::NAN, |t| t.ari);
    println!("clusters   {}", model.partition.n_clusters());
    println!("r_c        {}", model.r_c());
    println!("r_j        {:?}", ranks);
    println!("iterations {}", model.iterations());
    println!("final ARI  {final_ari:.4}");
    println!("converged  {}", model.converged);
    Ok(if model.converged { Outcome::Done } else { Outcome::NotConverged })
}

fn cov_cmd(
    input: &Path,
    out: &Path,
    method: CovMethod,
    threshold: Option<f64>,
    precision_out: Option<&Path>,
    args: &FitArgs,
) -> cpca::Result<Outcome> {
    let panel = load(input)?;
    let fitted = estimate(method, &panel.data, &args.config(), threshold)?;
    let meta = Metadata::new(command_line(), Some(args.seed));
    let ids = panel.data.column_ids();
    io::write_square_file(out, &meta, ids, fitted.estimate.sigma.view())?;
    if let Some(path) = precision_out {
        let prec = precision(&fitted.estimate)?;
        if prec.flagged {
            log::warn!("ill-conditioned estimate, ridge {:.3e} added before inversion", prec.ridge);
        }
        io::write_square_file(path, &meta, ids, prec.matrix.view())?;
    }
    println!("{} covariance, {} variables", method, ids.len());
    let converged = fitted.model.as_ref().is_none_or(|m| m.converged);
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

#[allow(clippy::too_many_arguments)]
fn mvp_cmd(
    input: &Path,
    out: &Path,
    metrics: Option<&Path>,
    window: usize,
    method: CovMethod,
    mode: StartMode,
    refit_every: usize,
    risk_free: f64,
    threshold: Option<f64>,
    jobs: Option<usize>,
    args: &FitArgs,
) -> cpca::Result<Outcome> {
    let panel = io::read_panel_file(input)?;
    panel.check_date_order()?;
    let cfg = BacktestConfig {
        window,
        method,
        refit_every,
        mode,
        fit: args.config(),
        poet_threshold: threshold,
        risk_free,
        execution: execution(jobs),
    };
    let result = cpca::par::with_threads(jobs, || rolling_backtest(&panel.data, &cfg))?;
    let meta = Metadata::new(command_line(), Some(args.seed));

    let mut w = create(out)?;
    io::write_with_metadata(&mut w, &meta, |csv| {
        csv.write_record(["date", "row", "return"])?;
        for (&day, &r) in result.days.iter().zip(&result.returns) {
            let date = panel.dates.as_ref().map_or_else(String::new, |d| d[day].to_string());
            csv.write_record([date, day.to_string(), r.to_string()])?;
        }
        Ok(())
    })?;

    let metrics_path = metrics.map_or_else(|| out.with_extension("json"), Path::to_path_buf);
    let doc = json!({
        "mean": result.metrics.mean,
        "std": result.metrics.std,
        "ir": result.metrics.information_ratio,
        "sr": result.metrics.sharpe_ratio,
        "window": window,
        "method": method.name(),
        "mode": mode,
        "days": result.returns.len(),
        "failures": result.failures,
        "degenerate": result.degenerate(),
    });
    io::write_json_file(&metrics_path, &meta, &doc)?;

    let f = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    println!("{} out-of-sample days, method {}", result.returns.len(), method);
    println!("STD {:.6}  IR {}  SR {}", result.metrics.std, f(result.metrics.information_ratio), f(result.metrics.sharpe_ratio));
    if !result.failures.is_empty() {
        log::warn!("estimator failed on {} day(s); previous weights carried", result.failures.len());
    }
    Ok(Outcome::Done)
}

fn generate_cmd(
    design: &str,
    seed: u64,
    out: &Path,
    test_out: Option<&Path>,
    days: usize,
    block_size: usize,
    blocks: usize,
) -> cpca::Result<Outcome> {
    let meta = Metadata::new(command_line(), Some(seed));
    if design == "returns" {
        let panel = BlockReturns {
            days,
            blocks,
            block_size,
            ..BlockReturns::default()
        };
        let (data, _) = panel.generate(seed)?;
        let start = chrono_start();
        let dates = io::business_days(start, data.n_rows());
        io::write_panel_file(out, &meta, &data, Some(&dates))?;
        return Ok(Outcome::Done);
    }
    let id: u8 = design
        .parse()
        .map_err(|_| CpcaError::InvalidArgument(format!("unknown design `{design}`")))?;
    let sample = gen_example(Example::from_id(id)?, seed)?;
    io::write_panel_file(out, &meta, &sample.train, None)?;
    if let Some(path) = test_out {
        io::write_panel_file(path, &meta, &sample.test, None)?;
    }
    Ok(Outcome::Done)
}

fn chrono_start() -> io::Date {
    io::Date::from_ymd_opt(2020, 1, 2).expect("valid date")
}

fn run(cli: Cli) -> cpca::Result<Outcome> {
    match cli.command {
        Command::Simulate {
            example,
            reps,
            seed,
            out,
            jobs,
            tau,
            eta,
            max_iter,
        } => simulate(&example, reps, seed, &out, jobs, tau, eta, max_iter),
        Command::Fit { input, out, fit } => fit_cmd(&input, &out, &fit),
        Command::Cov {
            input,
            out,
            method,
            threshold,
            precision,
            fit,
        } => cov_cmd(&input, &out, method.into(), threshold, precision.as_deref(), &fit),
        Command::Mvp {
            input,
            out,
            metrics,
            window,
            method,
            mode,
            refit_every,
            risk_free,
            threshold,
            jobs,
            fit,
        } => {
            let mode = match mode {
                ModeArg::Warm => StartMode::Warm,
                ModeArg::Cold => StartMode::Cold,
            };
            mvp_cmd(
                &input,
                &out,
                metrics.as_deref(),
                window,
                method.into(),
                mode,
                refit_every,
                risk_free,
                threshold,
                jobs,
                &fit,
            )
        }
        Command::Generate {
            design,
            seed,
            out,
            test_out,
            days,
            block_size,
            blocks,
        } => generate_cmd(&design, seed, &out, test_out.as_deref(), days, block_size, blocks),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: iteration limit reached before convergence");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
