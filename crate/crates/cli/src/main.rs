mod config;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use robust_oco::lti::{StateSpace, TransferFunction};
use robust_oco::norms::{induced_linf_norm, DEFAULT_TOL};
use robust_oco::oco::reconstruction_estimator;
use robust_oco::robust::{max_beta, BetaBound, InterconnectionP, DEFAULT_BETA_CAP, DEFAULT_BISECTION_TOL};
use robust_oco::sim::{beta_sweep, simulate};

use config::{parse_vector, ConfigFile};
use output::{create_file, fmt_f64};

/// Robust OCO disturbance rejection: closed-loop experiments and stability bounds.
#[derive(Debug, Parser)]
#[command(name = "robust-oco", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop experiment and write trajectory.csv and summary.txt.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write cost.svg and w_hat.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Run the experiment for several projection radii and write sweep.csv.
    SweepBeta {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Comma-separated radii; overrides `[sweep] betas`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        betas: Option<Vec<f64>>,
    },
    /// Largest certified FIR gain bound for the configured plant, K and δ.
    StabilityBound {
        #[arg(long)]
        config: PathBuf,
        /// Write the bisection trace to <out>/bisection.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Relative bisection tolerance.
        #[arg(long, default_value_t = DEFAULT_BISECTION_TOL)]
        tol: f64,
    },
    /// Induced ℓ∞ norm of a stable system.
    Norm {
        /// Config file with a `[system]` section.
        #[arg(long, conflicts_with_all = ["num", "den"])]
        config: Option<PathBuf>,
        /// Numerator coefficients, highest power first, e.g. "0.1".
        #[arg(long, requires = "den", allow_hyphen_values = true)]
        num: Option<String>,
        /// Denominator coefficients, highest power first, e.g. "1 -0.9".
        #[arg(long, requires = "num", allow_hyphen_values = true)]
        den: Option<String>,
        /// Truncation tolerance on the neglected tail.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out, plot } => cmd_simulate(&config, &out, plot),
        Command::SweepBeta { config, out, betas } => cmd_sweep_beta(&config, &out, betas),
        Command::StabilityBound { config, out, tol } => cmd_stability_bound(&config, out.as_deref(), tol),
        Command::Norm { config, num, den, tol } => cmd_norm(config.as_deref(), num.as_deref(), den.as_deref(), tol),
    }
}

fn load(path: &Path) -> Result<ConfigFile> {
    ConfigFile::load(path).with_context(|| format!("invalid config {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn cmd_simulate(config_path: &Path, out: &Path, plot: bool) -> Result<()> {
    let cfg = load(config_path)?;
    let exp = cfg.experiment().with_context(|| format!("invalid config {}", config_path.display()))?;
    let res = simulate(&exp)?;

    ensure_dir(out)?;
    output::write_trajectory(create_file(out, "trajectory.csv")?, &res, exp.n_x(), exp.n_u())?;
    let summary = output::summary_text(&res, exp.steps);
    std::fs::write(out.join("summary.txt"), &summary)?;
    if plot {
        let cost: Vec<(f64, f64)> = res.cost.iter().enumerate().map(|(t, c)| (t as f64, *c)).collect();
        std::fs::write(out.join("cost.svg"), plot::line_chart("Per-step cost", "t", "c_t", &cost))?;
        let w_hat: Vec<(f64, f64)> = res.w_hat.iter().enumerate().map(|(t, w)| (t as f64, w[0])).collect();
        std::fs::write(
            out.join("w_hat.svg"),
            plot::line_chart("Disturbance estimate", "t", "w_hat (channel 0)", &w_hat),
        )?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_sweep_beta(config_path: &Path, out: &Path, betas: Option<Vec<f64>>) -> Result<()> {
    let cfg = load(config_path)?;
    let exp = cfg.experiment().with_context(|| format!("invalid config {}", config_path.display()))?;
    let betas = match betas {
        Some(b) => b,
        None => cfg.sweep_betas()?.context("no radii given: pass --betas or set [sweep] betas")?,
    };
    if betas.is_empty() {
        bail!("the beta list is empty");
    }
    let rows = beta_sweep(&exp, &betas)?;

    ensure_dir(out)?;
    output::write_sweep(create_file(out, "sweep.csv")?, &rows)?;
    for r in &rows {
        let avg = r.avg_cost.map_or_else(|| "diverged".to_owned(), |a| format!("{a:.6}"));
        println!("beta = {:<8} avg_cost = {avg}", r.beta);
    }
    Ok(())
}

fn cmd_stability_bound(config_path: &Path, out: Option<&Path>, tol: f64) -> Result<()> {
    let cfg = load(config_path)?;
    let invalid = || format!("invalid config {}", config_path.display());
    let plant = cfg.plant().with_context(invalid)?;
    let k = cfg.feedback_gain().with_context(invalid)?;
    let delta = cfg.delta_bound().with_context(invalid)?;
    let estimator = reconstruction_estimator(plant.a(), plant.b())?;
    let p = InterconnectionP::build(&plant, &k, &estimator)?;
    let report = max_beta(&p, delta, tol, DEFAULT_BETA_CAP)?;

    println!("delta = {}", fmt_f64(report.delta_bound));
    match report.beta_star {
        BetaBound::Finite(b) => println!("beta_star = {}", fmt_f64(b)),
        BetaBound::Unbounded { cap } => println!("beta_star = unbounded (cap {cap})"),
    }
    println!("d1 = {}", fmt_f64(report.scales.d1));
    println!("d2 = {}", fmt_f64(report.scales.d2));
    println!("scaled_norm = {}", fmt_f64(report.scales.scaled_norm));
    println!("certified = {}", report.certified);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        output::write_bisection(create_file(dir, "bisection.csv")?, &report)?;
    }
    Ok(())
}

fn cmd_norm(config_path: Option<&Path>, num: Option<&str>, den: Option<&str>, tol: f64) -> Result<()> {
    let sys: StateSpace = match (config_path, num, den) {
        (Some(path), _, _) => load(path)?.system().with_context(|| format!("invalid config {}", path.display()))?,
        (None, Some(num), Some(den)) => {
            let num = parse_vector(num).map_err(anyhow::Error::msg).context("--num")?;
            let den = parse_vector(den).map_err(anyhow::Error::msg).context("--den")?;
            TransferFunction::new(num, den)?.to_state_space()
        }
        _ => bail!("pass --config or both --num and --den"),
    };
    let norm = induced_linf_norm(&sys, tol)?;
    println!("value = {}", fmt_f64(norm.value));
    println!("horizon = {}", norm.truncation_horizon);
    println!("tail_bound = {}", fmt_f64(norm.tail_bound));
    Ok(())
}
