use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};

use ctpe_core::experiment::{fit_rate, render_svg, run_check, run_experiment, Curve, ExperimentConfig, RateFit, Setup, Suite};
use ctpe_core::learn::train;
use ctpe_core::model::BenchmarkModel;
use ctpe_core::oracle::{estimate_limits, trace_diagnostics, SpectralBound};
use ctpe_core::rng::{purpose, RngStream};
use ctpe_core::Error;

#[derive(Parser)]
#[command(name = "ctpe", version, about = "Continuous-time policy evaluation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single seed and print its error log.
    Train {
        config: PathBuf,
        /// Seed index within the master stream.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run every seed, aggregate the error curve, fit and plot it.
    Sweep { config: PathBuf },
    /// Monte-Carlo estimate of the TD(0) fixed point and its diagnostics.
    Limits { config: PathBuf },
    /// Run an oracle check suite: moments, limits, variances or rg.
    Check { suite: Suite, config: PathBuf },
    /// Fit a log-log rate to a curve CSV.
    Rates {
        csv: PathBuf,
        #[arg(long, num_args = 2, value_names = ["K_LO", "K_HI"])]
        window: Option<Vec<u64>>,
        /// Write the fit here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a curve CSV and a fit file as a standalone SVG.
    Plot {
        csv: PathBuf,
        fit: Option<PathBuf>,
        #[arg(short, long, default_value = "curve.svg")]
        output: PathBuf,
    },
    /// Print the default configuration.
    Defaults,
}

/// A check suite that ran to completion but reported failures.
#[derive(Debug, thiserror::Error)]
#[error("check suite `{0}` failed")]
struct CheckFailed(String);

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(config: &Path, index: usize) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let setup = Setup::new(&cfg)?;
    let out = train(
        setup.model.spec(),
        &setup.phi,
        &cfg.learner,
        &setup.options,
        &setup.metric,
        &RngStream::new(cfg.seed).child(index as u64),
    )?;
    println!("k,metric");
    for (k, m) in &out.state.error_log {
        println!("{k},{m}");
    }
    println!("# theta = {}", out.state.reported(&cfg.learner));
    println!("# reference = {}", setup.metric.reference());
    Ok(())
}

fn cmd_sweep(config: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let result = run_experiment(&cfg)?;
    if !result.diverged.is_empty() {
        warn!("{} of {} seeds diverged", result.diverged.len(), cfg.seeds);
    }
    let csv = result.curve.to_csv_string();
    write_or_print(cfg.output.csv.as_deref(), &csv)?;
    let points: Vec<(u64, f64)> = result.curve.points().collect();
    match fit_rate(&points, cfg.fit_window) {
        Ok(fit) => {
            eprintln!("{fit}");
            if let Some(p) = &cfg.output.fit {
                fs::write(p, fit.to_text()).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = &cfg.output.plot {
                let title = format!("{} {} (slope {:.3})", cfg.learner.algorithm, cfg.learner.variant, fit.slope);
                fs::write(p, render_svg(&result.curve, Some(&fit), &title)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Err(e) => warn!("no rate fit: {e}"),
    }
    Ok(())
}

fn cmd_limits(config: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let model = BenchmarkModel::new(cfg.rho, cfg.sigma2)?;
    let phi = cfg.features.build()?;
    let stream = RngStream::new(cfg.seed).child(purpose::ORACLE).child(0);
    info!("estimating limits from {} samples", cfg.oracle_n);
    let lim = estimate_limits(model.spec(), cfg.sampler, &phi, cfg.oracle_n, &stream)?;
    println!("theta* = {}", lim.theta_star);
    println!("se     = {:?}", lim.se.theta_star.as_slice());
    if cfg.learner.mu > 0.0 {
        println!("theta*_mu (mu = {}) = {}", cfg.learner.mu, lim.theta_star_mu(cfg.learner.mu)?);
    }
    println!("H ={}", lim.h);
    println!("b ={}", lim.b_vec);
    println!("S ={}", lim.s);
    println!("min eig S = {:.6}", lim.min_eigenvalue_s());
    let bound = SpectralBound {
        rho: model.rho(),
        sigma2: model.sigma2(),
        drift_score_sup: model.score_drift_sup(),
    };
    let tr = trace_diagnostics(&lim.h, Some(bound))?;
    println!("tr(H H^-T) = {:.6}, tr(S) = {:.6}", tr.trace_h_hinvt, tr.trace_s);
    println!(
        "max |Im lambda|/Re lambda = {:.6} (bound {:.6})",
        tr.max_imag_ratio,
        bound.factor()
    );
    Ok(())
}

fn cmd_check(suite: Suite, config: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let report = run_check(suite, &cfg)?;
    println!("{report}");
    if !report.passed() {
        return Err(CheckFailed(suite.to_string()).into());
    }
    Ok(())
}

fn cmd_rates(csv: &Path, window: Option<Vec<u64>>, out: Option<&Path>) -> anyhow::Result<()> {
    let curve = Curve::load(csv)?;
    let points: Vec<(u64, f64)> = curve.points().collect();
    let window = match window.as_deref() {
        Some(&[lo, hi]) if lo <= hi => Some((lo, hi)),
        Some(w) => bail!("invalid window {w:?}: need K_LO <= K_HI"),
        None => None,
    };
    let fit = fit_rate(&points, window)?;
    eprintln!("{fit}");
    write_or_print(out, &fit.to_text())
}

fn cmd_plot(csv: &Path, fit: Option<&Path>, output: &Path) -> anyhow::Result<()> {
    let curve = Curve::load(csv)?;
    let fit = fit
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok::<_, anyhow::Error>(RateFit::from_text(&text)?)
        })
        .transpose()?;
    let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = render_svg(&curve, fit.as_ref(), &title)?;
    fs::write(output, svg).with_context(|| format!("writing {}", output.display()))?;
    info!("wrote {}", output.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, index } => cmd_train(&config, index),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Limits { config } => cmd_limits(&config),
        Command::Check { suite, config } => cmd_check(suite, &config),
        Command::Rates { csv, window, out } => cmd_rates(&csv, window, out.as_deref()),
        Command::Plot { csv, fit, output } => cmd_plot(&csv, fit.as_deref(), &output),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_text());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_divergence() => 2,
        _ => 1,
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
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
