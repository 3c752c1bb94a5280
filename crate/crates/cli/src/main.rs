use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use chanhom::experiment::{self, ExperimentConfig};
use chanhom::geometry::Eps;

/// Thin-channel homogenization experiments.
#[derive(Parser)]
#[command(name = "chanhom", version)]
struct Cli {
    /// experiment config (JSON)
    #[arg(long, global = true, default_value = "configs/benchmark.json")]
    config: PathBuf,
    /// output directory (defaults to the config's output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// concurrent solver jobs for sweeps
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// also write gnuplot-style whitespace tables
    #[arg(long, global = true)]
    emit_plotdata: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one microscopic problem and write snapshots.
    RunMicro {
        /// ε (defaults to the largest in the sweep)
        #[arg(long)]
        eps: Option<f64>,
        /// γ (defaults to the first in the sweep)
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
    },
    /// Solve the homogenized problem and write snapshots and the interface trace.
    RunMacro,
    /// Run the ε/γ sweep against the homogenized solution.
    Converge,
    /// Print channel measures and cell-averaged data.
    CellQuantities,
    /// Run the quick consistency checks.
    Verify,
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = ExperimentConfig::load(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    let out = out_dir(cli, &cfg);
    match &cli.command {
        Command::RunMicro { eps, gamma } => {
            let eps = match eps {
                Some(e) => Eps::from_value(*e)?,
                None => cfg.eps_list()?[0],
            };
            let gamma = gamma.unwrap_or(cfg.sweep.gamma[0]);
            let dir = experiment::run_micro(&cfg, eps, gamma, &out, cli.emit_plotdata)?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::RunMacro => {
            let dir = experiment::run_macro(&cfg, &out, cli.emit_plotdata)?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::Converge => {
            let report = experiment::converge(&cfg, cli.jobs)?;
            for p in experiment::write_report(&report, &out, cli.emit_plotdata)? {
                info!("wrote {}", p.display());
            }
            println!(
                "{:>10} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
                "eps", "gamma", "e_bulk+", "e_bulk-", "e_trace+", "e_trace-", "e_layer"
            );
            for r in &report.rows {
                let e = r.errors();
                println!(
                    "{:>10.6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                    r.eps, r.gamma, e[0], e[1], e[2], e[3], e[4]
                );
            }
            println!(
                "verdict: {}",
                if report.verdicts.pass { "pass" } else { "FAIL" }
            );
            Ok(report.verdicts.pass)
        }
        Command::CellQuantities => {
            let q = experiment::cell_quantities(&cfg)?;
            let text = serde_json::to_string_pretty(&q)?;
            if cli.out.is_some() {
                write_text(&out.join("cell_quantities.json"), &text)?;
            }
            println!("{text}");
            Ok(true)
        }
        Command::Verify => {
            let checks = experiment::verify(&cfg)?;
            for c in &checks {
                println!(
                    "{} {} (value {:.3e}, limit {:.1e})",
                    if c.pass { "pass" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.limit
                );
            }
            if cli.out.is_some() {
                write_text(
                    &out.join("verify.json"),
                    &serde_json::to_string_pretty(&checks)?,
                )?;
            }
            Ok(checks.iter().all(|c| c.pass))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("CHANNEL_HOMOG_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
