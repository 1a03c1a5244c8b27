use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plver_cli::commands;
use plver_cli::config::{ExperimentConfig, Overrides};
use plver_cli::report::{report, ReportOptions};
use plver_cli::CliError;
use plver_core::simulator::Strategy;

#[derive(Parser)]
#[command(name = "plver", version, about = "Stable edge allocation and proactive live-video replication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate user groups to edge clusters and compare with the greedy baseline.
    Allocate(Common),
    /// Replay the trace under every strategy, alpha and fluctuation in the config.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Worker threads for the grid (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Draw SVG charts from a simulate output directory.
    Report {
        /// Directory holding metrics.csv and clusters/.
        #[arg(default_value = "out")]
        dir: PathBuf,
        /// Where to write the charts (default: DIR/charts).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Alpha for the single-alpha charts; the nearest one in the data is used.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Without it the built-in defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cache shares in (0, 1].
    #[arg(long = "alpha", value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated strategies: plver, abr, cort.
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Comma-separated fluctuation magnitudes in [0, 1].
    #[arg(long = "fluctuation", value_delimiter = ',')]
    fluctuations: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(Overrides {
            seed: self.seed,
            alphas: self.alphas,
            strategies: self.strategies,
            fluctuations: self.fluctuations,
            out: self.out,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Allocate(common) => {
            let cfg = common.resolve()?;
            let r = commands::allocate(&cfg)?;
            println!(
                "isoa: {} allocated, {} unallocated ({} proposals, {} repairs)",
                r.isoa.assigned.len(),
                r.isoa.unallocated.len(),
                r.stats.proposals,
                r.stats.repairs
            );
            println!("greedy: {} allocated, {} unallocated", r.greedy.assigned.len(), r.greedy.unallocated.len());
            print!("{}", commands::rank_comparison(&r.isoa_histogram, &r.greedy_histogram));
            println!("wrote {}", cfg.out.display());
        }
        Command::Simulate { common, jobs } => {
            let cfg = common.resolve()?;
            if jobs == Some(0) {
                return Err(CliError::Config("jobs: must be positive".into()));
            }
            let r = commands::simulate(&cfg, jobs)?;
            println!("{} rows over {} windows", r.rows, r.summary.windows);
            for (s, means) in &r.summary.mean_by_alpha {
                let cells: Vec<String> =
                    r.summary.alphas.iter().zip(means).map(|(a, m)| format!("{a:.2}={m:.4}")).collect();
                println!("{s}: {}", cells.join(" "));
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Report { dir, out, alpha } => {
            let out = out.unwrap_or_else(|| dir.join("charts"));
            for chart in report(&dir, &out, &ReportOptions { alpha })? {
                println!("{}", chart.path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plver: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
