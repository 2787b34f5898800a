use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use chunktd::harness::{self, output, verify, ExperimentConfig};

#[derive(Parser)]
#[command(name = "chunktd", version, about = "Chunked TD learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config whose learners each name a single α (and λ).
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the full α × λ grid of a config and select per label.
    Sweep {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in correctness checks; exits nonzero on any failure.
    Verify {
        /// Smaller trial counts for a quick smoke test.
        #[arg(long)]
        quick: bool,
    },
    /// Summarize a results directory written by `run` or `sweep`.
    Report { results: PathBuf },
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("results").join(&cfg.name))
}

fn execute(path: &Path, out: Option<PathBuf>, grid: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    let dir = out_dir(&cfg, out);
    let workers = harness::worker_count();
    eprintln!("{}: {} episodes x {} seeds on {workers} worker(s)", cfg.name, cfg.episodes, cfg.seeds.len());
    let start = Instant::now();
    let records = if grid { harness::sweep(&cfg)? } else { harness::run_experiment(&cfg)? };
    let summary = output::write_results(&dir, &cfg, &records)?;
    eprintln!("{} runs in {:.1}s -> {}", records.len(), start.elapsed().as_secs_f64(), dir.display());
    print!("{}", output::render_summary(&summary, &cfg.metrics()));
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let (cfg, table) = output::read_tables(dir).with_context(|| format!("reading {}", dir.display()))?;
    let summary = output::summarize(&cfg, &table)?;
    print!("{}", output::render_summary(&summary, &table.metrics));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => execute(&config, out, false),
        Command::Sweep { config, out } => execute(&config, out, true),
        Command::Report { results } => report(&results),
        Command::Verify { quick } => {
            let checks = verify::run_all(if quick { verify::Scale::Quick } else { verify::Scale::Full });
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                return ExitCode::SUCCESS;
            }
            return ExitCode::FAILURE;
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
