use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lagvac_cli::commands::{exit, write_failure_manifest};
use lagvac_cli::{cmd_run, cmd_sweep, cmd_verify, load_config, parse_grid, RunConfig};

/// Lagrangian solver for the viscous liquid-gas two-phase model with vacuum.
#[derive(Parser)]
#[command(name = "lagvac", version = env!("LAGVAC_VERSION"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and fit the decay rates.
    Run(RunArgs),
    /// Run a grid of (gamma, beta) cells built from one configuration.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Cells, e.g. "gamma=2,beta=0.5,1".
        #[arg(long)]
        grid: String,
        /// Cells run at once; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recheck the invariants of a finished run directory.
    Verify { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; all defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. LAGVAC_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random initial profiles.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn out_override(&self) -> Option<PathBuf> {
        std::env::var_os("LAGVAC_OUT")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.out.clone())
    }

    fn resolve(&self) -> Result<RunConfig, i32> {
        let loaded = match &self.config {
            Some(path) => load_config(path),
            None => lagvac_cli::parse_config(""),
        };
        let fail = |e: &dyn std::fmt::Display| {
            eprintln!("error: {e}");
            if let Some(dir) = self.out_override() {
                write_failure_manifest(&dir, e);
            }
            exit::ERROR
        };
        let mut cfg = loaded.map_err(|e| fail(&e))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.initial_data().map_err(|e| fail(&e))?;
        }
        if let Some(dir) = self.out_override() {
            cfg.out_dir = dir;
        }
        Ok(cfg)
    }
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match args.resolve() {
            Ok(cfg) => code(cmd_run(&cfg, &cfg.out_dir)),
            Err(c) => code(c),
        },
        Command::Sweep { run, grid, jobs } => {
            let cells = match parse_grid(&grid) {
                Ok(cells) => cells,
                Err(e) => {
                    eprintln!("error: --grid: {e}");
                    return code(exit::ERROR);
                }
            };
            match run.resolve() {
                Ok(cfg) => {
                    let jobs = jobs.unwrap_or_else(|| {
                        std::thread::available_parallelism().map_or(1, |n| n.get())
                    });
                    code(cmd_sweep(&cfg, &cells, Path::new(&cfg.out_dir), jobs))
                }
                Err(c) => code(c),
            }
        }
        Command::Verify { run_dir } => code(cmd_verify(&run_dir)),
    }
}
