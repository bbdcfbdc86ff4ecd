//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::artifacts::{self, GridSpec, CONFIG_FILE, DEMOS_FILE, VALUE_GRID_FILE};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::training::{load_or_generate_demos, run_eval, run_training};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "salved", version, about = "Chance-constrained MPC with a learned Lyapunov terminal value")]
pub struct Cli {
    /// Worker threads for fitting and planning (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate demonstrations for a config.
    Demos(RunArgs),
    /// Train an agent and write a run directory.
    Train(RunArgs),
    /// Evaluate the frozen checkpoints of a run directory.
    Eval(EvalArgs),
    /// Sample the terminal value over a position grid.
    ExportGrid(GridArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SALVED_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long, alias = "out")]
    pub run: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, env = "SALVED_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Output CSV (default: `<run>/value_grid.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = -130.0, allow_hyphen_values = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = -80.0, allow_hyphen_values = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub y_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub y_max: f64,
    #[arg(long, default_value_t = 50)]
    pub nx: usize,
    #[arg(long, default_value_t = 20)]
    pub ny: usize,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn load_config(args: &RunArgs) -> std::result::Result<RunConfig, Failure> {
    if !args.config.is_file() {
        return Err(Failure::Usage(Error::Config(format!(
            "config file {} does not exist",
            args.config.display()
        ))));
    }
    let mut cfg = RunConfig::load(&args.config).map_err(Failure::Usage)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.resolve().map_err(Failure::Usage)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn cmd_demos(args: &RunArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(args)?;
    let run = || -> Result<()> {
        create_dir(&args.out)?;
        let env = cfg.env_spec::<f64>()?;
        let demos = load_or_generate_demos(&cfg, &env)?;
        artifacts::write_json(&args.out.join(DEMOS_FILE), &demos)?;
        let p = args.out.join(CONFIG_FILE);
        std::fs::write(&p, cfg.to_toml_string()?).map_err(|e| Error::io(&p, e))?;
        eprintln!("wrote {} demonstrations to {}", demos.len(), args.out.join(DEMOS_FILE).display());
        Ok(())
    };
    run().map_err(Failure::Runtime)
}

fn cmd_train(args: &RunArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(args)?;
    let out = run_training::<f64>(&cfg, &args.out, |r| {
        eprintln!(
            "iter {:>3}  cost {:>6.1}  completed {}  violated {}  feasible {:.2}",
            r.iteration, r.episode_cost, r.completed, r.violated, r.planner_feasible_rate
        );
    })
    .map_err(Failure::Runtime)?;
    let done = out.records.iter().filter(|r| r.completed).count();
    eprintln!("{}/{} episodes completed; artifacts in {}", done, out.records.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> std::result::Result<(), Failure> {
    let records = run_eval::<f64>(&args.run, args.episodes, args.seed).map_err(Failure::Runtime)?;
    let done = records.iter().filter(|r| r.completed).count();
    eprintln!("eval: {}/{} episodes completed", done, records.len());
    Ok(())
}

fn cmd_export_grid(args: &GridArgs) -> std::result::Result<(), Failure> {
    let grid = GridSpec {
        x_range: (args.x_min, args.x_max),
        y_range: (args.y_min, args.y_max),
        nx: args.nx,
        ny: args.ny,
    };
    if args.nx == 0 || args.ny == 0 || !(args.x_max > args.x_min) || !(args.y_max > args.y_min) {
        return Err(Failure::Usage(Error::Config(
            "grid needs nx, ny >= 1 and non-empty x/y ranges".into(),
        )));
    }
    let run = || -> Result<()> {
        let cfg = RunConfig::load(&args.run.join(CONFIG_FILE))?;
        let env = cfg.env_spec::<f64>()?;
        let terminal = artifacts::load_terminal::<f64>(&args.run)?;
        let rows = artifacts::value_grid(&env, &terminal, &grid)?;
        let out = args.out.clone().unwrap_or_else(|| args.run.join(VALUE_GRID_FILE));
        artifacts::write_value_grid(&out, &rows)
    };
    run().map_err(Failure::Runtime)
}

/// Parses `argv` and runs the selected subcommand, returning the exit code.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let res = match &cli.command {
        Command::Demos(a) => cmd_demos(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportGrid(a) => cmd_export_grid(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
