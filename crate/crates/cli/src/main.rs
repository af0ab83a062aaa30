//! `rigidhom` batch driver.
//!
//! Every subcommand reads a JSON config, writes `manifest.json`, `results.csv`,
//! `summary.json` and plots into `--out`, and exits with 0 on success, 1 on a
//! malformed config or a failed check, 2 on a solver error.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::*;

#[derive(Parser)]
#[command(name = "rigidhom", version, about = "Homogenised surface energies on piecewise rigid fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate f_hom over a (zeta, nu) grid.
    Fhom(RunArgs),
    /// Solve one cell problem.
    Cell(RunArgs),
    /// Check the density axioms on a sample grid.
    Validate(RunArgs),
    /// Piecewise rigid approximation of a deformation.
    Approx(RunArgs),
    /// Recovery fields for a single interface.
    Recovery(RunArgs),
    /// Strip counterexample: upper bound, certificates and gap ratio.
    Counterexample(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Replaces the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Validation(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Validation(_) => 1,
            Failure::Solver(_) | Failure::Io(_) => 2,
        }
    }

    fn diagnostic(&self) -> serde_json::Value {
        let (kind, msg) = match self {
            Failure::Config(m) => ("config", m),
            Failure::Validation(m) => ("validation", m),
            Failure::Solver(m) => ("solver", m),
            Failure::Io(m) => ("io", m),
        };
        json!({ "status": "error", "kind": kind, "message": msg })
    }
}

impl From<rigidhom::Error> for Failure {
    fn from(e: rigidhom::Error) -> Self {
        match e {
            rigidhom::Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))?;
    s.push('\n');
    write(path, &s)
}

fn manifest<C: Serialize>(name: &str, args: &RunArgs, cfg: &C) -> serde_json::Value {
    json!({
        "tool": "rigidhom",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": rigidhom::VERSION,
        "subcommand": name,
        "schema_version": SCHEMA_VERSION,
        "config_path": args.config.display().to_string(),
        "seed_override": args.seed,
        "jobs": args.jobs,
        "config": cfg,
    })
}

fn execute<C: Serialize>(
    name: &str,
    args: &RunArgs,
    cfg: &C,
    body: impl FnOnce(&C) -> Result<run::Outcome, Failure>,
) -> Result<(), Failure> {
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?;
    write_json(&args.out.join("manifest.json"), &manifest(name, args, cfg))?;
    log::info!("running {name}");
    let out = body(cfg)?;
    write(&args.out.join("results.csv"), &out.results)?;
    write_json(&args.out.join("summary.json"), &out.summary)?;
    for (file, text) in &out.files {
        write(&args.out.join(file), text)?;
    }
    match out.invalid {
        Some(msg) => Err(Failure::Validation(msg)),
        None => Ok(()),
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    let (name, args) = match &cmd {
        Command::Fhom(a) => ("fhom", a),
        Command::Cell(a) => ("cell", a),
        Command::Validate(a) => ("validate", a),
        Command::Approx(a) => ("approx", a),
        Command::Recovery(a) => ("recovery", a),
        Command::Counterexample(a) => ("counterexample", a),
    };
    if let Some(n) = args.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Solver(e.to_string()))?;
    }
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    match cmd {
        Command::Fhom(_) => {
            let mut c: FhomConfig = load(&args.config)?;
            if let Some(s) = args.seed {
                c.seed = s;
            }
            execute(name, args, &c, run::fhom)
        }
        Command::Cell(_) => {
            let mut c: CellConfig = load(&args.config)?;
            if let Some(s) = args.seed {
                c.seed = s;
            }
            execute(name, args, &c, run::cell)
        }
        Command::Validate(_) => {
            let mut c: ValidateConfig = load(&args.config)?;
            if let Some(s) = args.seed {
                c.density.seed.seed = s;
            }
            execute(name, args, &c, run::validate)
        }
        Command::Approx(_) => {
            let c: ApproxConfig = load(&args.config)?;
            if args.seed.is_some() {
                log::warn!("approx is deterministic; --seed ignored");
            }
            execute(name, args, &c, |c| run::approx(c, &base))
        }
        Command::Recovery(_) => {
            let c: RecoveryConfig = load(&args.config)?;
            if args.seed.is_some() {
                log::warn!("recovery uses a periodic density; --seed ignored");
            }
            execute(name, args, &c, run::recovery)
        }
        Command::Counterexample(_) => {
            let mut c: CounterexampleConfig = load(&args.config)?;
            if let Some(s) = args.seed {
                c.search.seeds = vec![s];
            }
            execute(name, args, &c, run::counterexample)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RIGIDHOM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic());
            ExitCode::from(f.code())
        }
    }
}
