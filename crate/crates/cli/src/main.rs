use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use slowctl::config::{load_config, RunConfig};
use slowctl::pipeline::{run_command, Overrides, Verb};
use slowctl::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Orbit,
    Solve,
    Synthesize,
    Simulate,
    Sweep,
    #[value(name = "reproduce-example2")]
    ReproduceExample2,
}

impl From<Command> for Verb {
    fn from(c: Command) -> Self {
        match c {
            Command::Orbit => Verb::Orbit,
            Command::Solve => Verb::Solve,
            Command::Synthesize => Verb::Synthesize,
            Command::Simulate => Verb::Simulate,
            Command::Sweep => Verb::Sweep,
            Command::ReproduceExample2 => Verb::ReproduceExample2,
        }
    }
}

/// Averaged optimal control of singularly perturbed systems via dual LP certificates.
#[derive(Debug, Parser)]
#[command(name = "slowctl", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; the bundled Lotka-Volterra config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturbation parameter (overrides `epsilon`).
    #[arg(long)]
    eps: Option<f64>,
    /// Number of z-grid levels (overrides `z_grid_size`).
    #[arg(long)]
    grid: Option<usize>,
    /// Exchange tolerance (overrides `exchange_tol`).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Certificate file; defaults to `<out>/dual.txt`.
    #[arg(long)]
    dual: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<String, Error> {
    let base = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::example2(),
    };
    let ov = Overrides {
        epsilon: cli.eps,
        z_grid_size: cli.grid,
        exchange_tol: cli.tol,
        seed: cli.seed,
        output_dir: cli.out.clone(),
    };
    let cfg = ov.apply(base)?;
    let summary = run_command(cli.command.into(), &cfg, cli.dual.as_deref())?;
    let mut buf = Vec::new();
    summary.write(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
