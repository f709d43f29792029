//! Command-line driver: `run`, `list-scenarios`, `energy <checkpoint>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use platebend::scenario::{
    self, apply_key, parse_config_str, registry, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "platebend",
    about = "Isometric bending of single- and bilayer plates (dG + constrained gradient flow)",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to equilibrium and write trace, snapshots and summary.
    Run(RunArgs),
    /// List the built-in scenarios.
    ListScenarios,
    /// Report the energy stored in a checkpoint under a scenario's operators.
    Energy(EnergyArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct OverrideArgs {
    /// Scenario name (see `list-scenarios`).
    #[arg(long)]
    scenario: Option<String>,
    /// Uniform refinements of the plate (scenario default: 5).
    #[arg(long)]
    refinements: Option<u32>,
    /// Pseudo-time step.
    #[arg(long)]
    tau: Option<f64>,
    /// Zero-order jump penalty.
    #[arg(long)]
    gamma0: Option<f64>,
    /// Gradient jump penalty.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Zero-order metric weight.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Energy-increment stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Step cap.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between VTK snapshots.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Steps between checkpoint writes.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the linear algebra backend.
    #[arg(long)]
    threads: Option<usize>,
    /// Force single-threaded, bitwise-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Clamp with the literal frame Phi = 0 instead of Phi = grad g.
    #[arg(long)]
    literal_phi_zero: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Optional `key = value` config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct EnergyArgs {
    /// Checkpoint file written by `run`.
    checkpoint: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

/// Merge precedence: defaults < config file < CLI flags.
fn build_config(file: Option<&PathBuf>, ov: &OverrideArgs) -> Result<RunConfig, String> {
    let mut cfg = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            parse_config_str(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: Option<String>| -> Result<(), String> {
        if let Some(v) = value {
            apply_key(&mut cfg, key, &v)?;
        }
        Ok(())
    };
    set("scenario", ov.scenario.clone())?;
    set("refinements", ov.refinements.map(|v| v.to_string()))?;
    set("tau", ov.tau.map(|v| v.to_string()))?;
    set("gamma0", ov.gamma0.map(|v| v.to_string()))?;
    set("gamma1", ov.gamma1.map(|v| v.to_string()))?;
    set("epsilon", ov.epsilon.map(|v| v.to_string()))?;
    set("tol", ov.tol.map(|v| v.to_string()))?;
    set("max_steps", ov.max_steps.map(|v| v.to_string()))?;
    set("snapshot_every", ov.snapshot_every.map(|v| v.to_string()))?;
    set("checkpoint_every", ov.checkpoint_every.map(|v| v.to_string()))?;
    set("threads", ov.threads.map(|v| v.to_string()))?;
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    if ov.deterministic {
        cfg.deterministic = true;
        cfg.threads = 1;
    }
    if ov.literal_phi_zero {
        cfg.literal_phi_zero = true;
    }
    if cfg.scenario.is_empty() {
        return Err("no scenario given (use --scenario or a config file)".into());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListScenarios => {
            for s in registry() {
                println!("{:<18} {}", s.name, s.description);
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => {
            let cfg = match build_config(args.config.as_ref(), &args.overrides) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match scenario::run(&cfg) {
                Ok(summary) => {
                    print!("{}", summary.to_text());
                    if summary.converged {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("run did not converge within the step cap");
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Energy(args) => {
            let cfg = match build_config(None, &args.overrides) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match scenario::checkpoint_energy(&cfg, &args.checkpoint) {
                Ok((step, total, no_constant, defect)) => {
                    println!("step = {step}");
                    println!("energy_total = {total:.17e}");
                    println!("energy_no_constant = {no_constant:.17e}");
                    println!("defect = {defect:.17e}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
