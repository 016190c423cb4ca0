use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mglab_core::lab::{run_scenario, Registry, ScenarioConfig};

#[derive(Parser)]
#[command(name = "lab", version, about = "Martingale-problem verification runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for one configuration.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "lab_out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Paths per Monte Carlo ensemble.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// List scenario presets.
    List,
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| {
        eprintln!("validate: {e}");
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let registry = Registry::builtin();
    match cli.command {
        Command::List => {
            for p in registry.list() {
                println!("{:<16} {}", p.id, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match cfg.resolve(&registry) {
                Ok(r) => {
                    println!("ok: scenario {} ({} lambda values, {} starting points)", r.scenario.id, r.lambdas.len(), r.probes.len());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("validate: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Run { config, out, seed, dt, paths } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                cfg.mc.seed = s;
            }
            if let Some(d) = dt {
                cfg.mc.dt = Some(d);
            }
            if let Some(n) = paths {
                cfg.mc.n_paths = n;
            }
            let report = match run_scenario(&cfg, &registry) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            };
            if let Err(e) = report.write(&out) {
                eprintln!("write: {e}");
                return ExitCode::from(3);
            }
            for c in &report.checks {
                let lambda = c.lambda.map(|l| format!(" lambda={l}")).unwrap_or_default();
                println!(
                    "{} {}{lambda} statistic={:.4e} tolerance={:.4e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.statistic,
                    c.tolerance
                );
            }
            println!("{}: {}", report.scenario, report.roundtrip.message());
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
