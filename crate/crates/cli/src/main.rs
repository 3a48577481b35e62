use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roughflow::experiment::{list_scenarios_json, parse_config, run, ExperimentConfig, OUT_ENV};

/// Reproducible experiments on stochastic flows with rough drifts.
#[derive(Parser)]
#[command(name = "roughflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    ///
    /// Exit status: 0 all checks passed, 1 a check failed, 2 invalid
    /// config or usage, 3 numeric failure (partial results are kept).
    Run {
        /// Experiment config (TOML, schema_version = 1).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config and the default root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root under which `<scenario>-seed<seed>` is created when neither
        /// `--out` nor `outputs.directory` is set.
        #[arg(long, env = OUT_ENV, default_value = "results")]
        out_root: PathBuf,
        /// Replaces `numerics.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces `numerics.workers`; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the scenario catalog as JSON.
    List,
}

fn load(path: &PathBuf, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(s) = seed {
        cfg.numerics.seed = s;
    }
    if workers.is_some() {
        cfg.numerics.workers = workers;
    }
    cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            println!("{}", list_scenarios_json());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, out_root, seed, workers } => {
            let cfg = match load(&config, seed, workers) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let dir = out
                .or_else(|| cfg.outputs.directory.clone())
                .unwrap_or_else(|| out_root.join(format!("{}-seed{}", cfg.scenario.as_str(), cfg.numerics.seed)));
            let outcome = match run(&cfg, &dir) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let s = &outcome.summary;
            for c in &s.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(e) = &s.error {
                eprintln!("numeric failure: {e}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
    }
}
