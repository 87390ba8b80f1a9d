use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use robustopt::scenario::{self, Config, EXIT_CONFIG};

/// Robust utility maximization: simulation, entropic BSDE, dual optimizer,
/// HJB surface and the benchmark suite.
#[derive(Debug, Parser)]
#[command(name = "robustopt", version)]
struct Args {
    /// simulate, solve-bsde, optimize, hjb or benchmark; overrides `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Scenario file (key = value or JSON) or a built-in name:
    /// default, gbm_1d, example1, merton, hjb_box.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any key, e.g. `--set market.beta=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(args: &Args) -> Result<Config, String> {
    let text = match &args.scenario {
        None => String::new(),
        Some(s) => match std::fs::read_to_string(s) {
            Ok(t) => t,
            Err(e) => match scenario::builtin(s) {
                Some(t) => t.to_string(),
                None => return Err(format!("cannot read scenario `{s}`: {e}")),
            },
        },
    };
    let mut cfg = Config::parse(&text).map_err(|e| e.to_string())?;
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(m) = &args.mode {
        overrides.push(("mode".into(), m.clone()));
    }
    if let Some(v) = args.seed {
        overrides.push(("grid.seed".into(), v.to_string()));
    }
    if let Some(v) = args.paths {
        overrides.push(("grid.paths".into(), v.to_string()));
    }
    if let Some(v) = args.steps {
        overrides.push(("grid.steps".into(), v.to_string()));
    }
    if let Some(v) = &args.out {
        overrides.push(("output".into(), v.display().to_string()));
    }
    for (k, v) in overrides {
        cfg.set(&k, &v).map_err(|e| e.to_string())?;
    }
    for a in &args.set {
        cfg.set_assignment(a).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let outcome = scenario::run(&cfg);
    if outcome.exit_code == 0 {
        if let Some(dir) = &outcome.output {
            println!("wrote {}", dir.display());
        }
    } else {
        eprintln!("error: {}", outcome.message);
    }
    ExitCode::from(outcome.exit_code as u8)
}
