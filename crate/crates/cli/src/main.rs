mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use commands::{failure, invalid, Outcome, EXIT_INVALID};
use config::{ConfigError, RunConfig};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Weighted mean curvature flow of triple-junction clusters.
#[derive(Parser, Debug)]
#[command(name = "junctionflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `outputs.directory` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file of `[[run]]` entries, each with a `name` and a `set` table
    /// of dotted-key overrides; runs execute in parallel under `out/<name>`.
    #[arg(long, global = true)]
    sweep: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Check weights, reference geometry and initial data.
    Validate,
    /// Run the flow and write trace.csv, snapshots/ and meta.json.
    Simulate {
        /// Run even if validation reports warnings.
        #[arg(long)]
        allow_warnings: bool,
    },
    /// Lowest eigenvalues of the linearized operator on the reference.
    Eigs,
    /// Sample the boundary symbol over a parameter grid.
    LsCheck,
    /// Compare linearized quantities with central differences.
    Lincheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    run: Vec<SweepRun>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepRun {
    name: String,
    #[serde(default)]
    set: toml::Table,
}

fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Outcome {
    match command {
        Command::Validate => commands::validate(cfg).outcome,
        Command::Simulate { allow_warnings } => commands::simulate(cfg, out, allow_warnings),
        Command::Eigs => commands::eigs(cfg, out),
        Command::LsCheck => commands::ls_check(cfg, out),
        Command::Lincheck => commands::lincheck(cfg, out),
    }
}

fn config_failure(e: &ConfigError) -> Outcome {
    invalid(vec![failure(e.kind(), e)])
}

fn prepare(table: toml::Table, base: &Path, seed: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut cfg = config::from_table(table, base)?;
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

fn single(cli: &Cli, path: &Path) -> Outcome {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = match config::read_table(path).and_then(|t| prepare(t, &base, cli.seed)) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.outputs.directory.clone());
    execute(cli.command, &cfg, &out)
}

fn load_sweep(path: &Path) -> Result<Vec<SweepRun>, ConfigError> {
    let sweep: SweepFile = config::read_table(path)?
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let mut names = std::collections::HashSet::new();
    for r in &sweep.run {
        let plain = !r.name.is_empty() && r.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !plain || r.name.starts_with('.') {
            return Err(ConfigError::Invalid(format!("sweep run name {:?} is not a plain file name", r.name)));
        }
        if !names.insert(r.name.as_str()) {
            return Err(ConfigError::Invalid(format!("duplicate sweep run name {:?}", r.name)));
        }
    }
    Ok(sweep.run)
}

fn sweep(cli: &Cli, path: &Path, sweep_path: &Path) -> Outcome {
    let base_table = match config::read_table(path) {
        Ok(t) => t,
        Err(e) => return config_failure(&e),
    };
    let runs = match load_sweep(sweep_path) {
        Ok(r) => r,
        Err(e) => return config_failure(&e),
    };
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut root = cli.out.clone();
    if root.is_none() {
        match prepare(base_table.clone(), &base_dir, cli.seed) {
            Ok(c) => root = Some(c.outputs.directory),
            Err(e) => return config_failure(&e),
        }
    }
    let root = root.expect("output root resolved");

    let results: Vec<(String, Outcome)> = runs
        .par_iter()
        .map(|run| {
            let mut table = base_table.clone();
            let applied = run
                .set
                .iter()
                .try_for_each(|(k, v)| config::set_dotted(&mut table, k, v.clone()));
            let outcome = match applied.and_then(|_| prepare(table, &base_dir, cli.seed)) {
                Ok(cfg) => execute(cli.command, &cfg, &root.join(&run.name)),
                Err(e) => config_failure(&e),
            };
            (run.name.clone(), outcome)
        })
        .collect();

    let code = results.iter().map(|(_, o)| o.code).max().unwrap_or(0);
    let entries: Vec<_> = results
        .into_iter()
        .map(|(name, o)| json!({ "name": name, "exit_code": o.code, "report": o.report }))
        .collect();
    let report = json!({ "exit_code": code, "runs": entries });
    let written = std::fs::create_dir_all(&root).and_then(|_| output::write_json(&root.join("sweep.json"), &report));
    if let Err(e) = written {
        return Outcome {
            code: code.max(commands::EXIT_SOLVER),
            report: json!({ "status": "fail", "failures": [failure("Io", e)], "runs": report["runs"] }),
        };
    }
    Outcome { code, report }
}

fn init_threads() -> Result<(), String> {
    let Ok(var) = std::env::var("JUNCTIONFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = var
        .trim()
        .parse()
        .map_err(|_| format!("JUNCTIONFLOW_THREADS = {var:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = if let Err(msg) = init_threads() {
        invalid(vec![failure("Environment", msg)])
    } else {
        match (&cli.config, &cli.sweep) {
            (None, _) => invalid(vec![failure("ConfigMissing", "--config is required")]),
            (Some(path), None) => single(&cli, path),
            (Some(path), Some(sw)) => sweep(&cli, path, sw),
        }
    };
    match serde_json::to_string_pretty(&outcome.report) {
        Ok(text) => {
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(e) => eprintln!("cannot print report: {e}"),
    }
    ExitCode::from(u8::try_from(outcome.code).unwrap_or(EXIT_INVALID as u8))
}
