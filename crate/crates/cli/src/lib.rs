//! Scenario-driven front end for the orbitlab audits.
//!
//! A scenario names a family of vector fields and a list of tasks. Running
//! it writes `report.json` plus CSV data series to an output directory.

pub mod run;
pub mod scenario;

use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use run::{run_scenario, AuditBundle, Report, TaskReport, Verdict, REPORT_SCHEMA};
pub use scenario::{load_str, Loaded, Scenario, SchemaError, SCENARIO_SCHEMA};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
/// Output could not be written.
pub const EXIT_IO: i32 = 4;

/// Built-in scenarios, one per built-in family.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("example-graph", include_str!("../scenarios/example-graph.json")),
    ("balan", include_str!("../scenarios/balan.json")),
    ("counterexample", include_str!("../scenarios/counterexample.json")),
    ("planar", include_str!("../scenarios/planar.json")),
    ("rotation", include_str!("../scenarios/rotation.json")),
    ("heisenberg", include_str!("../scenarios/heisenberg.json")),
];

pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Parser)]
#[command(name = "orbitlab", version, about = "Audits for orbits of families of Lipschitz vector fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        scenario: String,
        /// Output directory [default: the scenario's `out`, else orbitlab-out/<name>]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces every seed in the scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List built-in families and scenarios.
    Builtins,
    /// Validate a scenario without running it.
    Check { scenario: String },
}

/// Scenario text from a path, falling back to the built-in of that name.
pub fn read_scenario(arg: &str) -> Result<String, SchemaError> {
    let path = Path::new(arg);
    if path.is_file() {
        return std::fs::read_to_string(path).map_err(|e| SchemaError::at("", format!("cannot read {arg}: {e}")));
    }
    builtin_scenario(arg)
        .map(str::to_string)
        .ok_or_else(|| SchemaError::at("", format!("no scenario file or built-in named `{arg}`")))
}

/// Exit status for a finished run.
pub fn exit_code(bundle: &AuditBundle) -> i32 {
    if bundle.diverged {
        EXIT_DIVERGENCE
    } else if bundle.all_pass() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_SCHEMA;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_PASS;
        }
    };
    match cli.command {
        Command::Builtins => {
            let _ = writeln!(out, "families:");
            for (name, description) in orbitlab_core::builtins::list_builtins() {
                let _ = writeln!(out, "  {name:<16} {description}");
            }
            let _ = writeln!(out, "scenarios:");
            for (name, _) in BUILTIN_SCENARIOS {
                let _ = writeln!(out, "  {name}");
            }
            EXIT_PASS
        }
        Command::Check { scenario } => match read_scenario(&scenario).and_then(|t| load_str(&t, None)) {
            Ok(loaded) => {
                let _ = writeln!(out, "ok: {} ({} tasks)", loaded.scenario.name, loaded.scenario.tasks.len());
                EXIT_PASS
            }
            Err(e) => {
                let _ = writeln!(err, "schema error at {e}");
                EXIT_SCHEMA
            }
        },
        Command::Run { scenario, out: dir, seed } => {
            let loaded = match read_scenario(&scenario).and_then(|t| load_str(&t, seed)) {
                Ok(l) => l,
                Err(e) => {
                    let _ = writeln!(err, "schema error at {e}");
                    return EXIT_SCHEMA;
                }
            };
            let dir = dir
                .or_else(|| loaded.scenario.out.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| Path::new("orbitlab-out").join(&loaded.scenario.name));
            let bundle = run_scenario(&loaded);
            for task in &bundle.report.tasks {
                let _ = writeln!(out, "{:<6} {} ({})", task.verdict.as_str(), task.name, task.task);
                if task.verdict == Verdict::Error {
                    if let Some(msg) = task.metrics.get("error").and_then(|m| m.as_str()) {
                        let _ = writeln!(out, "       {msg}");
                    }
                }
            }
            if let Err(e) = bundle.write(&dir) {
                let _ = writeln!(err, "cannot write {}: {e}", dir.display());
                return EXIT_IO;
            }
            let _ = writeln!(out, "{} -> {}", bundle.report.verdict.as_str(), dir.join("report.json").display());
            exit_code(&bundle)
        }
    }
}
