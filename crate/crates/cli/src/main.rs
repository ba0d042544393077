use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_routh_cli::{model_listing, parse_config, replay, run, write_error_record, CliError, Mode, RunConfig, RunOutcome};
use serde_json::{json, Map, Value};

/// Event-driven simulation and Routh reduction of hybrid time-dependent
/// Lagrangian systems. Deterministic; reads no environment variables.
#[derive(Parser)]
#[command(name = "hybrid-routh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation pipeline; flags override keys of the config file.
    Run {
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        /// Paper scenario (sets c and the initial state of billiard models).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the configuration recorded in a run.json.
    Replay {
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in models.
    Models,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode '{s}' (full, reduced, resequenced, compare, verify)"))
}

/// Merges the config file with the command-line flags.
fn build_config(
    config: Option<PathBuf>,
    model: Option<String>,
    scenario: Option<String>,
    mode: Option<Mode>,
    horizon: Option<f64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut doc = match &config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            if model.is_none() && scenario.is_none() && mode.is_none() && horizon.is_none() && out.is_none() {
                return Ok(parse_config(&text)?);
            }
            // keep line information for errors in the file itself
            parse_config(&text)?;
            serde_json::from_str::<Map<String, Value>>(&text).map_err(|source| CliError::Json {
                path: path.clone(),
                source,
            })?
        }
        None => Map::new(),
    };
    if let Some(m) = model {
        doc.insert("model".into(), json!(m));
    }
    if let Some(s) = scenario {
        doc.insert("scenario".into(), json!(s));
    }
    if let Some(m) = mode {
        doc.insert("mode".into(), json!(m));
    }
    if let Some(h) = horizon {
        doc.insert("horizon".into(), json!(h));
    }
    if let Some(o) = out {
        doc.insert("out".into(), json!(o));
    }
    if !doc.contains_key("model") {
        if !doc.contains_key("scenario") {
            return Err(CliError::Usage("either --model, --scenario or --config is required".into()));
        }
        let reducing = matches!(
            doc.get("mode").and_then(Value::as_str),
            Some("reduced" | "resequenced" | "compare")
        );
        let model = if reducing { "billiard-polar" } else { "billiard-cartesian" };
        doc.insert("model".into(), json!(model));
    }
    if !doc.contains_key("horizon") {
        if let Some(sc) = doc.get("scenario").and_then(Value::as_str).and_then(hybrid_routh::billiard::scenario) {
            doc.insert("horizon".into(), json!(sc.horizon));
        }
    }
    let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("config serializes");
    Ok(parse_config(&text)?)
}

fn report(outcome: &RunOutcome) -> ExitCode {
    let summary = json!({
        "out": outcome.out,
        "termination": outcome.termination,
        "impacts": outcome.impacts,
        "files": outcome.files,
        "checks": outcome.checks,
        "passed": outcome.passed(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let _ = writeln!(std::io::stdout(), "{text}");
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn fail(err: &CliError, out: Option<&PathBuf>) -> ExitCode {
    if let Some(out) = out {
        write_error_record(out, err);
    }
    eprintln!("{}", err.record());
    ExitCode::from(2)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            model,
            scenario,
            mode,
            horizon,
            out,
        } => {
            let cfg = match build_config(config, model, scenario, mode, horizon, out.clone()) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e, out.as_ref()),
            };
            match run(&cfg) {
                Ok(outcome) => report(&outcome),
                Err(e) => fail(&e, Some(&cfg.out)),
            }
        }
        Command::Replay { metadata, out } => match replay(&metadata, &out) {
            Ok(outcome) => report(&outcome),
            Err(e) => fail(&e, Some(&out)),
        },
        Command::Models => {
            for (id, description) in model_listing() {
                let _ = writeln!(std::io::stdout(), "{id:<20} {description}");
            }
            ExitCode::SUCCESS
        }
    }
}
