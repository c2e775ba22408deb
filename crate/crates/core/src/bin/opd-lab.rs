use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use opd_lab::experiment::{run_experiment, write_outputs, ExperimentConfig, ExperimentKind, RunManifest};
use opd_lab::Error;

#[derive(Debug, Parser)]
#[command(name = "opd-lab", version, about = "Seeded distillation experiments and oracle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy-task teachers.
    Teach(RunArgs),
    /// Distill toy students over a grid of discounts and seeds.
    ToySweep(RunArgs),
    /// Train a tabular student with a token-level objective.
    TokenDistill(RunArgs),
    /// Check the enumeration identities on a random instance.
    OracleCheck(RunArgs),
    /// Measure second-moment scaling of the token and sequence estimators.
    VarianceProbe(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; the built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Assertion(_) | Error::Convergence(_) | Error::Divergence(_) => 2,
        _ => 1,
    }
}

fn load(kind: ExperimentKind, path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default_for(kind));
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if cfg.kind() != kind {
        return Err(Error::Config(format!("config is for experiment `{}`, not `{}`", cfg.kind().tag(), kind.tag())));
    }
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<u8, Error> {
    let mut cfg = load(kind, args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    let started = Utc::now();
    let output = run_experiment(&cfg)?;
    let manifest = RunManifest::new(&cfg, &output, started, Utc::now())?;
    write_outputs(&args.out, &output, &manifest)?;
    print!("{}", output.report);
    if output.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("failed checks: {}", output.failures.join(", "));
        Ok(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (kind, args) = match &cli.command {
        Command::Teach(a) => (ExperimentKind::Teach, a),
        Command::ToySweep(a) => (ExperimentKind::ToySweep, a),
        Command::TokenDistill(a) => (ExperimentKind::TokenDistill, a),
        Command::OracleCheck(a) => (ExperimentKind::OracleCheck, a),
        Command::VarianceProbe(a) => (ExperimentKind::VarianceProbe, a),
    };
    match execute(kind, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
