use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opre_core::acceptance::{run_acceptance, AcceptanceOptions, ACCEPTANCE_SEED};
use opre_core::experiment::default_params;
use opre_core::{run_experiment, Error, ExperimentConfig, ExperimentKind, OutputFormat};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "opre", version, about = "Oriented percolation, contact process and coupling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Survival of the origin in oriented percolation.
    Percolate(RunArgs),
    /// Crossing frequencies of a reduced rectangle.
    Crossing(RunArgs),
    /// Bad-block frequency at a given scale.
    Blocks(RunArgs),
    /// Survival of the contact process with periodic recoveries.
    Contact(RunArgs),
    /// Coupling validation by path replay.
    Couple(RunArgs),
    /// Depth tails of the temporal-stretch model.
    Temporal(RunArgs),
    /// Check a connection function against the exponential lower bound.
    KernelAudit(RunArgs),
    /// Run the acceptance suite.
    Acceptance(AcceptanceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); built-in defaults are used without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, env = "OPRE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Result file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Dump one row of raw values per replication.
    #[arg(long)]
    raw: bool,
    /// Record wall time in the seconds column.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AcceptanceArgs {
    #[arg(long, env = "OPRE_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Criteria to run (comma separated); all by default.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
    /// Directory for per-criterion result files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn code_for(e: &Error) -> u8 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn run(kind: ExperimentKind, a: RunArgs) -> ExitCode {
    let mut cfg = match &a.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => return fail(code_for(&e), e),
        },
        None => ExperimentConfig::new(kind, default_params(kind)),
    };
    if cfg.experiment != kind {
        return fail(
            EXIT_VALIDATION,
            format!("config describes a `{}` experiment, not `{}`", cfg.experiment.name(), kind.name()),
        );
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(o) = a.out {
        cfg.output = Some(o);
    }
    if let Some(f) = a.format {
        cfg.format = f.into();
    }
    cfg.raw_samples |= a.raw;
    cfg.timing |= a.timing;
    let result = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(code_for(&e), e),
    };
    match &cfg.output {
        Some(path) => {
            if let Err(e) = result.write(path, cfg.format) {
                return fail(EXIT_RUNTIME, e);
            }
        }
        None => {
            let mut text = result.render(cfg.format);
            if cfg.format == OutputFormat::Csv {
                if let Some(raw) = result.raw_csv() {
                    text.push_str(&raw);
                }
            }
            if std::io::stdout().write_all(text.as_bytes()).is_err() {
                return ExitCode::from(EXIT_RUNTIME);
            }
        }
    }
    ExitCode::SUCCESS
}

fn acceptance(a: AcceptanceArgs) -> ExitCode {
    let opts = AcceptanceOptions { workers: a.workers.max(1), seed: a.seed.unwrap_or(ACCEPTANCE_SEED) };
    let ids: Vec<u8> = if a.only.is_empty() { (1..=12).collect() } else { a.only };
    if let Some(&bad) = ids.iter().find(|&&i| !(1..=12).contains(&i)) {
        return fail(EXIT_VALIDATION, format!("no criterion {bad}"));
    }
    if let Some(dir) = &a.out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return fail(EXIT_RUNTIME, format!("{}: {e}", dir.display()));
        }
    }
    let outcomes = match run_acceptance(&ids, &opts, |o| println!("{}", o.line())) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Some(dir) = &a.out {
        for o in &outcomes {
            let (name, body) = match a.format {
                Format::Csv => (format!("criterion-{:02}.csv", o.id), o.result_file()),
                Format::Json => (
                    format!("criterion-{:02}.json", o.id),
                    serde_json::to_string_pretty(o).expect("outcome serialises") + "\n",
                ),
            };
            if let Err(e) = std::fs::write(dir.join(&name), body) {
                return fail(EXIT_RUNTIME, format!("{name}: {e}"));
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ACCEPTANCE)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Percolate(a) => run(ExperimentKind::Percolate, a),
        Command::Crossing(a) => run(ExperimentKind::Crossing, a),
        Command::Blocks(a) => run(ExperimentKind::Blocks, a),
        Command::Contact(a) => run(ExperimentKind::Contact, a),
        Command::Couple(a) => run(ExperimentKind::Couple, a),
        Command::Temporal(a) => run(ExperimentKind::Temporal, a),
        Command::KernelAudit(a) => run(ExperimentKind::KernelAudit, a),
        Command::Acceptance(a) => acceptance(a),
    }
}
