//! `drillforge`: compile drill sets, simulate cohorts, inspect logs and run
//! the service.
//!
//! Exit status: 0 on success, 2 on invalid input, 3 on I/O failure.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drillforge_core::itemgen::{generate_drill_set, template::generate_from_template, OptionPools, SetMeta};
use drillforge_core::ledger::RewardRuleSet;
use drillforge_core::simulate::{run_simulation, AnswerPolicy, CohortSpec};
use drillforge_core::storage::{anonymized_export, encode_drill_set, fresh_salt, parse_log};
use drillforge_core::{replay, Error, GenConfig, GradingConfig, Template};
use drillforge_service::{open_data_dir, system_clock};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "drillforge", version, about = "Drill authoring, simulation and operations")]
struct Cli {
    /// JSON file with `generation`, `grading` and `rewards` overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a drill set from answer/distractor pools.
    Generate(GenerateArgs),
    /// Generate a drill set from an expression template.
    Template {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a synthetic cohort through the platform.
    Simulate(SimulateArgs),
    /// Print a student's drill grade on one set from an event log.
    Grade {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        student: String,
        #[arg(long)]
        set: String,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[command(flatten)]
        data: DataDir,
    },
    /// Inspect or change SMLY balances in a data directory.
    Ledger {
        #[command(flatten)]
        data: DataDir,
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Write an anonymized answer export from a data directory.
    Export {
        #[command(flatten)]
        data: DataDir,
        /// Output file [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataDir {
    /// Data directory holding events.jsonl, config.json and drillsets/
    #[arg(long = "data", env = "DRILLFORGE_DATA", default_value = "data")]
    path: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    pools: PathBuf,
    /// File whose contents become the set header
    #[arg(long)]
    header: Option<PathBuf>,
    /// Number of items [default: 300]
    #[arg(long)]
    n: Option<usize>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "DS")]
    id: String,
    #[arg(long, default_value = "")]
    title: String,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    UntilAce,
    Fixed,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    students: usize,
    #[arg(long, default_value_t = 0.8)]
    ability: f64,
    #[arg(long, default_value_t = 50)]
    sets: usize,
    #[arg(long, default_value_t = 100)]
    items_per_set: usize,
    #[arg(long, value_enum, default_value_t = Policy::UntilAce)]
    policy: Policy,
    /// Answer cap for until-ace, answer count for fixed
    #[arg(long, default_value_t = 200)]
    answers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LedgerAction {
    /// Show one balance, or every balance.
    Balance {
        #[arg(long)]
        account: Option<String>,
    },
    /// Credit newly issued SMLY.
    Mint {
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "manual")]
        memo: String,
    },
    Transfer {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "")]
        memo: String,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    generation: Option<GenConfig>,
    grading: Option<GradingConfig>,
    rewards: Option<RewardRuleSet>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure {
            code: if err.is_io() { 3 } else { 2 },
            message: err.to_string(),
        }
    }
}

fn io_failure(path: &Path, err: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {err}", path.display()),
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| io_failure(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| io_failure(path, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file_config: FileConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => FileConfig::default(),
    };
    let grading = file_config.grading.unwrap_or_default();

    match cli.command {
        Command::Generate(args) => {
            let pools: OptionPools = read_json(&args.pools)?;
            let header = match &args.header {
                Some(path) => String::from_utf8(read(path)?)
                    .map_err(|_| invalid(format!("{}: not UTF-8", path.display())))?
                    .trim()
                    .to_string(),
                None => String::new(),
            };
            let mut cfg = file_config.generation.unwrap_or_default();
            cfg.n_items = args.n.unwrap_or(cfg.n_items);
            cfg.seed = args.seed.unwrap_or(cfg.seed);
            let meta = SetMeta {
                id: args.id,
                title: args.title,
                header,
            };
            let set = generate_drill_set(meta, &pools, &cfg)?;
            write_out(args.out.as_deref(), &encode_drill_set(&set))
        }
        Command::Template { input, out } => {
            let tmpl: Template = read_json(&input)?;
            let set = generate_from_template(&tmpl)?;
            write_out(out.as_deref(), &encode_drill_set(&set))
        }
        Command::Simulate(args) => {
            let spec = CohortSpec {
                n_students: args.students,
                ability: args.ability,
                sets: args.sets,
                items_per_set: args.items_per_set,
                policy: match args.policy {
                    Policy::UntilAce => AnswerPolicy::UntilAce {
                        max_answers: args.answers,
                    },
                    Policy::Fixed => AnswerPolicy::Fixed { answers: args.answers },
                },
                seed: args.seed,
            };
            let rewards = file_config.rewards.unwrap_or_default();
            let report = run_simulation(&spec, &grading, &rewards)?;
            write_out(args.out.as_deref(), &pretty(&report))
        }
        Command::Grade { log, student, set } => {
            let parsed = parse_log(&read(&log)?)?;
            if parsed.torn_tail {
                eprintln!("warning: ignoring torn final line of {}", log.display());
            }
            let state = replay(&parsed.records)?;
            state.student(&student)?;
            state.drill_set(&set)?;
            write_out(None, &pretty(&state.grade(&student, &set, &grading)))
        }
        Command::Serve { port, data } => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let state = open_data_dir(&data.path, system_clock())?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| io_failure(&data.path, e))?;
            let addr = std::net::SocketAddr::from(([0, 0, 0, 0], port));
            runtime
                .block_on(drillforge_service::serve(addr, state))
                .map_err(|e| io_failure(Path::new(&addr.to_string()), e))
        }
        Command::Ledger { data, action } => {
            let state = open_data_dir(&data.path, system_clock())?;
            let now = system_clock()();
            state.with_platform(|p| -> Result<(), Failure> {
                let value = match action {
                    LedgerAction::Balance { account: Some(id) } => {
                        serde_json::json!({ "account_id": id, "balance": p.balance(&id)? })
                    }
                    LedgerAction::Balance { account: None } => {
                        let all: std::collections::BTreeMap<_, _> =
                            p.state().ledger.accounts().map(|a| (a.id.clone(), a.balance)).collect();
                        serde_json::to_value(all).expect("map")
                    }
                    LedgerAction::Mint { to, amount, memo } => serde_json::to_value(p.mint(&to, amount, &memo, now)?).expect("tx"),
                    LedgerAction::Transfer { from, to, amount, memo } => {
                        serde_json::to_value(p.transfer(&from, &to, amount, &memo, now)?).expect("tx")
                    }
                };
                write_out(None, &pretty(&value))
            })
        }
        Command::Export { data, out } => {
            let log = data.path.join("events.jsonl");
            let parsed = parse_log(&read(&log)?)?;
            write_out(out.as_deref(), &anonymized_export(&parsed.records, &fresh_salt()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code)
        }
    }
}
