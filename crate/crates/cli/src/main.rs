use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use orchestra_core::sim::{self, diff_traces, fuzz, load_scenario, Scenario, ScenarioError, Trace, TraceDiff};
use orchestra_core::transition::{canonical_sources, validate_table, TransitionTable};
use orchestra_core::TriggerCode;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 74;

#[derive(Parser, Debug)]
#[command(name = "orchestra", version, about = "Drive and inspect the orchestration state machine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and report how it terminated.
    Run(RunArgs),
    /// Check the transition table against the trigger reference.
    ValidateTable(ValidateArgs),
    /// Run randomly generated scenarios and report liveness findings.
    Fuzz(FuzzArgs),
    /// Compare two trace files, ignoring wall-clock fields.
    Diff(DiffArgs),
    /// Describe a trigger code.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Text,
    Structured,
}

#[derive(Args, Debug)]
struct FormatArg {
    #[arg(long, value_enum, default_value_t = Format::Text, env = "ORCHESTRA_FORMAT")]
    format: Format,
}

#[derive(Args, Debug, Default)]
struct RuleFlags {
    #[arg(long, env = "ORCHESTRA_QUALITY_CHECK_EVERY", value_parser = clap::value_parser!(u32).range(1..))]
    quality_check_every: Option<u32>,
    #[arg(long, env = "ORCHESTRA_REPEATED_ACTION_LIMIT", value_parser = clap::value_parser!(u32).range(1..))]
    repeated_action_limit: Option<u32>,
    #[arg(long, env = "ORCHESTRA_LONG_EXECUTION_LIMIT", value_parser = clap::value_parser!(u32).range(1..))]
    long_execution_limit: Option<u32>,
    #[arg(long, env = "ORCHESTRA_MAX_STATE_SWITCHES", value_parser = clap::value_parser!(u32).range(1..))]
    max_state_switches: Option<u32>,
    #[arg(long, env = "ORCHESTRA_MAX_PLAN_ATTEMPTS", value_parser = clap::value_parser!(u32).range(1..))]
    max_plan_attempts: Option<u32>,
    #[arg(long, env = "ORCHESTRA_MAX_RUNTIME_SECONDS", value_parser = clap::value_parser!(u64).range(1..))]
    max_runtime_seconds: Option<u64>,
}

impl RuleFlags {
    fn apply(&self, scenario: &mut Scenario) {
        let r = &mut scenario.rules;
        if let Some(v) = self.quality_check_every {
            r.quality_check_every = v;
        }
        if let Some(v) = self.repeated_action_limit {
            r.repeated_action_limit = v;
        }
        if let Some(v) = self.long_execution_limit {
            r.long_execution_limit = v;
        }
        if let Some(v) = self.max_state_switches {
            r.max_state_switches = v;
        }
        if let Some(v) = self.max_plan_attempts {
            r.max_plan_attempts = v;
        }
        if let Some(v) = self.max_runtime_seconds {
            r.max_runtime = v;
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, env = "ORCHESTRA_SCENARIO")]
    scenario: PathBuf,
    /// Where to write the JSONL trace.
    #[arg(long, env = "ORCHESTRA_TRACE_OUT")]
    trace_out: Option<PathBuf>,
    /// Where to write the final artifact store contents.
    #[arg(long, env = "ORCHESTRA_ARTIFACTS_OUT")]
    artifacts_out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = "ORCHESTRA_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    rules: RuleFlags,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// JSONL table to check instead of the built-in one.
    #[arg(long, env = "ORCHESTRA_TABLE")]
    table: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct FuzzArgs {
    #[arg(long, env = "ORCHESTRA_SEED")]
    seed: u64,
    #[arg(long, env = "ORCHESTRA_COUNT", value_parser = clap::value_parser!(u32).range(1..))]
    count: u32,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct DiffArgs {
    left: PathBuf,
    right: PathBuf,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    code: String,
    #[command(flatten)]
    format: FormatArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    ExitCode::from(match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ValidateTable(args) => cmd_validate_table(args),
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Diff(args) => cmd_diff(args),
        Command::Explain(args) => cmd_explain(args),
    })
}

fn print_json(value: &serde_json::Value) {
    say!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn write_file(path: &Path, contents: &str) -> Result<(), u8> {
    fs::write(path, contents).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_IO
    })
}

fn read_scenario(path: &Path) -> Result<Scenario, u8> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read scenario {}: {e}", path.display());
        EXIT_DATA
    })?;
    load_scenario(&text).map_err(|e: ScenarioError| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_DATA
    })
}

fn cmd_run(args: RunArgs) -> u8 {
    let mut scenario = match read_scenario(&args.scenario) {
        Ok(s) => s,
        Err(code) => return code,
    };
    args.rules.apply(&mut scenario);
    if let Some(seed) = args.seed {
        scenario.seed = Some(seed);
    }
    if let Err(e) = scenario.validate() {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }
    let out = sim::run(&scenario);
    if let Some(path) = &args.trace_out {
        if let Err(code) = write_file(path, &out.trace.to_jsonl(&sim::trace_header(&scenario))) {
            return code;
        }
    }
    if let Some(path) = &args.artifacts_out {
        let snapshot = serde_json::to_string_pretty(&out.artifacts.snapshot()).expect("artifacts serialize");
        if let Err(code) = write_file(path, &snapshot) {
            return code;
        }
    }
    let report = &out.report;
    match args.format.format {
        Format::Structured => print_json(&json!({
            "scenario": scenario.name,
            "report": report,
            "exit_code": report.exit_code(),
            "findings": out.findings,
        })),
        Format::Text => {
            let terminal = report.terminal_trigger.map_or("none", TriggerCode::as_str);
            let outcome = report
                .outcome
                .map(|o| serde_json::to_value(o).expect("outcome serializes"))
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| "unfinished".into());
            say!("scenario        {}", scenario.name);
            say!("terminal        {terminal}");
            say!("outcome         {outcome}");
            say!("switches        {}", report.total_switches);
            say!("actions         {}", report.actions_executed);
            say!("plan attempts   {}", report.plan_attempts);
            let q = &report.quality_checks;
            say!(
                "quality checks  periodic={} stale={} success={}",
                q.periodic, q.stale, q.success
            );
            say!("logical time    {}s", report.logical_time);
            for f in &out.findings {
                say!("finding         {f}");
            }
        }
    }
    report.exit_code() as u8
}

fn cmd_validate_table(args: ValidateArgs) -> u8 {
    let table = match &args.table {
        None => TransitionTable::canonical(),
        Some(path) => {
            let loaded = fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|text| TransitionTable::from_jsonl(&text).map_err(|e| e.to_string()));
            match loaded {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_DATA;
                }
            }
        }
    };
    let report = validate_table(&table);
    match args.format.format {
        Format::Structured => {
            let rows: Vec<_> = TriggerCode::ALL
                .iter()
                .map(|code| {
                    json!({
                        "code": code.as_str(),
                        "category": code.category().label(),
                        "sources": canonical_sources(*code)
                            .into_iter()
                            .map(|s| s.as_str())
                            .collect::<Vec<_>>(),
                        "target": code.target().as_str(),
                        "description": code.description(),
                    })
                })
                .collect();
            print_json(&json!({
                "rows": rows,
                "entries": table.len(),
                "rows_verified": report.rows_verified,
                "passed": report.passed(),
                "findings": report.findings(),
            }));
        }
        Format::Text => {
            for code in TriggerCode::ALL {
                let sources = canonical_sources(code);
                let from = if sources.len() >= 7 {
                    "any active state".to_string()
                } else {
                    sources.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                };
                say!(
                    "{:<20} {:<38} {:<20} -> {}",
                    code.category().label(),
                    code.as_str(),
                    from,
                    code.target()
                );
            }
            for f in report.findings() {
                say!("defect: {f}");
            }
            say!("{} rows verified", report.rows_verified);
        }
    }
    if report.passed() {
        0
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_fuzz(args: FuzzArgs) -> u8 {
    let report = match fuzz(args.seed, args.count) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match args.format.format {
        Format::Structured => print_json(&serde_json::to_value(&report).expect("report serializes")),
        Format::Text => {
            say!("seed          {}", report.seed);
            say!("scenarios     {} ({} pathological)", report.count, report.pathological);
            say!("reached DONE  {}", report.reached_done);
            for (outcome, n) in &report.outcomes {
                let name = serde_json::to_value(outcome).expect("outcome serializes");
                say!("  {:<12} {n}", name.as_str().unwrap_or_default());
            }
            say!("longest trace {}", report.longest_trace);
            say!("findings      {}", report.findings.len());
            for f in &report.findings {
                say!("  scenario {} (seed {}): {}", f.scenario, f.seed, f.message);
            }
        }
    }
    if report.passed() {
        0
    } else {
        EXIT_CHECK_FAILED
    }
}

fn read_trace(path: &Path) -> Result<Trace, u8> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read trace {}: {e}", path.display());
        EXIT_DATA
    })?;
    Trace::from_jsonl(&text).map(|(_, t)| t).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_DATA
    })
}

fn cmd_diff(args: DiffArgs) -> u8 {
    let (left, right) = match (read_trace(&args.left), read_trace(&args.right)) {
        (Ok(l), Ok(r)) => (l, r),
        (Err(code), _) | (_, Err(code)) => return code,
    };
    let diff = diff_traces(&left, &right);
    match args.format.format {
        Format::Structured => print_json(&serde_json::to_value(&diff).expect("diff serializes")),
        Format::Text => match &diff {
            TraceDiff::Equal { records } => say!("equal ({records} records)"),
            TraceDiff::Diverged { ordinal, left, right } => {
                say!("traces diverge at record {ordinal}");
                let show = |r: &Option<orchestra_core::sim::TraceRecord>| {
                    r.as_ref().map_or("<end of trace>".to_string(), |r| {
                        format!("{} --{}--> {}", r.before, r.trigger, r.after)
                    })
                };
                say!("  left:  {}", show(left));
                say!("  right: {}", show(right));
            }
        },
    }
    if diff.is_equal() {
        0
    } else {
        EXIT_CHECK_FAILED
    }
}

fn cmd_explain(args: ExplainArgs) -> u8 {
    let wanted = args.code.trim().to_ascii_lowercase();
    let Ok(code) = wanted.parse::<TriggerCode>() else {
        let best = TriggerCode::ALL
            .iter()
            .map(|c| (strsim::jaro_winkler(&wanted, c.as_str()), *c))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| c)
            .expect("trigger list is not empty");
        eprintln!("unknown trigger code `{}`", args.code);
        eprintln!("did you mean `{best}`?");
        return EXIT_CHECK_FAILED;
    };
    match args.format.format {
        Format::Structured => print_json(&json!({
            "code": code.as_str(),
            "category": code.category().label(),
            "description": code.description(),
            "target": code.target().as_str(),
        })),
        Format::Text => {
            say!("{} → {}", code.description(), code.target());
            say!("code      {code}");
            say!("category  {}", code.category().label());
        }
    }
    0
}
