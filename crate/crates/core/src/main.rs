use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use discosyn::cli::{load_config, out_dir, run, Command, Overrides, FAILURE_FILE};
use discosyn::Error;

/// Synergy discovery experiments.
#[derive(Debug, Parser)]
#[command(name = "discosyn", version)]
struct Args {
    /// train-discosyn, train-baseline, transfer, sparse-bench, analyze, report or eval.
    command: String,
    /// Run directories for `report`.
    runs: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `dot.path=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `env.set`.
    #[arg(long)]
    task_set: Option<String>,
    /// Shorthand for `train.b` (`baseline.b` for train-baseline).
    #[arg(long)]
    b: Option<usize>,
    /// Shorthand for `baseline.method`.
    #[arg(long)]
    method: Option<String>,
    /// Shorthand for `transfer.synergy` / `sparse.synergy`.
    #[arg(long)]
    synergy: Option<PathBuf>,
    /// Shorthand for `transfer.task`.
    #[arg(long)]
    task: Option<String>,
    /// Shorthand for `sparse.budget`.
    #[arg(long)]
    budget: Option<usize>,
    /// Shorthand for `sparse.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    /// Shorthand for `analyze.run` / `eval.run`.
    #[arg(long)]
    run: Option<PathBuf>,
}

fn quoted(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn shorthand(args: &Args, command: Command) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(s) = &args.task_set {
        v.push(format!("env.set={}", quoted(s)));
    }
    if let Some(b) = args.b {
        let key = if command == Command::TrainBaseline { "baseline.b" } else { "train.b" };
        v.push(format!("{key}={b}"));
    }
    if let Some(m) = &args.method {
        v.push(format!("baseline.method={}", quoted(m)));
    }
    if let Some(p) = &args.synergy {
        let key = if command == Command::SparseBench { "sparse.synergy" } else { "transfer.synergy" };
        v.push(format!("{key}={}", quoted(&p.display().to_string())));
    }
    if let Some(t) = &args.task {
        v.push(format!("transfer.task={}", quoted(t)));
    }
    if let Some(b) = args.budget {
        v.push(format!("sparse.budget={b}"));
    }
    if let Some(n) = args.seeds {
        v.push(format!("sparse.seeds={n}"));
    }
    if let Some(p) = &args.run {
        let key = if command == Command::Eval { "eval.run" } else { "analyze.run" };
        v.push(format!("{key}={}", quoted(&p.display().to_string())));
    }
    if !args.runs.is_empty() {
        let list: Vec<String> = args.runs.iter().map(|p| p.display().to_string()).collect();
        v.push(format!("report.runs={}", serde_json::to_string(&list).expect("strings")));
    }
    v
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command: Command = match args.command.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let mut assignments = shorthand(&args, command);
    assignments.extend(args.overrides.iter().cloned());
    let overrides = Overrides { command: Some(command), seed: args.seed, out: args.out.clone(), assignments };
    let cfg = match load_config(args.config.as_deref(), command, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            eprintln!("state dump: {}", out_dir(&cfg).join(FAILURE_FILE).display());
            ExitCode::from(1)
        }
    }
}
