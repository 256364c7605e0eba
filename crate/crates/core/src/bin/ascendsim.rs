use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ascendsim::crypto::{NonceCounter, SymKey, KEY_LEN};
use ascendsim::harness::{
    attack_matrix, estimate_costs, parse_jsonl, run_scenario, trace_check, ScenarioConfig, ScenarioError,
};
use ascendsim::toolchain::{compile, seal, ModelPolicy, OperatorGraph, SealedModel};

const USAGE: u8 = 2;
const INVARIANT: u8 = 1;

#[derive(Parser)]
#[command(name = "ascendsim", version, about = "Confidential NPU simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile an operator graph and seal it under a model key.
    Seal {
        graph: PathBuf,
        /// 16-byte model key, hex.
        #[arg(long)]
        key: String,
        /// Defaults to the graph path with a `.sealed` extension.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Embed a pay-per-inference budget in the sealed policy.
        #[arg(long)]
        budget: Option<u32>,
    },
    /// Run a scenario file and write its trace.
    Run {
        scenario: PathBuf,
        /// Trace output path.
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
    },
    /// Run every attack policy and report verdicts.
    AttackMatrix {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Analytic load and inference costs for a sealed model.
    Estimate {
        sealed: PathBuf,
        /// Plaintext input bytes per inference.
        #[arg(long)]
        input_len: u64,
    },
    /// Verify a stored trace offline.
    TraceCheck {
        trace: PathBuf,
        /// Extra canary to search for, hex. May repeat.
        #[arg(long)]
        canary: Vec<String>,
    },
}

/// Usage errors carry exit code 2, invariant failures 1.
struct Failure(u8, String);

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure(USAGE, msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Seal { graph, key, out, budget } => cmd_seal(&graph, &key, out, budget),
        Command::Run { scenario, trace } => cmd_run(&scenario, &trace),
        Command::AttackMatrix { seed, json } => cmd_matrix(seed, json),
        Command::Estimate { sealed, input_len } => cmd_estimate(&sealed, input_len),
        Command::TraceCheck { trace, canary } => cmd_trace_check(&trace, &canary),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("ascendsim: {msg}");
            ExitCode::from(code)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_seal(graph: &Path, key: &str, out: Option<PathBuf>, budget: Option<u32>) -> Result<(), Failure> {
    let key: [u8; KEY_LEN] = hex::decode(key.trim())
        .ok()
        .and_then(|k| k.try_into().ok())
        .ok_or_else(|| usage(format!("--key must be {KEY_LEN} bytes of hex")))?;
    let g: OperatorGraph = serde_json::from_slice(&read(graph)?).map_err(|e| usage(format!("{}: {e}", graph.display())))?;
    let mut model = compile(&g).map_err(|e| usage(format!("{}: {e}", graph.display())))?;
    model.set_policy(ModelPolicy { ppi_budget: budget });
    let (sealed, chain) = seal(&model, &SymKey::from_bytes(key), &mut NonceCounter::new());
    let out = out.unwrap_or_else(|| graph.with_extension("sealed"));
    let bytes = sealed.to_bytes();
    write(&out, &bytes)?;
    println!("{}: {} bytes, {} binaries, chain {}", out.display(), bytes.len(), sealed.binaries.len(), chain.0.to_hex());
    Ok(())
}

fn cmd_run(scenario: &Path, trace: &Path) -> Result<(), Failure> {
    let config = ScenarioConfig::load(scenario).and_then(|c| c.with_env_seed()).map_err(usage)?;
    let run = run_scenario(&config).map_err(|e| match e {
        ScenarioError::Config(c) => usage(c),
        other => Failure(INVARIANT, other.to_string()),
    })?;
    let file = run.trace_file();
    write(trace, file.to_jsonl().as_bytes())?;
    let summary = run.summary();
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    let canaries: Vec<Vec<u8>> = run.canaries.iter().map(|c| c.to_vec()).collect();
    let check = trace_check(run.trace(), &canaries);
    if !check.ok() {
        return Err(Failure(INVARIANT, format!("{} trace invariant violations", check.violations.len())));
    }
    if summary.outcome != summary.expected_outcome {
        return Err(Failure(
            INVARIANT,
            format!("outcome {:?}, policy {} expects {:?}", summary.outcome, summary.attack, summary.expected_outcome),
        ));
    }
    Ok(())
}

fn cmd_matrix(seed: u64, json: bool) -> Result<(), Failure> {
    let seed = match std::env::var(ascendsim::harness::SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{}: not an integer", ascendsim::harness::SEED_ENV)))?,
        Err(_) => seed,
    };
    let report = attack_matrix(seed).map_err(|e| Failure(INVARIANT, e.to_string()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        print!("{}", report.render());
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure(INVARIANT, format!("{} of {} policies failed", report.rows.len() - report.passed(), report.rows.len())))
    }
}

fn cmd_estimate(path: &Path, input_len: u64) -> Result<(), Failure> {
    let sealed = SealedModel::from_bytes(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let report = estimate_costs(&sealed, input_len);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_trace_check(path: &Path, extra: &[String]) -> Result<(), Failure> {
    let text = String::from_utf8(read(path)?).map_err(|_| usage(format!("{}: not UTF-8", path.display())))?;
    let (header, trace) = parse_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut canaries = match &header {
        Some(h) => h.canary_bytes().map_err(|e| usage(format!("header canary: {e}")))?,
        None => Vec::new(),
    };
    for c in extra {
        canaries.push(hex::decode(c).map_err(|e| usage(format!("--canary {c}: {e}")))?);
    }
    let report = trace_check(&trace, &canaries);
    for v in &report.violations {
        let at = v.seq.map(|s| format!("seq {s}")).unwrap_or_else(|| "trace".into());
        println!("{:?} at {at}: {}", v.invariant, v.message);
    }
    println!("{} entries, {} canaries, {} violations", report.entries, report.canaries, report.violations.len());
    if report.ok() {
        Ok(())
    } else {
        Err(Failure(INVARIANT, "trace violates device invariants".into()))
    }
}
