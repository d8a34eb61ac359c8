use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pplucb::harness::{emit, run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "pplucb", version, about = "Best-arm identification with a judge proxy and audited labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anytime coverage of the proxy confidence sequence.
    Coverage(Common),
    /// Cost and accuracy of each audit policy across gaps.
    Compare(Common),
    /// No-Judge, No-Audit, Fixed, and Adaptive baselines.
    FailureModes(Common),
    /// A single trial with its full sample log.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// key=value config file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// One delta or a comma-separated list.
    #[arg(long)]
    delta: Option<String>,
    /// One policy name or a comma-separated list.
    #[arg(long)]
    policy: Option<String>,
    /// One gap or a comma-separated list.
    #[arg(long)]
    gap: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Also write per-trial records as JSON lines.
    #[arg(long)]
    dump_logs: bool,
}

fn build_config(kind: ExperimentKind, args: &Common) -> pplucb::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(kind);
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    let overrides = [
        ("trials", args.trials.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("deltas", args.delta.clone()),
        ("policies", args.policy.clone()),
        ("gaps", args.gap.clone()),
        ("out_dir", args.out.as_ref().map(|p| p.display().to_string())),
        ("workers", args.workers.map(|v| v.to_string())),
        ("format", args.format.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    if args.dump_logs {
        cfg.dump_logs = true;
    }
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &Common) -> pplucb::Result<()> {
    let cfg = build_config(kind, args)?;
    let report = run_experiment(&cfg)?;
    let with_trials = cfg.dump_logs || kind == ExperimentKind::Run;
    let paths = emit(&report, cfg.format, &cfg.out_dir, kind.name(), with_trials)?;
    for row in &report.rows {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<52} n={:<5} cost={:<12} audit={:<8} acc={:<8} cov={}",
            row.config_id,
            row.n_trials,
            fmt(row.mean_cost),
            fmt(row.audit_rate),
            fmt(row.accuracy),
            fmt(row.coverage),
        );
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Coverage(a) => (ExperimentKind::Coverage, a),
        Command::Compare(a) => (ExperimentKind::Compare, a),
        Command::FailureModes(a) => (ExperimentKind::FailureModes, a),
        Command::Run(a) => (ExperimentKind::Run, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
