mod audit;
mod bench;
mod config;
mod emit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mbi::scenario::{catalog, run_scenario};

#[derive(Parser)]
#[command(
    name = "mbi",
    version,
    about = "Scenario runner, scaling benchmark, and incentive audits for \
             gradient-signal coordination"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List scenarios with their parameters and defaults
    List,
    /// Run one scenario and print its metrics
    Run(RunArgs),
    /// Time cycles across agent counts and fit a scaling exponent
    Bench(BenchArgs),
    /// Check incentives, payments, or report truthfulness
    Audit(AuditArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario name (see `mbi list`)
    scenario: String,
    /// Override a parameter, e.g. --set eta=0.2 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed override; falls back to MBI_SEED, then the scenario default
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-cycle records to this CSV file
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated agent counts
    #[arg(long, default_value = "100,1000,10000,100000,1000000")]
    sizes: String,
    /// Cycles per size (the stop rule is disabled)
    #[arg(long, default_value_t = 5)]
    cycles: u64,
    /// Also write agents,median_cycle_nanos rows to this CSV file
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Seed; falls back to MBI_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AuditKind {
    /// Signal-following must beat same-sized deviations
    Incentive,
    /// Path payments must equal marginal contributions
    Vcg,
    /// Report-indexed payments must reward truth-telling
    Bic,
}

#[derive(Args)]
struct AuditArgs {
    kind: AuditKind,
    /// Mechanism scenario whose graph and profile are audited
    #[arg(long, default_value = "assembly_line")]
    scenario: String,
    /// Override a scenario parameter (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed; falls back to MBI_SEED, then the scenario default
    #[arg(long)]
    seed: Option<u64>,
    /// Audit the converged profile instead of the starting one
    #[arg(long)]
    converged: bool,
    /// Quadrature steps for payment integrals
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Deviation samples for the incentive audit
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Probe step size for the incentive audit
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Agreement tolerance for the payment audit
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Flip one agent's payment sign (negative control; expect FAIL)
    #[arg(long, value_name = "SLOT")]
    corrupt: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::List => {
            for spec in catalog() {
                println!("{}: {}", spec.name, spec.summary);
                for p in &spec.params {
                    println!("  {}={} — {}", p.name, emit::fmt_value(p.default), p.doc);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => {
            let mut overrides = config::parse_overrides(&args.set)?;
            config::apply_seed(&mut overrides, args.seed)?;
            let report = run_scenario(&args.scenario, &overrides)?;
            emit::print_scenario(&report);
            if let Some(path) = args.trace {
                match &report.run {
                    Some(run) => std::fs::write(&path, emit::trace_csv(run))?,
                    None => eprintln!(
                        "note: scenario `{}` has no per-cycle trace",
                        args.scenario
                    ),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench(args) => {
            let sizes = bench::parse_sizes(&args.sizes)?;
            let seed = match args.seed {
                Some(s) => s,
                None => config::env_seed()?.unwrap_or(0),
            };
            let rows = bench::run_bench(&sizes, args.cycles, seed)?;
            for row in &rows {
                println!(
                    "agents={} median_cycle_nanos={}",
                    row.agents, row.median_cycle_nanos as u128
                );
            }
            let slope = bench::fit_slope(&rows);
            println!("slope={slope:.4}");
            if let Some(path) = args.csv {
                let mut out = String::from("agents,median_cycle_nanos\n");
                for row in &rows {
                    out.push_str(&format!(
                        "{},{}\n",
                        row.agents, row.median_cycle_nanos as u128
                    ));
                }
                std::fs::write(&path, out)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Audit(args) => {
            let mut overrides = config::parse_overrides(&args.set)?;
            config::apply_seed(&mut overrides, args.seed)?;
            let seed = overrides.get("seed").map(|s| *s as u64).unwrap_or(0);
            let passed = match args.kind {
                AuditKind::Incentive => audit::incentive(
                    &args.scenario,
                    &overrides,
                    args.eta,
                    args.samples,
                    seed,
                    args.converged,
                )?,
                AuditKind::Vcg => audit::vcg(
                    &args.scenario,
                    &overrides,
                    args.steps,
                    args.tol,
                    args.corrupt,
                    args.converged,
                )?,
                AuditKind::Bic => audit::bic(&overrides)?,
            };
            Ok(if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
