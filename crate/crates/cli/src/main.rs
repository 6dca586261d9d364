//! `sigbench`: run reactivity scenarios on the signal, observable and store
//! runtimes and compare the resulting reports.
//!
//! Exit status: 0 on success, 1 on configuration, IO or report errors,
//! 2 on usage errors, 3 when a runtime disagrees with the oracle.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sigbench_core::bench::{cmd_compare, cmd_run, BenchError, Format, Report, RunConfig};
use sigbench_core::scenario::Runtime;
use sigbench_core::stats::DEFAULT_BOOTSTRAP_ITERS;

#[derive(Parser)]
#[command(name = "sigbench", version, about = "Counter-based reactivity benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write a report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Runtimes to run; repeat or comma-separate.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
        runtime: Vec<RuntimeArg>,
        /// Repetitions per runtime [default: the scenario's, 30 if unset].
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides the scenario seed; also seeds bootstrap resampling.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        /// Report path [default: $SIGBENCH_OUT_DIR/<scenario id>.<format>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON map of metric name to {"baseline": B, "weight": I}.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_ITERS)]
        bootstrap_iters: usize,
    },
    /// Compare two or more JSON reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuntimeArg {
    Signals,
    Observables,
    Store,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn runtimes(args: &[RuntimeArg]) -> Vec<Runtime> {
    let mut out: Vec<Runtime> = args
        .iter()
        .flat_map(|a| match a {
            RuntimeArg::Signals => vec![Runtime::Signals],
            RuntimeArg::Observables => vec![Runtime::Observables],
            RuntimeArg::Store => vec![Runtime::Store],
            RuntimeArg::All => Runtime::ALL.to_vec(),
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

fn print_summary(report: &Report) {
    println!(
        "{:<12} {:>12} {:>12} {:>10} {:>8} {:>12}",
        "runtime", "recomp/upd", "notify/upd", "objects", "subs", "p50 us"
    );
    for (name, rt) in &report.runtimes {
        let p50 = report.timing.runtimes.get(name).map_or(f64::NAN, |t| t.elapsed_us.p50);
        println!(
            "{:<12} {:>12.2} {:>12.2} {:>10} {:>8} {:>12.2}",
            name,
            rt.metrics["recomputations"].mean,
            rt.metrics["notifications"].mean,
            rt.live_after_build.total_objects(),
            rt.live_after_build.retained_subscriptions,
            p50
        );
    }
    if let Some(b) = report.composite.budget {
        println!("budget score: {b:.4}");
    }
}

fn fail(err: BenchError) -> ExitCode {
    eprintln!("sigbench: {err}");
    match err {
        BenchError::OracleMismatch { .. } => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            runtime,
            reps,
            seed,
            format,
            out,
            weights,
            bootstrap_iters,
        } => {
            let config = RunConfig {
                scenario,
                runtimes: runtimes(&runtime),
                repetitions: reps,
                seed,
                format: match format {
                    FormatArg::Json => Format::Json,
                    FormatArg::Csv => Format::Csv,
                },
                out,
                weights,
                bootstrap_iters,
            };
            match cmd_run(&config) {
                Ok(outcome) => {
                    print_summary(&outcome.report);
                    println!("report written to {}", outcome.path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare { reports } => match cmd_compare(&reports) {
            Ok(cmp) => {
                print!("{}", cmp.render());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
