use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use d3gd::harness::{self, CellSummary, ExperimentSpec};
use d3gd::Error;

/// Decentralized gradient descent experiments over directed graphs.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SpecArgs {
    /// Experiment spec (TOML).
    spec: PathBuf,
    /// Comma-separated seeds replacing the spec's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Concurrent cells (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// `key=value` with a dotted key, e.g. `graph.n=10` or
    /// `algorithms.*.iterations=500`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell and write the output bundle.
    Run(SpecArgs),
    /// Check a spec and print the resolved configuration.
    Validate(SpecArgs),
    /// Tabulate the cell summaries found under an output directory.
    Summarize { dir: PathBuf },
}

fn load(args: &SpecArgs) -> Result<ExperimentSpec, Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let mut overrides = args.overrides.clone();
    if let Some(seeds) = &args.seeds {
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    if let Some(w) = args.workers {
        overrides.push(format!("workers={w}"));
    }
    harness::load_spec(&text, &overrides)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

fn print_table(cells: &[CellSummary]) {
    println!(
        "{:<24} {:>6} {:>8} {:>14} {:>10} {:>10}",
        "algorithm", "seed", "status", "min_station.", "hit_iter", "speedup"
    );
    for c in cells {
        println!(
            "{:<24} {:>6} {:>8} {:>14} {:>10} {:>10}",
            c.algorithm,
            c.seed,
            c.status,
            c.min_stationarity.map_or("-".into(), |v| format!("{v:.4e}")),
            c.iterations_to_threshold.map_or("-".into(), |v| v.to_string()),
            opt(c.speedup_vs_baseline),
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(args) => match load(&args) {
            Ok(spec) => match spec.to_toml() {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run(args) => {
            let spec = match load(&args) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match harness::run_experiment(&spec) {
                Ok(report) => {
                    print_table(&report.cells);
                    for a in &report.algorithms {
                        println!("{}: median speedup {}", a.algorithm, opt(a.median_speedup));
                    }
                    println!("output: {}", report.dir.display());
                    if report.failures() > 0 {
                        for c in report.cells.iter().filter(|c| c.error.is_some()) {
                            eprintln!("cell {}/{} failed: {}", c.algorithm, c.seed, c.error.as_deref().unwrap_or(""));
                        }
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e @ Error::Validation(_)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Summarize { dir } => match harness::summarize(&dir) {
            Ok(cells) => {
                print_table(&cells);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
