//! `endyn`: train, sweep, probe, verify and report on the tabular
//! entropy-dynamics task suite.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric divergence,
//! 3 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use endyn_cli::config::{load_config, ExperimentConfig};
use endyn_cli::emit::{
    load_trace_jsonl, summarize_trace, write_summary, write_trace_csv, write_trace_jsonl,
};
use endyn_cli::runner::{run_experiment, run_sweep, SweepGrid, TrainingTrace};
use endyn_cli::verify::verify_suite;
use endyn_core::diag::{fit_exponential_law, stability_comparison};
use endyn_core::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(name = "endyn", about = "Entropy-dynamics laboratory for tabular softmax policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and emit its trace, CSV and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid; one trace per point plus a sweep summary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, then measure stability margins of the final policy.
    ProbeStability {
        #[arg(long)]
        config: PathBuf,
        /// KL budget for the probe.
        #[arg(long)]
        epsilon: f64,
        /// Entropy-regularization strength for the probed direction.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Selection fraction for the probed KL-penalized direction.
        #[arg(long, default_value_t = 0.01)]
        select_fraction: f64,
        /// Penalty coefficient for the probed KL-penalized direction.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suite and print the JSON report.
    Verify {
        /// Corrupt the clipped-covariance reference to prove the suite can
        /// fail; exits nonzero with exactly that check failing.
        #[arg(long)]
        self_check: bool,
    },
    /// Fit reward = -a*exp(entropy) + b to a stored trace.
    Fit {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-emit a stored trace in another format.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Jsonl,
    Summary,
}

fn resolve_out(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| config.output_dir());
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn emit_run(trace: &TrainingTrace, dir: &Path, stem: &str) -> Result<()> {
    write_trace_jsonl(trace, &dir.join(format!("{stem}.jsonl")))?;
    write_trace_csv(trace, &dir.join(format!("{stem}.csv")))?;
    write_summary(&summarize_trace(trace, None), &dir.join(format!("{stem}_summary.json")))?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let dir = resolve_out(&cfg, out)?;
            let trace = run_experiment(&cfg)?;
            emit_run(&trace, &dir, "trace")?;
            if trace.diverged {
                eprintln!(
                    "diverged at step {} (trace truncated)",
                    trace.diverged_at.unwrap_or(0)
                );
                return Ok(EXIT_DIVERGENCE);
            }
            println!("{}", dir.join("trace.jsonl").display());
            Ok(0)
        }
        Command::Sweep { config, grid, out } => {
            let cfg = load_config(&config)?;
            let grid_text = std::fs::read_to_string(&grid)
                .map_err(|e| Error::Validation(format!("{}: {e}", grid.display())))?;
            let grid: SweepGrid = serde_json::from_str(&grid_text)
                .map_err(|e| Error::Validation(format!("grid parse error: {e}")))?;
            let dir = resolve_out(&cfg, out)?;
            let (traces, summary) = run_sweep(&cfg, &grid)?;
            for (i, trace) in traces.iter().enumerate() {
                write_trace_jsonl(trace, &dir.join(format!("sweep_{i}.jsonl")))?;
            }
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            std::fs::write(dir.join("sweep_summary.json"), text + "\n")
                .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
            println!("{}", dir.join("sweep_summary.json").display());
            if summary.iter().any(|p| p.diverged) {
                return Ok(EXIT_DIVERGENCE);
            }
            Ok(0)
        }
        Command::ProbeStability {
            config,
            epsilon,
            alpha,
            select_fraction,
            beta,
            out,
        } => {
            let cfg = load_config(&config)?;
            let dir = resolve_out(&cfg, out)?;
            let task = cfg.resolve_task()?;
            let trace = run_experiment(&cfg)?;
            if trace.diverged {
                eprintln!("training diverged; no policy to probe");
                return Ok(EXIT_DIVERGENCE);
            }
            let probes = stability_comparison(
                &task,
                &trace.final_policy,
                &trace.final_policy,
                alpha,
                select_fraction,
                beta,
                epsilon,
            )?;
            write_summary(
                &summarize_trace(&trace, Some(probes)),
                &dir.join("stability_summary.json"),
            )?;
            println!("{}", dir.join("stability_summary.json").display());
            Ok(0)
        }
        Command::Verify { self_check } => {
            let report = verify_suite(self_check);
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(if report.passed { 0 } else { EXIT_VERIFICATION })
        }
        Command::Fit { trace } => {
            let trace = load_trace_jsonl(&trace)?;
            let points: Vec<(f64, f64)> = trace
                .records
                .iter()
                .map(|r| (r.avg_entropy, r.expected_reward))
                .collect();
            let fit = fit_exponential_law(&points)?;
            println!("{}", serde_json::to_string_pretty(&fit).expect("fit serializes"));
            Ok(0)
        }
        Command::Report { trace, format, out } => {
            let loaded = load_trace_jsonl(&trace)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)
                .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
            let path = match format {
                ReportFormat::Csv => {
                    let p = dir.join("report.csv");
                    write_trace_csv(&loaded, &p)?;
                    p
                }
                ReportFormat::Jsonl => {
                    let p = dir.join("report.jsonl");
                    write_trace_jsonl(&loaded, &p)?;
                    p
                }
                ReportFormat::Summary => {
                    let p = dir.join("report_summary.json");
                    write_summary(&summarize_trace(&loaded, None), &p)?;
                    p
                }
            };
            println!("{}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
