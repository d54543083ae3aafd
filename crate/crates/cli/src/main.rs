//! Command-line runner for the fruitpool simulator.
//!
//! Exit codes: 0 success, 1 configuration error, 2 invariant violation or
//! unreadable transcript, 3 a run failed the utility verdict.

mod batch;
mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fruitpool::analysis::{bound_report, BoundReport, LogBase};
use fruitpool::audit::audit;
use fruitpool::transcript::ExecutionTranscript;
use thiserror::Error;

use crate::spec::{load_params, ExperimentSpec, Seeds};

/// Caps the worker pool of `run`.
const WORKERS_ENV: &str = "FRUITPOOL_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Violation(String),
    #[error("{0} runs failed the verdict")]
    Evp(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Violation(_) => 2,
            CliError::Evp(_) => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaseArg {
    Two,
    Natural,
    Both,
}

impl BaseArg {
    fn bases(self) -> Vec<LogBase> {
        match self {
            BaseArg::Two => vec![LogBase::Two],
            BaseArg::Natural => vec![LogBase::Natural],
            BaseArg::Both => vec![LogBase::Two, LogBase::Natural],
        }
    }
}

#[derive(Parser)]
#[command(name = "fruitpool", version, about = "FruitChain mining pool simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy of a spec on every seed and write the reports.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seeds: `a..b`, `n` or `a,b,c`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
        #[arg(long, value_enum)]
        log_base: Option<BaseArg>,
    },
    /// Evaluate the closed-form bounds for a parameter file.
    Bounds {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
        #[arg(long, value_enum, default_value = "both")]
        log_base: BaseArg,
        /// Constant `c` in `p_b ≥ c/(nq)`.
        #[arg(long, default_value_t = 1.0)]
        block_rate_c: f64,
    },
    /// Re-check stored transcripts.
    Replay {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
    },
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

type Field<T> = (&'static str, fn(&BoundReport) -> T);

fn table(reports: &[BoundReport]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let cells = |f: &dyn Fn(&BoundReport) -> String| reports.iter().map(f).collect::<Vec<_>>();
    let numbers: [Field<f64>; 10] = [
        ("delta", |r| r.delta_used),
        ("delta_min", |r| r.delta_min),
        ("claim1_b", |r| r.claim1_b),
        ("claim2_b", |r| r.claim2_b),
        ("epsilon_prime", |r| r.epsilon_prime),
        ("case_bound_1", |r| r.case_bounds[0]),
        ("case_bound_2", |r| r.case_bounds[1]),
        ("case_bound_3", |r| r.case_bounds[2]),
        ("theorem_threshold", |r| r.theorem_threshold),
        ("p_f_r_f", |r| r.p_f_r_f),
    ];
    for (name, f) in numbers {
        rows.push((name.into(), cells(&|r| format!("{:.6}", f(r)))));
    }
    rows.push(("residual".into(), cells(&|r| format!("{:.3e}", r.residual))));
    let flags: [Field<bool>; 8] = [
        ("theorem_i", |r| r.flags.theorem_i),
        ("theorem_ii", |r| r.flags.theorem_ii),
        ("theorem_iii", |r| r.flags.theorem_iii),
        ("claim1_i", |r| r.flags.claim1_i),
        ("claim2_i", |r| r.flags.claim2_i),
        ("delta_in_range", |r| r.flags.delta_in_range),
        ("chernoff_factor_positive", |r| r.flags.chernoff_factor_positive),
        ("case_slope_positive", |r| r.flags.case_slope_positive),
    ];
    for (name, f) in flags {
        rows.push((name.into(), cells(&|r| f(r).to_string())));
    }
    let header: Vec<String> =
        reports.iter().map(|r| if r.log_base == LogBase::Two { "log2" } else { "ln" }.to_string()).collect();
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_w = rows.iter().flat_map(|r| r.1.iter().map(String::len)).chain(header.iter().map(String::len)).max().unwrap_or(0);
    let mut out = format!("{:name_w$}", "quantity");
    for h in &header {
        out += &format!("  {h:>col_w$}");
    }
    out.push('\n');
    for (name, vals) in rows {
        out += &format!("{name:name_w$}");
        for v in vals {
            out += &format!("  {v:>col_w$}");
        }
        out.push('\n');
    }
    out
}

fn cmd_bounds(path: &Path, delta: Option<f64>, base: BaseArg, c: f64) -> Result<(), CliError> {
    let p = load_params(path)?;
    let delta = delta.unwrap_or(p.delta);
    let reports: Vec<BoundReport> = base.bases().into_iter().map(|b| bound_report(&p, delta, b, c)).collect();
    println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    println!();
    print!("{}", table(&reports));
    Ok(())
}

fn cmd_replay(paths: &[PathBuf]) -> Result<(), CliError> {
    let mut bad = 0;
    for path in paths {
        let read = std::fs::read(path).map_err(|e| e.to_string()).and_then(|b| ExecutionTranscript::from_bytes(&b).map_err(|e| e.to_string()));
        match read {
            Err(e) => {
                bad += 1;
                println!("{}: unreadable: {e}", path.display());
            }
            Ok(t) => {
                let v = audit(&t);
                if v.is_empty() {
                    println!("{}: ok, {} rounds, {}", path.display(), t.rounds.len(), t.hash_hex());
                } else {
                    bad += 1;
                    for x in v {
                        println!("{}: {x}", path.display());
                    }
                }
            }
        }
    }
    match bad {
        0 => Ok(()),
        n => Err(CliError::Violation(format!("{n} of {} transcripts failed", paths.len()))),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { spec, seeds, out_dir, delta, log_base } => {
            configure_workers()?;
            let mut s = ExperimentSpec::load(&spec)?;
            if let Some(seeds) = seeds {
                s.seeds = Seeds::parse_flag(&seeds)?;
            }
            if delta.is_some() {
                s.delta = delta;
            }
            match log_base {
                Some(BaseArg::Both) => return Err(CliError::Config("run takes a single log base".into())),
                Some(b) => s.log_base = b.bases()[0],
                None => {}
            }
            batch::cmd_run(&s, &out_dir)
        }
        Command::Bounds { spec, delta, log_base, block_rate_c } => cmd_bounds(&spec, delta, log_base, block_rate_c),
        Command::Replay { transcripts } => cmd_replay(&transcripts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; 2 is reserved for violations.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
