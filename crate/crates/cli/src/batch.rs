//! The `run` subcommand: every (strategy, seed) pair, compared against `H_C`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use fruitpool::accounting::{u_min_max, PartyProfit, RewardOptions, UtilityReport};
use fruitpool::adversary::{h_c_adversary, Strategy};
use fruitpool::analysis::{bound_report, evp_verdict_exact, BoundReport};
use fruitpool::audit::{audit, Violation};
use fruitpool::engine::{measure_statistics, run, EngineError, ExecutionConfig, Statistics};
use fruitpool::transcript::{ExecutionTranscript, ExitReason};
use fruitpool::types::{Amount, PartyId};
use rayon::prelude::*;
use serde::Serialize;

use crate::spec::ExperimentSpec;
use crate::CliError;

/// Column order of the batch CSV.
pub const CSV_COLUMNS: [&str; 13] = [
    "strategy",
    "seed",
    "coalition",
    "u_min",
    "u_max",
    "baseline_u_min",
    "epsilon_prime",
    "z",
    "w",
    "payment_rounds",
    "exits",
    "audit_clean",
    "evp",
];

#[derive(Clone, Debug, Serialize)]
struct ExitEntry {
    round: u64,
    party: PartyId,
    reason: ExitReason,
}

struct Outcome {
    hash: String,
    utility: UtilityReport,
    stats: Statistics,
    exits: Vec<ExitEntry>,
    violations: Vec<Violation>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    strategy: &'a str,
    seed: u64,
    coalition: &'a BTreeSet<PartyId>,
    transcript: String,
    transcript_hash: &'a str,
    u_min: Amount,
    u_max: Amount,
    baseline_u_min: Amount,
    evp: bool,
    /// Per party, in the honest view with the smallest coalition utility.
    per_party: &'a BTreeMap<PartyId, PartyProfit>,
    statistics: &'a Statistics,
    exits: &'a [ExitEntry],
    violations: &'a [Violation],
}

#[derive(Serialize)]
struct Failure {
    strategy: String,
    seed: u64,
    u_max: Amount,
    baseline_u_min: Amount,
}

#[derive(Serialize)]
struct Verdict {
    epsilon: f64,
    epsilon_prime: f64,
    bounds: BoundReport,
    runs: usize,
    runs_with_violations: usize,
    evp_failures: Vec<Failure>,
    pass: bool,
}

/// Strategy contents without the display name, to share baseline runs.
fn content_key(s: &Strategy) -> String {
    let mut s = s.clone();
    s.name.clear();
    serde_json::to_string(&s).expect("strategies serialize")
}

fn file_stem(name: &str, seed: u64) -> String {
    let clean: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{clean}-{seed}")
}

fn execute(
    cfg: &ExecutionConfig,
    coalition: &BTreeSet<PartyId>,
    opts: RewardOptions,
) -> Result<(ExecutionTranscript, Outcome), EngineError> {
    let t = run(cfg)?;
    let utility = u_min_max(&t, coalition, opts).unwrap_or_else(|_| UtilityReport {
        views: Vec::new(),
        u_min: Amount::ZERO,
        u_max: Amount::ZERO,
    });
    let exits = t
        .rounds
        .iter()
        .flat_map(|r| r.events.exits.iter().map(move |e| ExitEntry { round: r.round, party: e.party, reason: e.reason }))
        .collect();
    let o = Outcome { hash: t.hash_hex(), utility, stats: measure_statistics(&t), exits, violations: audit(&t) };
    Ok((t, o))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_run(spec: &ExperimentSpec, out_dir: &Path) -> Result<(), CliError> {
    spec.check()?;
    let dirs: Vec<PathBuf> = [&spec.outputs.transcripts, &spec.outputs.runs].iter().map(|d| out_dir.join(d)).collect();
    for d in std::iter::once(&out_dir.to_path_buf()).chain(&dirs) {
        fs::create_dir_all(d).map_err(|e| CliError::Config(format!("cannot create {}: {e}", d.display())))?;
    }
    let seeds = spec.seeds.expand();
    let suite = spec.strategies();

    // Distinct strategy contents to run, suite entries first.
    let mut distinct: Vec<(String, Strategy)> = Vec::new();
    for s in suite.iter().cloned().chain(suite.iter().map(|s| h_c_adversary(s.corrupted.clone()))) {
        let key = content_key(&s);
        if !distinct.iter().any(|(k, _)| *k == key) {
            distinct.push((key, s));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..distinct.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<Outcome, CliError>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let strategy = distinct[i].1.clone();
            let coalition = strategy.corrupted.clone();
            let cfg = ExecutionConfig { strategy, seed, ..spec.base.clone() };
            let (t, o) = execute(&cfg, &coalition, spec.rewards).map_err(|e| CliError::Violation(format!("seed {seed}: {e}")))?;
            if let Some(entry) = suite.iter().find(|s| content_key(s) == distinct[i].0) {
                let path = out_dir.join(&spec.outputs.transcripts).join(format!("{}.bin", file_stem(&entry.name, seed)));
                write(&path, &t.to_bytes())?;
            }
            Ok(o)
        })
        .collect();
    let mut outcomes: BTreeMap<(String, u64), Outcome> = BTreeMap::new();
    for (&(i, seed), r) in jobs.iter().zip(results) {
        outcomes.insert((distinct[i].0.clone(), seed), r?);
    }

    let bounds = bound_report(&spec.base.params, spec.delta(), spec.log_base, spec.block_rate_c);
    let eps_prime = bounds.epsilon_prime;
    let mut rows: Vec<(String, u64, Vec<String>)> = Vec::new();
    let mut failures = Vec::new();
    let mut violated = 0;
    for s in &suite {
        let baseline_key = content_key(&h_c_adversary(s.corrupted.clone()));
        for &seed in &seeds {
            let o = &outcomes[&(content_key(s), seed)];
            let base_min = outcomes[&(baseline_key.clone(), seed)].utility.u_min;
            let evp = evp_verdict_exact(o.utility.u_max, base_min, spec.epsilon, eps_prime);
            if !evp {
                failures.push(Failure { strategy: s.name.clone(), seed, u_max: o.utility.u_max, baseline_u_min: base_min });
            }
            violated += !o.violations.is_empty() as usize;
            let stem = file_stem(&s.name, seed);
            let per_party = o
                .utility
                .views
                .iter()
                .min_by_key(|v| v.coalition)
                .map(|v| v.per_party.clone())
                .unwrap_or_default();
            let summary = RunSummary {
                strategy: &s.name,
                seed,
                coalition: &s.corrupted,
                transcript: format!("{}/{stem}.bin", spec.outputs.transcripts),
                transcript_hash: &o.hash,
                u_min: o.utility.u_min,
                u_max: o.utility.u_max,
                baseline_u_min: base_min,
                evp,
                per_party: &per_party,
                statistics: &o.stats,
                exits: &o.exits,
                violations: &o.violations,
            };
            let json = serde_json::to_vec_pretty(&summary).expect("summaries serialize");
            write(&out_dir.join(&spec.outputs.runs).join(format!("{stem}.json")), &json)?;
            let coalition: Vec<String> = s.corrupted.iter().map(|p| p.0.to_string()).collect();
            rows.push((
                s.name.clone(),
                seed,
                vec![
                    s.name.clone(),
                    seed.to_string(),
                    coalition.join(" "),
                    o.utility.u_min.to_decimal(6),
                    o.utility.u_max.to_decimal(6),
                    base_min.to_decimal(6),
                    format!("{eps_prime:.6}"),
                    o.stats.fruits_mined.to_string(),
                    o.stats.block_rounds.to_string(),
                    o.stats.payment_rounds.to_string(),
                    o.exits.len().to_string(),
                    o.violations.is_empty().to_string(),
                    evp.to_string(),
                ],
            ));
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(CSV_COLUMNS).and_then(|_| rows.iter().try_for_each(|r| csv.write_record(&r.2))).expect("in-memory csv");
    write(&out_dir.join(&spec.outputs.csv), &csv.into_inner().expect("in-memory csv"))?;

    let verdict = Verdict {
        epsilon: spec.epsilon,
        epsilon_prime: eps_prime,
        bounds,
        runs: rows.len(),
        runs_with_violations: violated,
        pass: failures.is_empty() && violated == 0,
        evp_failures: failures,
    };
    write(&out_dir.join(&spec.outputs.verdict), &serde_json::to_vec_pretty(&verdict).expect("verdict serializes"))?;
    println!(
        "{} runs, {} with violations, {} verdict failures, epsilon' = {eps_prime:.6}",
        verdict.runs,
        violated,
        verdict.evp_failures.len()
    );
    if violated > 0 {
        Err(CliError::Violation(format!("{violated} runs violated an invariant")))
    } else if !verdict.evp_failures.is_empty() {
        Err(CliError::Evp(verdict.evp_failures.len()))
    } else {
        Ok(())
    }
}
