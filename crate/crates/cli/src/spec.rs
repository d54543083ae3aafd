//! Experiment spec files.

use std::path::Path;

use fruitpool::accounting::RewardOptions;
use fruitpool::adversary::Strategy;
use fruitpool::analysis::LogBase;
use fruitpool::engine::ExecutionConfig;
use fruitpool::types::ProtocolParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }

    /// `a..b`, a single seed, or a comma-separated list.
    pub fn parse_flag(s: &str) -> Result<Seeds, CliError> {
        let bad = || CliError::Config(format!("--seeds: cannot read {s:?}; use a..b, n or a,b,c"));
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b <= a {
                return Err(bad());
            }
            return Ok(Seeds::Range { start: a, count: b - a });
        }
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>().map(Seeds::List)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_transcripts")]
    pub transcripts: String,
    #[serde(default = "default_runs")]
    pub runs: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_verdict")]
    pub verdict: String,
}

fn default_transcripts() -> String {
    "transcripts".into()
}
fn default_runs() -> String {
    "runs".into()
}
fn default_csv() -> String {
    "summary.csv".into()
}
fn default_verdict() -> String {
    "verdict.json".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { transcripts: default_transcripts(), runs: default_runs(), csv: default_csv(), verdict: default_verdict() }
    }
}

/// A base configuration, the seeds to run, and the strategies to compare.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: ExecutionConfig,
    pub seeds: Seeds,
    /// Empty means the base strategy alone.
    #[serde(default)]
    pub suite: Vec<Strategy>,
    #[serde(default)]
    pub rewards: RewardOptions,
    /// Relative slack `ε` of the verdict.
    #[serde(default)]
    pub epsilon: f64,
    pub delta: Option<f64>,
    #[serde(default)]
    pub log_base: LogBase,
    /// Constant `c` in `p_b ≥ c/(nq)`.
    #[serde(default = "default_block_rate_c")]
    pub block_rate_c: f64,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_block_rate_c() -> f64 {
    1.0
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn diagnostic(path: &Path, e: toml::de::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()).trim_end().to_string())
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let spec: ExperimentSpec = toml::from_str(&read(path)?).map_err(|e| diagnostic(path, e))?;
        Ok(spec)
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        if self.suite.is_empty() {
            vec![self.base.strategy.clone()]
        } else {
            self.suite.clone()
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.base.params.delta)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.seeds.expand().is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CliError::Config("epsilon must be a non-negative number".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in self.strategies() {
            if !names.insert(s.name.clone()) {
                return Err(CliError::Config(format!("strategy name {:?} appears twice in the suite", s.name)));
            }
            let cfg = ExecutionConfig { strategy: s.clone(), ..self.base.clone() };
            cfg.validate().map_err(|e| CliError::Config(format!("strategy {:?}: {e}", s.name)))?;
        }
        Ok(())
    }
}

/// Parameters from a bare parameter table, a `[params]` table, or a spec's `[base.params]`.
pub fn load_params(path: &Path) -> Result<ProtocolParams, CliError> {
    let text = read(path)?;
    let doc: toml::Table = text.parse().map_err(|e| diagnostic(path, e))?;
    let table = match (doc.get("base").and_then(|b| b.get("params")), doc.get("params")) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => toml::Value::Table(doc),
    };
    let p: ProtocolParams =
        table.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
    p.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_flags() {
        assert_eq!(Seeds::parse_flag("3..6").unwrap().expand(), vec![3, 4, 5]);
        assert_eq!(Seeds::parse_flag("7").unwrap().expand(), vec![7]);
        assert_eq!(Seeds::parse_flag("1, 4,9").unwrap().expand(), vec![1, 4, 9]);
        assert!(Seeds::parse_flag("5..5").is_err());
        assert!(Seeds::parse_flag("x").is_err());
    }

    #[test]
    fn seeds_in_either_shape() {
        #[derive(Deserialize)]
        struct S {
            seeds: Seeds,
        }
        let a: S = toml::from_str("seeds = [2, 3]").unwrap();
        let b: S = toml::from_str("seeds = { start = 2, count = 2 }").unwrap();
        assert_eq!(a.seeds.expand(), b.seeds.expand());
    }
}
