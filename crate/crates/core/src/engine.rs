//! The round loop and run statistics.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::adversary::{Strategy, StrategyError};
use crate::network::{AuthChannel, DiffuseBuffer, NetworkError};
use crate::oracles::Oracles;
use crate::protocols::{PartyState, PoolMessage, PoolSpec, ProtocolError, Role, RoundCtx};
use crate::transcript::{
    Delivery, ExecutionTranscript, FinalParty, MinedKind, Mode, RoundEvents, RoundLog, TranscriptHeader,
};
use crate::types::{OracleKey, ParamError, PartyId, ProtocolParams, Transaction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeaderFirst,
    /// Rotating start: round `T` begins with party `(T − 1) mod n`.
    RoundRobin,
}

/// Environment transactions per party per round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxArrival {
    Poisson { lambda: f64 },
    Fixed { count: u32 },
}

impl Default for TxArrival {
    fn default() -> Self {
        TxArrival::Poisson { lambda: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    pub params: ProtocolParams,
    #[serde(default)]
    pub strategy: Strategy,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tx_arrival: TxArrival,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub leader: PartyId,
    /// Run the empty-record leader variant.
    #[serde(default)]
    pub variant_s: bool,
}

impl ExecutionConfig {
    pub fn new(params: ProtocolParams, mode: Mode, strategy: Strategy, seed: u64) -> Self {
        ExecutionConfig {
            params,
            strategy,
            mode,
            seed,
            tx_arrival: TxArrival::default(),
            activation: Activation::LeaderFirst,
            leader: PartyId(0),
            variant_s: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate()?;
        if self.leader.index() >= self.params.n as usize {
            return Err(ConfigError::Leader(self.leader));
        }
        if self.mode == Mode::HonestPool {
            if self.activation != Activation::LeaderFirst {
                return Err(ConfigError::ActivationPolicy);
            }
            if !self.strategy.deviations.is_empty() {
                return Err(ConfigError::DeviationsInHonestMode);
            }
        }
        if let TxArrival::Poisson { lambda } = self.tx_arrival {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(ConfigError::TxArrival);
            }
        }
        self.strategy.validate(&self.params, self.leader)?;
        Ok(())
    }

    fn pooled(&self) -> bool {
        self.mode != Mode::HonestFruit
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("leader {0} is not a party")]
    Leader(PartyId),
    #[error("the honest pool mode needs leader-first activation")]
    ActivationPolicy,
    #[error("the honest pool mode admits reordering only, no deviations")]
    DeviationsInHonestMode,
    #[error("Poisson arrival rate must be positive and finite")]
    TxArrival,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("party program failed: {0}")]
    Protocol(#[from] ProtocolError),
}

/// Independent random stream for `(seed, domain, party, round)`.
pub fn stream(seed: u64, domain: &str, party: PartyId, round: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"fruitpool/stream");
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(party.0.to_le_bytes());
    h.update(round.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn activation_order(cfg: &ExecutionConfig, round: u64) -> Vec<PartyId> {
    let n = cfg.params.n;
    match cfg.activation {
        Activation::LeaderFirst => {
            let mut v = vec![cfg.leader];
            v.extend(cfg.params.parties().filter(|p| *p != cfg.leader));
            v
        }
        Activation::RoundRobin => {
            let start = ((round - 1) % n as u64) as u16;
            (0..n).map(|i| PartyId((start + i) % n)).collect()
        }
    }
}

fn environment_txs(cfg: &ExecutionConfig, party: PartyId, round: u64, next_id: &mut u64) -> Vec<Transaction> {
    let count = match cfg.tx_arrival {
        TxArrival::Fixed { count } => count as u64,
        TxArrival::Poisson { lambda } => {
            let mut rng = stream(cfg.seed, "env", party, round);
            Poisson::new(lambda).expect("validated rate").sample(&mut rng) as u64
        }
    };
    (0..count)
        .map(|_| {
            *next_id += 1;
            Transaction::plain(*next_id)
        })
        .collect()
}

/// Executes `N` rounds of `cfg` and returns the transcript.
pub fn run(cfg: &ExecutionConfig) -> Result<ExecutionTranscript, EngineError> {
    cfg.validate()?;
    let p = &cfg.params;
    let key = OracleKey::from_seed(cfg.seed);
    let mut oracles = Oracles::from_params(p, key);
    let vctx = oracles.context().clone();
    let parties: Vec<PartyId> = p.parties().collect();
    let corrupted: BTreeSet<PartyId> = cfg.strategy.corrupted.clone();
    let leader = cfg.leader;
    let pool = PoolSpec { leader, members: parties.iter().copied().filter(|x| *x != leader).collect() };
    let mut states: Vec<PartyState> = parties
        .iter()
        .map(|&id| {
            let (role, spec) = match (cfg.pooled(), id == leader) {
                (false, _) => (Role::HonestFruit, None),
                (true, true) => (Role::PoolLeader, Some(pool.clone())),
                (true, false) => (Role::PoolMember, Some(pool.clone())),
            };
            let mut st = PartyState::new(id, role, vctx.genesis_chain(), spec);
            st.variant_s = cfg.variant_s;
            st
        })
        .collect();
    let mut net = DiffuseBuffer::new();
    let mut auth: AuthChannel<PoolMessage> =
        if cfg.pooled() { AuthChannel::star(leader, parties.iter().copied()) } else { AuthChannel::default() };
    let switch: BTreeMap<PartyId, u64> = parties
        .iter()
        .filter_map(|&x| cfg.strategy.switch_round(x, leader).map(|r| (x, r)))
        .collect();
    let breakaways = cfg.strategy.breakaways();
    let mut rounds = Vec::with_capacity(p.big_n as usize);
    let mut next_tx = 0u64;

    for t in 1..=p.big_n {
        oracles.begin_round(t);
        net.begin_round(t);
        let mut inboxes = net.deliver(&parties, &corrupted, &cfg.strategy.ordering, &[])?;
        let mut events = RoundEvents::default();
        let mut env_rng = stream(cfg.seed, "env", PartyId::SENTINEL, t);

        if cfg.pooled() {
            for (start, away) in &breakaways {
                if *start != t {
                    continue;
                }
                for m in &away.members {
                    auth.add_edge(away.leader, *m);
                }
                for x in away.parties() {
                    let mut ctx = RoundCtx {
                        round: t,
                        params: p,
                        oracles: &mut oracles,
                        net: &mut net,
                        auth: &mut auth,
                        rng: &mut env_rng,
                        events: &mut events,
                        corrupted: &corrupted,
                    };
                    states[x.index()].join_breakaway(away.spec(), &mut ctx);
                }
            }
            for (&x, &r) in &switch {
                if r == t {
                    let mut ctx = RoundCtx {
                        round: t,
                        params: p,
                        oracles: &mut oracles,
                        net: &mut net,
                        auth: &mut auth,
                        rng: &mut env_rng,
                        events: &mut events,
                        corrupted: &corrupted,
                    };
                    states[x.index()].abandon(&mut ctx);
                }
            }
        }

        let order = activation_order(cfg, t);
        let mut deliveries = Vec::with_capacity(parties.len());
        for &x in &order {
            let inbox = inboxes.remove(&x).unwrap_or_default();
            deliveries.push(Delivery { party: x, arrivals: inbox.arrivals.clone() });
            let txs = environment_txs(cfg, x, t, &mut next_tx);
            let beh = cfg.strategy.behavior(x, t, leader);
            let mut rng = stream(cfg.seed, "nonce", x, t);
            let mut ctx = RoundCtx {
                round: t,
                params: p,
                oracles: &mut oracles,
                net: &mut net,
                auth: &mut auth,
                rng: &mut rng,
                events: &mut events,
                corrupted: &corrupted,
            };
            states[x.index()].step(&txs, &inbox, &beh, &mut ctx)?;
        }
        auth.end_round();
        rounds.push(RoundLog {
            round: t,
            activations: order,
            deliveries,
            queries: oracles.take_log(),
            diffusals: net.take_log(),
            auth: auth.take_log(),
            events,
            affiliations: states.iter().map(|s| s.affiliation()).collect(),
        });
    }

    let finals = states
        .iter()
        .map(|s| FinalParty {
            party: s.id,
            honest: !corrupted.contains(&s.id),
            affiliation: s.affiliation(),
            view: s.final_view(&vctx),
            counts: oracles.cost_ledger().counts(s.id),
        })
        .collect();
    Ok(ExecutionTranscript {
        header: TranscriptHeader {
            seed: cfg.seed,
            mode: cfg.mode,
            params: p.clone(),
            key,
            leader: cfg.pooled().then_some(leader),
            corrupted: corrupted.into_iter().collect(),
            variant_s: cfg.variant_s,
            strategy_name: cfg.strategy.name.clone(),
        },
        rounds,
        finals,
    })
}

/// Counts taken from a transcript.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Statistics {
    /// Fruits mined (`Z`).
    pub fruits_mined: u64,
    pub blocks_mined: u64,
    /// Rounds in which a payment was made.
    pub payment_rounds: u64,
    /// Rounds in which at least one block was mined (`W`).
    pub block_rounds: u64,
    /// Last round with a mined block (`r₀`), 0 if none.
    pub last_block_round: u64,
    pub queries: BTreeMap<PartyId, [u64; 5]>,
}

pub fn measure_statistics(t: &ExecutionTranscript) -> Statistics {
    measure_statistics_in(t, 1, u64::MAX)
}

/// Statistics over rounds `from..=to`, e.g. the two sides of a switch round.
pub fn measure_statistics_in(t: &ExecutionTranscript, from: u64, to: u64) -> Statistics {
    let mut s = Statistics::default();
    for r in t.rounds.iter().filter(|r| r.round >= from && r.round <= to) {
        let fruits = r.events.mined.iter().filter(|m| m.kind == MinedKind::Fruit).count() as u64;
        let blocks = r.events.mined.len() as u64 - fruits;
        s.fruits_mined += fruits;
        s.blocks_mined += blocks;
        if blocks > 0 {
            s.block_rounds += 1;
            s.last_block_round = r.round;
        }
        if !r.events.payments.is_empty() {
            s.payment_rounds += 1;
        }
        for q in &r.queries {
            s.queries.entry(q.party).or_insert([0; 5])[q.oracle.index()] += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::h_c_adversary;
    use crate::oracles::OracleKind;
    use crate::testutil::small_params;

    fn config(mode: Mode, seed: u64) -> ExecutionConfig {
        ExecutionConfig::new(small_params(), mode, Strategy::default(), seed)
    }

    #[test]
    fn same_config_same_hash() {
        for mode in [Mode::HonestPool, Mode::HonestFruit] {
            let cfg = config(mode, 5);
            assert_eq!(run(&cfg).unwrap().hash_hex(), run(&cfg).unwrap().hash_hex());
        }
        assert_ne!(run(&config(Mode::HonestPool, 5)).unwrap().hash_hex(), run(&config(Mode::HonestPool, 6)).unwrap().hash_hex());
    }

    #[test]
    fn one_round_quota_arithmetic() {
        let mut cfg = config(Mode::HonestFruit, 1);
        cfg.params.n = 2;
        cfg.params.big_n = 1;
        let t = run(&cfg).unwrap();
        let s = measure_statistics(&t);
        let ro: u64 = s.queries.values().map(|c| c[OracleKind::Ro.index()]).sum();
        assert_eq!(ro, 2 * cfg.params.q as u64);
    }

    #[test]
    fn honest_pool_needs_leader_first() {
        let mut cfg = config(Mode::HonestPool, 1);
        cfg.activation = Activation::RoundRobin;
        assert_eq!(cfg.validate(), Err(ConfigError::ActivationPolicy));
    }

    #[test]
    fn round_robin_rotates() {
        let mut cfg = config(Mode::StrategyRun, 1);
        cfg.activation = Activation::RoundRobin;
        assert_eq!(activation_order(&cfg, 1), vec![PartyId(0), PartyId(1), PartyId(2)]);
        assert_eq!(activation_order(&cfg, 2), vec![PartyId(1), PartyId(2), PartyId(0)]);
    }

    #[test]
    fn streams_are_independent_of_other_parties() {
        use rand::RngCore;
        let a = stream(1, "nonce", PartyId(1), 3).next_u64();
        assert_eq!(a, stream(1, "nonce", PartyId(1), 3).next_u64());
        assert_ne!(a, stream(1, "nonce", PartyId(2), 3).next_u64());
        assert_ne!(a, stream(1, "env", PartyId(1), 3).next_u64());
    }

    #[test]
    fn statistics_count_block_rounds() {
        let t = run(&config(Mode::HonestFruit, 3)).unwrap();
        let s = measure_statistics(&t);
        let by_hand = t.rounds.iter().filter(|r| r.events.mined.iter().any(|m| m.kind == MinedKind::Block)).count();
        assert_eq!(s.block_rounds, by_hand as u64);
        let (a, b) = (measure_statistics_in(&t, 1, 10), measure_statistics_in(&t, 11, u64::MAX));
        assert_eq!(a.fruits_mined + b.fruits_mined, s.fruits_mined);
    }

    #[test]
    fn honest_reordering_is_allowed_in_pool_mode() {
        let mut cfg = config(Mode::HonestPool, 2);
        cfg.strategy = h_c_adversary([PartyId(1)].into());
        assert!(run(&cfg).is_ok());
    }
}
