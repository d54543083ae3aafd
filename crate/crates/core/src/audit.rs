//! Invariant scan over a finished transcript.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::chain::{is_chain_valid, Condition, ValidityContext};
use crate::oracles::{OracleConfig, OracleKind};
use crate::transcript::{ExecutionTranscript, MinedKind, Mode};
use crate::types::{Amount, PartyId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InvalidView { party: PartyId, condition: String },
    Quota { round: u64, party: PartyId, oracle: &'static str, count: u64 },
    CostMismatch { party: PartyId, logged: [u64; 5], reported: [u64; 5] },
    WrongUnitCost { round: u64, party: PartyId, oracle: &'static str },
    PaymentArithmetic { round: u64, leader: PartyId },
    TwoBlocks { round: u64, party: PartyId },
    Divergence { a: PartyId, b: PartyId },
    MirrorMismatch { round: u64, party: PartyId, mirrored: Amount, leader: Amount },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidView { party, condition } => write!(f, "final view of {party} is invalid ({condition})"),
            Violation::Quota { round, party, oracle, count } => {
                write!(f, "round {round}: {party} made {count} {oracle} queries")
            }
            Violation::CostMismatch { party, logged, reported } => {
                write!(f, "{party}: query log counts {logged:?} but final counts {reported:?}")
            }
            Violation::WrongUnitCost { round, party, oracle } => {
                write!(f, "round {round}: {party} was charged a wrong price for {oracle}")
            }
            Violation::PaymentArithmetic { round, leader } => {
                write!(f, "round {round}: payment computed by {leader} does not conserve rewards")
            }
            Violation::TwoBlocks { round, party } => write!(f, "round {round}: {party} mined two blocks"),
            Violation::Divergence { a, b } => write!(f, "honest views of {a} and {b} differ"),
            Violation::MirrorMismatch { round, party, mirrored, leader } => {
                write!(f, "round {round}: {party} mirrored cost {mirrored} but the leader used {leader}")
            }
        }
    }
}

fn condition_name(c: Condition) -> String {
    format!("{c:?}")
}

/// Every check that applies to any transcript, plus view agreement and
/// cost mirroring for deviation-free runs. Honest views need only share
/// the prefix that excludes their last `κ` blocks.
pub fn audit(t: &ExecutionTranscript) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &t.header.params;
    let ctx = ValidityContext::new(t.header.key, p);
    let prices = OracleConfig::from_params(p);
    for f in t.honest_parties() {
        if let Some(c) = is_chain_valid(&ctx, &f.view).failed {
            out.push(Violation::InvalidView { party: f.party, condition: condition_name(c) });
        }
    }

    let mut logged: BTreeMap<PartyId, [u64; 5]> = BTreeMap::new();
    for log in &t.rounds {
        let mut per_round: BTreeMap<PartyId, [u64; 5]> = BTreeMap::new();
        for q in &log.queries {
            per_round.entry(q.party).or_default()[q.oracle.index()] += 1;
            logged.entry(q.party).or_default()[q.oracle.index()] += 1;
            if q.cost != prices.cost(q.oracle) {
                out.push(Violation::WrongUnitCost { round: log.round, party: q.party, oracle: q.oracle.name() });
            }
        }
        for (party, counts) in per_round {
            for k in OracleKind::ALL {
                let quota = prices.quota(k) as u64;
                if counts[k.index()] > quota {
                    out.push(Violation::Quota { round: log.round, party, oracle: k.name(), count: counts[k.index()] });
                }
            }
        }
        let mut blocks: BTreeMap<PartyId, u32> = BTreeMap::new();
        for m in log.events.mined.iter().filter(|m| m.kind == MinedKind::Block) {
            let c = blocks.entry(m.party).or_default();
            *c += 1;
            if *c == 2 {
                out.push(Violation::TwoBlocks { round: log.round, party: m.party });
            }
        }
        for pay in &log.events.payments {
            let c = &pay.computation;
            if c.w_leader + c.w_member.times(c.n as u64 - 1) != c.rew {
                out.push(Violation::PaymentArithmetic { round: log.round, leader: pay.leader });
            }
        }
    }
    for f in &t.finals {
        let l = logged.get(&f.party).copied().unwrap_or_default();
        if l != f.counts {
            out.push(Violation::CostMismatch { party: f.party, logged: l, reported: f.counts });
        }
    }

    if t.header.mode != Mode::StrategyRun {
        let mut honest = t.honest_parties();
        if let Some(first) = honest.next() {
            for other in honest {
                let keep = first.view.blocks.len().min(other.view.blocks.len()).saturating_sub(p.kappa as usize).max(1);
                if first.view.blocks[..keep] != other.view.blocks[..keep] {
                    out.push(Violation::Divergence { a: first.party, b: other.party });
                }
            }
        }
        for log in &t.rounds {
            let Some(pay) = log.events.payments.first() else { continue };
            for c in &log.events.cost_checks {
                if c.mirrored != pay.computation.cost {
                    out.push(Violation::MirrorMismatch {
                        round: log.round,
                        party: c.party,
                        mirrored: c.mirrored,
                        leader: pay.computation.cost,
                    });
                }
            }
        }
    }
    out
}
