//! Adversary strategies: the message-reordering adversary, deviations D1 to
//! D12, their composition, and the transaction-oracle coverage check.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::OrderingPolicy;
use crate::oracles::OracleKind;
use crate::protocols::{Behavior, ObjectFilter, PoolSpec, TamperRecipe};
use crate::transcript::{Affiliation, ExecutionTranscript};
use crate::types::{Amount, PartyId, ProtocolParams};

/// Inclusive round interval; `to = None` runs to the end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRange {
    #[serde(default = "one")]
    pub from: u64,
    #[serde(default)]
    pub to: Option<u64>,
}

fn one() -> u64 {
    1
}

impl Default for RoundRange {
    fn default() -> Self {
        RoundRange::ALL
    }
}

impl RoundRange {
    pub const ALL: RoundRange = RoundRange { from: 1, to: None };

    pub fn starting(r: u64) -> Self {
        RoundRange { from: r, to: None }
    }

    pub fn between(from: u64, to: u64) -> Self {
        RoundRange { from, to: Some(to) }
    }

    pub fn contains(&self, round: u64) -> bool {
        round >= self.from && self.to.is_none_or(|t| round <= t)
    }

    pub fn overlaps(&self, other: &RoundRange) -> bool {
        let end = |r: &RoundRange| r.to.unwrap_or(u64::MAX);
        self.from <= end(other) && other.from <= end(self)
    }
}

/// A breakaway pool formed by corrupted parties.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakaway {
    pub leader: PartyId,
    pub members: Vec<PartyId>,
    /// Fraction of the honest share `W` the sub-leader pays each member.
    #[serde(default = "full_share")]
    pub member_share: Amount,
}

fn full_share() -> Amount {
    Amount::from_int(1)
}

impl Breakaway {
    pub fn parties(&self) -> impl Iterator<Item = PartyId> + '_ {
        std::iter::once(self.leader).chain(self.members.iter().copied())
    }

    pub fn spec(&self) -> PoolSpec {
        PoolSpec { leader: self.leader, members: self.members.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Deviation {
    /// Replace the leader's instance.
    D1 { recipe: TamperRecipe },
    /// Skip the light transaction check.
    D2,
    /// Fewer random-oracle queries per round.
    D3 { budget: u32 },
    /// Never diffuse own objects.
    D4 { filter: ObjectFilter },
    /// Diffuse own objects `delay` rounds late.
    D5 { filter: ObjectFilter, delay: u64 },
    /// Leave for a breakaway pool at the first round of the range.
    D6 { breakaway: Breakaway },
    /// Stay in the pool on mismatching objects.
    D7,
    /// Abandon the pool and mine solo from round `r_star` on.
    D8 { r_star: u64 },
    D9,
    D10,
    D11,
    /// Pay members outside the coalition this fraction of `W`.
    D12 { fraction: Amount },
    /// Diffuse, and send pool messages, only to these recipients. Not part
    /// of D1 to D12.
    Selective { recipients: Vec<PartyId> },
}

impl Deviation {
    pub fn label(&self) -> &'static str {
        match self {
            Deviation::D1 { .. } => "D1",
            Deviation::D2 => "D2",
            Deviation::D3 { .. } => "D3",
            Deviation::D4 { .. } => "D4",
            Deviation::D5 { .. } => "D5",
            Deviation::D6 { .. } => "D6",
            Deviation::D7 => "D7",
            Deviation::D8 { .. } => "D8",
            Deviation::D9 => "D9",
            Deviation::D10 => "D10",
            Deviation::D11 => "D11",
            Deviation::D12 { .. } => "D12",
            Deviation::Selective { .. } => "selective",
        }
    }

    fn leader_only(&self) -> bool {
        matches!(self, Deviation::D9 | Deviation::D10 | Deviation::D11 | Deviation::D12 { .. })
    }

    fn members_only(&self) -> bool {
        matches!(self, Deviation::D1 { .. } | Deviation::D2)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationEntry {
    #[serde(flatten)]
    pub deviation: Deviation,
    #[serde(default)]
    pub rounds: RoundRange,
    /// Empty means every corrupted party the deviation applies to.
    #[serde(default)]
    pub parties: Vec<PartyId>,
}

impl DeviationEntry {
    pub fn new(deviation: Deviation, rounds: RoundRange, parties: Vec<PartyId>) -> Self {
        DeviationEntry { deviation, rounds, parties }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    #[serde(default)]
    pub name: String,
    pub corrupted: BTreeSet<PartyId>,
    #[serde(default)]
    pub deviations: Vec<DeviationEntry>,
    #[serde(default)]
    pub ordering: OrderingPolicy,
    /// Largest allowed D5 delay.
    #[serde(default = "default_horizon")]
    pub delay_horizon: u64,
}

fn default_horizon() -> u64 {
    64
}

impl Default for Strategy {
    /// No corruption, canonical delivery.
    fn default() -> Self {
        Strategy {
            name: "honest".into(),
            corrupted: BTreeSet::new(),
            deviations: Vec::new(),
            ordering: OrderingPolicy::Canonical,
            delay_horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("at most n-1 = {max} parties may be corrupted, got {got}")]
    TooManyCorrupted { max: usize, got: usize },
    #[error("party {0} is not a party of the protocol")]
    UnknownParty(PartyId),
    #[error("{tag} targets party {party}, which is not corrupted")]
    NotCorrupted { tag: &'static str, party: PartyId },
    #[error("{0} needs the pool leader in the coalition")]
    LeaderOnly(&'static str),
    #[error("{0} applies only to non-leader parties")]
    MembersOnly(&'static str),
    #[error("D3 budget {budget} exceeds q = {q}")]
    Budget { budget: u32, q: u32 },
    #[error("D5 delay {delay} outside 1..={horizon}")]
    Delay { delay: u64, horizon: u64 },
    #[error("D8 round {0} outside 1..=N")]
    SwitchRound(u64),
    #[error("D6 breakaway must contain only corrupted parties and at least two of them")]
    Breakaway,
    #[error("invalid composition of {a} and {b} for party {party}: {reason}")]
    InvalidComposition { a: &'static str, b: &'static str, party: PartyId, reason: &'static str },
}

/// The adversary that follows the protocol but delivers its messages first.
pub fn h_c_adversary(corrupted: BTreeSet<PartyId>) -> Strategy {
    Strategy {
        name: "H_C".into(),
        corrupted,
        deviations: Vec::new(),
        ordering: OrderingPolicy::AdversaryFirst,
        delay_horizon: default_horizon(),
    }
}

/// Under-query (`budget` per party per round), skip the light check, and
/// switch to solo mining at `r_star`.
pub fn claim2_strategy(corrupted: BTreeSet<PartyId>, r_star: u64, budget: u32) -> Strategy {
    let mut s = h_c_adversary(corrupted);
    s.name = format!("claim2(r*={r_star},Q'={budget})");
    s.deviations = vec![
        DeviationEntry::new(Deviation::D2, RoundRange::ALL, vec![]),
        DeviationEntry::new(Deviation::D3 { budget }, RoundRange::ALL, vec![]),
        DeviationEntry::new(Deviation::D8 { r_star }, RoundRange::ALL, vec![]),
    ];
    s
}

impl Strategy {
    pub fn includes_leader(&self, leader: PartyId) -> bool {
        self.corrupted.contains(&leader)
    }

    pub fn with(mut self, deviation: Deviation, rounds: RoundRange, parties: Vec<PartyId>) -> Self {
        self.deviations.push(DeviationEntry::new(deviation, rounds, parties));
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Parties an entry applies to.
    pub fn targets(&self, e: &DeviationEntry, leader: PartyId) -> Vec<PartyId> {
        if !e.parties.is_empty() {
            return e.parties.clone();
        }
        let d = &e.deviation;
        match d {
            Deviation::D6 { breakaway } => breakaway.parties().collect(),
            _ if d.leader_only() => vec![leader],
            _ if d.members_only() => self.corrupted.iter().copied().filter(|p| *p != leader).collect(),
            _ => self.corrupted.iter().copied().collect(),
        }
    }

    /// Round from which `party` mines solo because of D8, if any.
    pub fn switch_round(&self, party: PartyId, leader: PartyId) -> Option<u64> {
        self.deviations
            .iter()
            .filter_map(|e| match e.deviation {
                Deviation::D8 { r_star } if self.targets(e, leader).contains(&party) => Some(r_star),
                _ => None,
            })
            .min()
    }

    /// D6 entries with their start rounds.
    pub fn breakaways(&self) -> Vec<(u64, &Breakaway)> {
        self.deviations
            .iter()
            .filter_map(|e| match &e.deviation {
                Deviation::D6 { breakaway } => Some((e.rounds.from, breakaway)),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self, params: &ProtocolParams, leader: PartyId) -> Result<(), StrategyError> {
        let n = params.n as usize;
        if self.corrupted.len() > n - 1 {
            return Err(StrategyError::TooManyCorrupted { max: n - 1, got: self.corrupted.len() });
        }
        if let Some(p) = self.corrupted.iter().find(|p| p.index() >= n) {
            return Err(StrategyError::UnknownParty(*p));
        }
        let has_leader = self.includes_leader(leader);
        for e in &self.deviations {
            let d = &e.deviation;
            let tag = d.label();
            if d.leader_only() && !has_leader {
                return Err(StrategyError::LeaderOnly(tag));
            }
            for p in self.targets(e, leader) {
                if !self.corrupted.contains(&p) {
                    return Err(StrategyError::NotCorrupted { tag, party: p });
                }
                if d.members_only() && p == leader {
                    return Err(StrategyError::MembersOnly(tag));
                }
                if d.leader_only() && p != leader {
                    return Err(StrategyError::LeaderOnly(tag));
                }
            }
            match d {
                Deviation::D3 { budget } if *budget > params.q => {
                    return Err(StrategyError::Budget { budget: *budget, q: params.q })
                }
                Deviation::D5 { delay, .. } if *delay < 1 || *delay > self.delay_horizon => {
                    return Err(StrategyError::Delay { delay: *delay, horizon: self.delay_horizon })
                }
                Deviation::D8 { r_star } if *r_star < 1 || *r_star > params.big_n => {
                    return Err(StrategyError::SwitchRound(*r_star))
                }
                Deviation::D6 { breakaway } => {
                    let ps: BTreeSet<PartyId> = breakaway.parties().collect();
                    if ps.len() < 2 || ps.len() != breakaway.members.len() + 1 || !ps.is_subset(&self.corrupted) {
                        return Err(StrategyError::Breakaway);
                    }
                }
                _ => {}
            }
        }
        self.check_composition(leader)
    }

    fn check_composition(&self, leader: PartyId) -> Result<(), StrategyError> {
        let entries: Vec<(&DeviationEntry, Vec<PartyId>)> =
            self.deviations.iter().map(|e| (e, self.targets(e, leader))).collect();
        for (i, (a, pa)) in entries.iter().enumerate() {
            for (b, pb) in &entries[i + 1..] {
                let Some(&party) = pa.iter().find(|p| pb.contains(p)) else {
                    continue;
                };
                let (da, db) = (&a.deviation, &b.deviation);
                let err = |reason| StrategyError::InvalidComposition { a: da.label(), b: db.label(), party, reason };
                // Whole-run conflicts first.
                match (da, db) {
                    (Deviation::D6 { .. }, Deviation::D8 { .. }) | (Deviation::D8 { .. }, Deviation::D6 { .. }) => {
                        return Err(err("a party cannot both join a breakaway pool and mine solo"))
                    }
                    (Deviation::D7, Deviation::D8 { r_star }) | (Deviation::D8 { r_star }, Deviation::D7) => {
                        let d7 = if matches!(da, Deviation::D7) { a } else { b };
                        if d7.rounds.overlaps(&RoundRange::starting(*r_star)) {
                            return Err(err("ignoring exits is meaningless once the party has left"));
                        }
                        continue;
                    }
                    _ => {}
                }
                if !a.rounds.overlaps(&b.rounds) {
                    continue;
                }
                match (da, db) {
                    (Deviation::D3 { budget: x }, Deviation::D3 { budget: y }) if x != y => {
                        return Err(err("two different query budgets"))
                    }
                    (Deviation::D4 { filter: x }, Deviation::D5 { filter: y, .. })
                    | (Deviation::D5 { filter: y, .. }, Deviation::D4 { filter: x })
                        if x.overlaps(*y) =>
                    {
                        return Err(err("an object cannot be both withheld and delayed"))
                    }
                    (Deviation::D4 { filter: x }, Deviation::D4 { filter: y }) if x != y => {
                        return Err(err("two different withholding filters"))
                    }
                    (Deviation::D5 { filter: x, delay: s }, Deviation::D5 { filter: y, delay: t })
                        if x.overlaps(*y) && (s != t || x != y) =>
                    {
                        return Err(err("two different delays for the same objects"))
                    }
                    (Deviation::D1 { recipe: x }, Deviation::D1 { recipe: y }) if x != y => {
                        return Err(err("two different instance replacements"))
                    }
                    (Deviation::D12 { fraction: x }, Deviation::D12 { fraction: y }) if x != y => {
                        return Err(err("two different underpayment fractions"))
                    }
                    (Deviation::Selective { recipients: x }, Deviation::Selective { recipients: y }) if x != y => {
                        return Err(err("two different recipient lists"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// The behaviour knobs of `party` in `round`. Assumes [`Strategy::validate`] passed.
    pub fn behavior(&self, party: PartyId, round: u64, leader: PartyId) -> Behavior {
        let mut b = Behavior::default();
        if !self.corrupted.contains(&party) {
            return b;
        }
        for e in &self.deviations {
            let targets = self.targets(e, leader);
            if !targets.contains(&party) {
                continue;
            }
            // Pool membership changes are permanent once triggered.
            if let Deviation::D6 { breakaway } = &e.deviation {
                if round >= e.rounds.from {
                    b.ignore_exit = true;
                    if breakaway.leader == party {
                        b.member_share = Some(breakaway.member_share.0);
                    }
                }
                continue;
            }
            if !e.rounds.contains(round) {
                continue;
            }
            match &e.deviation {
                Deviation::D1 { recipe } => b.tamper = Some(recipe.clone()),
                Deviation::D2 => b.skip_ltx = true,
                Deviation::D3 { budget } => b.ro_budget = Some(*budget),
                Deviation::D4 { filter } => b.withhold = Some(*filter),
                Deviation::D5 { filter, delay } => b.delay = Some((*filter, *delay)),
                Deviation::D7 => b.ignore_exit = true,
                Deviation::D8 { .. } | Deviation::D6 { .. } => {}
                Deviation::D9 => b.skip_fs = true,
                Deviation::D10 => b.skip_tx = true,
                Deviation::D11 => b.skip_lc = true,
                Deviation::D12 { fraction } => b.underpay = Some(fraction.0),
                Deviation::Selective { recipients } => b.recipients = Some(recipients.clone()),
            }
        }
        b
    }
}

/// Behaviour of `party` in `round` under `strategy`.
pub fn apply_deviation(strategy: &Strategy, party: PartyId, round: u64, leader: PartyId) -> Behavior {
    strategy.behavior(party, round, leader)
}

/// True iff in every round every pool and every solo party contains some
/// party that queried the transaction oracle.
pub fn is_otx_respecting(t: &ExecutionTranscript) -> bool {
    t.rounds.iter().all(|r| {
        let queried: BTreeSet<PartyId> =
            r.queries.iter().filter(|q| q.oracle == OracleKind::Tx).map(|q| q.party).collect();
        let mut groups: BTreeMap<Affiliation, bool> = BTreeMap::new();
        for (i, a) in r.affiliations.iter().enumerate() {
            let p = PartyId(i as u16);
            let key = match a {
                Affiliation::Solo => Affiliation::Pool(p),
                pool => *pool,
            };
            *groups.entry(key).or_insert(false) |= queried.contains(&p);
        }
        groups.values().all(|&v| v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::InstanceField;
    use crate::testutil::small_params;

    fn c(ids: &[u16]) -> BTreeSet<PartyId> {
        ids.iter().map(|&i| PartyId(i)).collect()
    }

    const L: PartyId = PartyId(0);

    #[test]
    fn honest_adversary_has_no_deviations() {
        let s = h_c_adversary(c(&[1]));
        assert!(s.deviations.is_empty());
        assert_eq!(s.ordering, OrderingPolicy::AdversaryFirst);
        assert_eq!(s.behavior(PartyId(1), 5, L), Behavior::default());
    }

    #[test]
    fn leader_deviations_need_leader() {
        let p = small_params();
        let s = h_c_adversary(c(&[1, 2])).with(Deviation::D10, RoundRange::ALL, vec![]);
        assert_eq!(s.validate(&p, L), Err(StrategyError::LeaderOnly("D10")));
        let s = h_c_adversary(c(&[0, 1])).with(Deviation::D10, RoundRange::ALL, vec![]);
        assert!(s.validate(&p, L).is_ok());
        assert!(s.behavior(L, 1, L).skip_tx);
        assert!(!s.behavior(PartyId(1), 1, L).skip_tx);
    }

    #[test]
    fn member_deviations_exclude_leader() {
        let p = small_params();
        let s = h_c_adversary(c(&[0, 1])).with(Deviation::D2, RoundRange::ALL, vec![L]);
        assert_eq!(s.validate(&p, L), Err(StrategyError::MembersOnly("D2")));
        let s = h_c_adversary(c(&[0, 1])).with(Deviation::D2, RoundRange::ALL, vec![]);
        assert!(s.validate(&p, L).is_ok());
        assert!(!s.behavior(L, 1, L).skip_ltx);
        assert!(s.behavior(PartyId(1), 1, L).skip_ltx);
    }

    #[test]
    fn parameter_ranges() {
        let p = small_params();
        let s = h_c_adversary(c(&[1])).with(Deviation::D3 { budget: p.q + 1 }, RoundRange::ALL, vec![]);
        assert!(matches!(s.validate(&p, L), Err(StrategyError::Budget { .. })));
        let s = h_c_adversary(c(&[1]))
            .with(Deviation::D5 { filter: ObjectFilter::Fruits, delay: 0 }, RoundRange::ALL, vec![]);
        assert!(matches!(s.validate(&p, L), Err(StrategyError::Delay { .. })));
        let s = h_c_adversary(c(&[1])).with(Deviation::D8 { r_star: p.big_n + 1 }, RoundRange::ALL, vec![]);
        assert!(matches!(s.validate(&p, L), Err(StrategyError::SwitchRound(_))));
        let s = h_c_adversary(c(&[1])).with(Deviation::D4 { filter: ObjectFilter::Both }, RoundRange::ALL, vec![PartyId(2)]);
        assert!(matches!(s.validate(&p, L), Err(StrategyError::NotCorrupted { .. })));
        assert!(matches!(h_c_adversary(c(&[0, 1, 2])).validate(&p, L), Err(StrategyError::TooManyCorrupted { .. })));
    }

    #[test]
    fn conflicts_are_reported() {
        let p = small_params();
        let conflict = |s: Strategy| matches!(s.validate(&p, L), Err(StrategyError::InvalidComposition { .. }));
        let base = || h_c_adversary(c(&[1, 2]));
        assert!(conflict(
            base()
                .with(Deviation::D4 { filter: ObjectFilter::Fruits }, RoundRange::between(1, 5), vec![])
                .with(Deviation::D5 { filter: ObjectFilter::Both, delay: 2 }, RoundRange::between(5, 9), vec![])
        ));
        assert!(!conflict(
            base()
                .with(Deviation::D4 { filter: ObjectFilter::Fruits }, RoundRange::ALL, vec![])
                .with(Deviation::D5 { filter: ObjectFilter::Blocks, delay: 2 }, RoundRange::ALL, vec![])
        ));
        assert!(!conflict(
            base()
                .with(Deviation::D3 { budget: 1 }, RoundRange::between(1, 4), vec![])
                .with(Deviation::D3 { budget: 2 }, RoundRange::starting(5), vec![])
        ));
        assert!(conflict(
            base()
                .with(Deviation::D3 { budget: 1 }, RoundRange::ALL, vec![PartyId(1)])
                .with(Deviation::D3 { budget: 2 }, RoundRange::ALL, vec![PartyId(1)])
        ));
        assert!(conflict(
            base()
                .with(Deviation::D1 { recipe: TamperRecipe::OtherDigest }, RoundRange::ALL, vec![])
                .with(
                    Deviation::D1 { recipe: TamperRecipe::Stale { fields: vec![InstanceField::Dig] } },
                    RoundRange::ALL,
                    vec![]
                )
        ));
        assert!(conflict(
            base()
                .with(Deviation::D7, RoundRange::between(1, 10), vec![])
                .with(Deviation::D8 { r_star: 10 }, RoundRange::ALL, vec![])
        ));
        assert!(!conflict(
            base()
                .with(Deviation::D7, RoundRange::between(1, 9), vec![])
                .with(Deviation::D8 { r_star: 10 }, RoundRange::ALL, vec![])
        ));
        let away = Breakaway { leader: PartyId(1), members: vec![PartyId(2)], member_share: Amount::from_int(1) };
        assert!(conflict(
            base()
                .with(Deviation::D6 { breakaway: away }, RoundRange::starting(3), vec![])
                .with(Deviation::D8 { r_star: 5 }, RoundRange::ALL, vec![PartyId(2)])
        ));
    }

    #[test]
    fn claim2_boundaries() {
        let p = small_params();
        let s = claim2_strategy(c(&[1, 2]), 1, 0);
        assert!(s.validate(&p, L).is_ok());
        assert_eq!(s.switch_round(PartyId(1), L), Some(1));
        assert_eq!(s.behavior(PartyId(2), 3, L).ro_budget, Some(0));
        let s = claim2_strategy(c(&[1, 2]), p.big_n, p.q);
        assert!(s.validate(&p, L).is_ok());
        assert_eq!(s.switch_round(PartyId(2), L), Some(p.big_n));
    }

    #[test]
    fn breakaway_is_sticky() {
        let away = Breakaway { leader: PartyId(1), members: vec![PartyId(2)], member_share: Amount::new(1, 2) };
        let s = h_c_adversary(c(&[1, 2])).with(Deviation::D6 { breakaway: away }, RoundRange::between(4, 4), vec![]);
        assert!(s.validate(&small_params(), L).is_ok());
        assert!(!s.behavior(PartyId(1), 3, L).ignore_exit);
        let b = s.behavior(PartyId(1), 9, L);
        assert!(b.ignore_exit);
        assert_eq!(b.member_share, Some(Amount::new(1, 2).0));
        assert_eq!(s.breakaways().len(), 1);
    }
}
