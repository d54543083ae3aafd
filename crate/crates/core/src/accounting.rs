//! Rewards, oracle costs and coalition profit over honest views.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::distinct_fruits;
use crate::oracles::OracleKind;
use crate::transcript::{ExecutionTranscript, PaymentRecord};
use crate::types::{Amount, Chain, CostTable, PartyId};

/// Per party and oracle: number of queries and their total cost.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostLedger {
    entries: BTreeMap<PartyId, [(u64, Amount); 5]>,
}

impl CostLedger {
    pub fn charge(&mut self, party: PartyId, kind: OracleKind, unit: Amount) {
        let e = &mut self.entries.entry(party).or_insert([(0, Amount::ZERO); 5])[kind.index()];
        e.0 += 1;
        e.1 += unit;
    }

    pub fn count(&self, party: PartyId, kind: OracleKind) -> u64 {
        self.entries.get(&party).map_or(0, |e| e[kind.index()].0)
    }

    pub fn counts(&self, party: PartyId) -> [u64; 5] {
        self.entries.get(&party).map_or([0; 5], |e| e.map(|(c, _)| c))
    }

    pub fn total(&self, party: PartyId) -> Amount {
        self.entries.get(&party).map_or(Amount::ZERO, |e| e.iter().map(|(_, t)| *t).sum())
    }
}

/// Cost of a query-count vector under `costs`.
pub fn cost_of(counts: &[u64; 5], costs: &CostTable) -> Amount {
    OracleKind::ALL
        .iter()
        .map(|&k| {
            let unit = match k {
                OracleKind::Lc => costs.lc,
                OracleKind::Fs => costs.fs,
                OracleKind::Tx => costs.tx,
                OracleKind::Ro => costs.ro,
                OracleKind::Ltx => costs.ltx,
            };
            unit.times(counts[k.index()])
        })
        .sum()
}

/// When a pool payment counts towards a view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crediting {
    /// In the round the payment transaction is created.
    #[default]
    AtCreation,
    /// Only once the payment transaction is in the view's ledger.
    OnInclusion,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardOptions {
    pub crediting: Crediting,
    /// Ignore the last `k` blocks of every view.
    pub exclude_last: u64,
}

/// Rewards per party in one view: `R_f` per distinct fruit to its coinbase,
/// then pool payments moved from leaders to members.
pub fn rewards_in_view(
    view: &Chain,
    payments: &[PaymentRecord],
    reward_f: Amount,
    opts: RewardOptions,
) -> BTreeMap<PartyId, Amount> {
    let keep = (view.blocks.len() as u64).saturating_sub(opts.exclude_last).max(1) as usize;
    let chain = Chain { blocks: view.blocks[..keep].to_vec() };
    let fruits = distinct_fruits(&chain);
    let mut out: BTreeMap<PartyId, Amount> = BTreeMap::new();
    for f in &fruits {
        *out.entry(f.record.coinbase).or_insert(Amount::ZERO) += reward_f;
    }
    let included: HashSet<u64> = match opts.crediting {
        Crediting::AtCreation => HashSet::new(),
        Crediting::OnInclusion => fruits.iter().flat_map(|f| f.record.txs.iter().map(|t| t.id)).collect(),
    };
    for p in payments {
        if opts.crediting == Crediting::OnInclusion && !included.contains(&p.tx.id) {
            continue;
        }
        for &(to, amount) in p.tx.payments.iter().flatten() {
            *out.entry(p.leader).or_insert(Amount::ZERO) -= amount;
            *out.entry(to).or_insert(Amount::ZERO) += amount;
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AccountingError {
    #[error("party {0} is not honest")]
    ViewNotHonest(PartyId),
    #[error("transcript has no honest party")]
    NoHonestParty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartyProfit {
    pub rewards: Amount,
    pub cost: Amount,
    pub profit: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ViewUtility {
    pub view: PartyId,
    pub per_party: BTreeMap<PartyId, PartyProfit>,
    pub coalition: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UtilityReport {
    pub views: Vec<ViewUtility>,
    pub u_min: Amount,
    pub u_max: Amount,
}

fn payments_of(t: &ExecutionTranscript) -> Vec<PaymentRecord> {
    t.payments().map(|(_, p)| p.clone()).collect()
}

fn view_utility(t: &ExecutionTranscript, payments: &[PaymentRecord], c: &BTreeSet<PartyId>, view: PartyId, opts: RewardOptions) -> ViewUtility {
    let chain = &t.final_of(view).expect("view party exists").view;
    let rewards = rewards_in_view(chain, payments, t.header.params.reward_f, opts);
    let per_party: BTreeMap<PartyId, PartyProfit> = t
        .finals
        .iter()
        .map(|f| {
            let r = rewards.get(&f.party).copied().unwrap_or(Amount::ZERO);
            let cost = cost_of(&f.counts, &t.header.params.costs);
            (f.party, PartyProfit { rewards: r, cost, profit: r - cost })
        })
        .collect();
    let coalition = c.iter().filter_map(|p| per_party.get(p)).map(|p| p.profit).sum();
    ViewUtility { view, per_party, coalition }
}

/// Profit of coalition `c` as seen from the final chain of honest party `view`.
pub fn coalition_utility(
    t: &ExecutionTranscript,
    c: &BTreeSet<PartyId>,
    view: PartyId,
    opts: RewardOptions,
) -> Result<Amount, AccountingError> {
    match t.final_of(view) {
        Some(f) if f.honest => Ok(view_utility(t, &payments_of(t), c, view, opts).coalition),
        _ => Err(AccountingError::ViewNotHonest(view)),
    }
}

/// Minimum and maximum coalition profit over all honest views.
pub fn u_min_max(t: &ExecutionTranscript, c: &BTreeSet<PartyId>, opts: RewardOptions) -> Result<UtilityReport, AccountingError> {
    let payments = payments_of(t);
    let views: Vec<ViewUtility> = t.honest_parties().map(|f| view_utility(t, &payments, c, f.party, opts)).collect();
    let u_min = views.iter().map(|v| v.coalition).min().ok_or(AccountingError::NoHonestParty)?;
    let u_max = views.iter().map(|v| v.coalition).max().ok_or(AccountingError::NoHonestParty)?;
    Ok(UtilityReport { views, u_min, u_max })
}
