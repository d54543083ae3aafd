//! The five metered oracles: `O_lc`, `O_fs`, `O_tx`, `O_ro`, `O_ltx`.
//!
//! [`Oracles`] owns quota counters, the cost ledger, the random-oracle memo
//! table and each party's `O_lc` block memory.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::CostLedger;
use crate::chain::{is_block_valid, is_fruit_valid, recent_floor, ValidityContext};
use crate::types::{Amount, Block, Chain, CostTable, Digest, Fruit, OracleKey, PartyId, ProtocolParams, Record, Transaction, MINING_TAG};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OracleKind {
    Lc,
    Fs,
    Tx,
    Ro,
    Ltx,
}

impl OracleKind {
    pub const ALL: [OracleKind; 5] = [OracleKind::Lc, OracleKind::Fs, OracleKind::Tx, OracleKind::Ro, OracleKind::Ltx];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Lc => "lc",
            OracleKind::Fs => "fs",
            OracleKind::Tx => "tx",
            OracleKind::Ro => "ro",
            OracleKind::Ltx => "ltx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub kappa: u32,
    pub d_pf: u64,
    pub d_pb: u64,
    pub q: u32,
    pub costs: CostTable,
}

impl OracleConfig {
    pub fn from_params(p: &ProtocolParams) -> Self {
        OracleConfig { kappa: p.kappa, d_pf: p.d_pf(), d_pb: p.d_pb(), q: p.q, costs: p.costs }
    }

    pub fn quota(&self, kind: OracleKind) -> u32 {
        match kind {
            OracleKind::Ro => self.q,
            _ => 1,
        }
    }

    pub fn cost(&self, kind: OracleKind) -> Amount {
        let c = &self.costs;
        match kind {
            OracleKind::Lc => c.lc,
            OracleKind::Fs => c.fs,
            OracleKind::Tx => c.tx,
            OracleKind::Ro => c.ro,
            OracleKind::Ltx => c.ltx,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiningOutcome {
    pub fruit: bool,
    pub block: bool,
}

pub fn classify_digest(h: Digest, cfg: &OracleConfig) -> MiningOutcome {
    MiningOutcome { fruit: h.suffix < cfg.d_pf, block: h.prefix < cfg.d_pb }
}

/// Memoized random oracle backed by a keyed PRF.
#[derive(Clone, Debug)]
pub struct RandomOracleTable {
    key: OracleKey,
    kappa: u32,
    memo: HashMap<Vec<u8>, Digest>,
}

impl RandomOracleTable {
    pub fn new(key: OracleKey, kappa: u32) -> Self {
        RandomOracleTable { key, kappa, memo: HashMap::new() }
    }

    pub fn lookup(&mut self, bytes: &[u8]) -> Digest {
        if let Some(d) = self.memo.get(bytes) {
            return *d;
        }
        let d = self.key.eval(MINING_TAG, bytes, self.kappa);
        self.memo.insert(bytes.to_vec(), d);
        d
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{party} exceeded the {} quota in round {round}", oracle.name())]
    QuotaExceeded { party: PartyId, oracle: OracleKind, round: u64 },
}

/// One metered query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub round: u64,
    pub party: PartyId,
    pub oracle: OracleKind,
    pub cost: Amount,
    /// `O_ro`: bit 0 fruit, bit 1 block. `O_lc`: returned height.
    /// `O_fs`: `|F_rec|`. `O_tx`: record size. `O_ltx`: the bit.
    pub outcome: u64,
}

/// A party's fruit set in arrival order, indexed by fruit pointer.
#[derive(Clone, Debug, Default)]
pub struct FruitPool {
    entries: IndexSet<Fruit>,
    by_pointer: HashMap<Digest, Vec<usize>>,
}

impl FruitPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when already present.
    pub fn insert(&mut self, f: Fruit) -> bool {
        let h_f = f.h_f;
        let (idx, fresh) = self.entries.insert_full(f);
        if fresh {
            self.by_pointer.entry(h_f).or_default().push(idx);
        }
        fresh
    }

    pub fn contains(&self, f: &Fruit) -> bool {
        self.entries.contains(f)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fruit> {
        self.entries.iter()
    }

    /// Arrival positions of fruits pointing at any of `refs`, ascending.
    fn pointing_to(&self, refs: &[Digest]) -> Vec<usize> {
        let mut out: Vec<usize> = refs
            .iter()
            .filter_map(|r| self.by_pointer.get(r))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl FromIterator<Fruit> for FruitPool {
    fn from_iter<I: IntoIterator<Item = Fruit>>(iter: I) -> Self {
        let mut p = FruitPool::new();
        for f in iter {
            p.insert(f);
        }
        p
    }
}

/// Fruit extraction of a chain plus lookup sets.
#[derive(Clone, Debug, Default)]
pub struct ExtractedLedger {
    pub records: Vec<Arc<Record>>,
    fruits: HashSet<Fruit>,
    tx_ids: HashSet<u64>,
}

impl ExtractedLedger {
    pub fn from_chain(chain: &Chain) -> Self {
        let mut l = ExtractedLedger::default();
        for b in chain.blocks.iter().skip(1) {
            l.extend_with(b);
        }
        l
    }

    /// A ledger known only by its records.
    pub fn from_records(records: Vec<Arc<Record>>) -> Self {
        let tx_ids = records.iter().flat_map(|r| r.txs.iter().map(|t| t.id)).collect();
        ExtractedLedger { records, fruits: HashSet::new(), tx_ids }
    }

    fn extend_with(&mut self, b: &Block) {
        for f in &b.fruits {
            if self.fruits.insert(f.clone()) {
                self.tx_ids.extend(f.record.txs.iter().map(|t| t.id));
                self.records.push(f.record.clone());
            }
        }
    }

    pub fn contains_fruit(&self, f: &Fruit) -> bool {
        self.fruits.contains(f)
    }

    pub fn contains_tx(&self, id: u64) -> bool {
        self.tx_ids.contains(&id)
    }

    pub fn fruit_count(&self) -> usize {
        self.records.len()
    }
}

#[derive(Clone, Debug)]
struct Node {
    block: Arc<Block>,
    parent: Option<u32>,
    height: u64,
    valid: bool,
    arrival: u64,
}

/// Per-party block memory of `O_lc`.
///
/// Validity of a node covers its whole path, which is sound because chain
/// validity is prefix-closed.
#[derive(Clone, Debug)]
pub struct BlockTree {
    nodes: Vec<Node>,
    by_header: HashMap<Fruit, u32>,
    by_ref: HashMap<Digest, Vec<u32>>,
    orphans: HashMap<Digest, Vec<(Arc<Block>, u64)>>,
    orphan_headers: HashSet<Fruit>,
    best_height: u64,
    best: Vec<u32>,
    next_arrival: u64,
}

impl BlockTree {
    pub fn new(genesis: Arc<Block>) -> Self {
        let mut t = BlockTree {
            nodes: Vec::new(),
            by_header: HashMap::new(),
            by_ref: HashMap::new(),
            orphans: HashMap::new(),
            orphan_headers: HashSet::new(),
            best_height: 0,
            best: vec![0],
            next_arrival: 1,
        };
        t.by_header.insert(genesis.header.clone(), 0);
        t.by_ref.insert(genesis.header.h, vec![0]);
        t.nodes.push(Node { block: genesis, parent: None, height: 0, valid: true, arrival: 0 });
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len() + self.orphan_headers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, header: &Fruit) -> bool {
        self.by_header.contains_key(header) || self.orphan_headers.contains(header)
    }

    pub fn node_of(&self, header: &Fruit) -> Option<u32> {
        self.by_header.get(header).copied()
    }

    pub fn height_of(&self, node: u32) -> u64 {
        self.nodes[node as usize].height
    }

    pub fn parent_of(&self, node: u32) -> Option<u32> {
        self.nodes[node as usize].parent
    }

    pub fn best_height(&self) -> u64 {
        self.best_height
    }

    pub fn insert(&mut self, ctx: &ValidityContext, block: &Arc<Block>) {
        if self.contains(&block.header) {
            return;
        }
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        let mut stack = vec![(block.clone(), arrival)];
        while let Some((b, arrival)) = stack.pop() {
            let parent = self.by_ref.get(&b.header.h_prev).and_then(|v| v.first().copied());
            let Some(parent) = parent else {
                self.orphan_headers.insert(b.header.clone());
                self.orphans.entry(b.header.h_prev).or_default().push((b, arrival));
                continue;
            };
            self.orphan_headers.remove(&b.header);
            let id = self.attach(ctx, b.clone(), parent, arrival);
            if let Some(waiting) = self.orphans.remove(&self.nodes[id as usize].block.header.h) {
                // Reverse so that earlier arrivals attach first.
                stack.extend(waiting.into_iter().rev());
            }
        }
    }

    fn attach(&mut self, ctx: &ValidityContext, block: Arc<Block>, parent: u32, arrival: u64) -> u32 {
        let p = &self.nodes[parent as usize];
        let height = p.height + 1;
        let valid = p.valid && is_block_valid(ctx, &block).is_valid() && {
            let refs = self.window_refs(parent, ctx.window);
            block.fruits.iter().all(|f| refs.contains(&f.h_f))
        };
        let id = self.nodes.len() as u32;
        self.by_header.insert(block.header.clone(), id);
        self.by_ref.entry(block.header.h).or_default().push(id);
        self.nodes.push(Node { block, parent: Some(parent), height, valid, arrival });
        if valid {
            if height > self.best_height {
                self.best_height = height;
                self.best.clear();
            }
            if height == self.best_height {
                self.best.push(id);
            }
        }
        id
    }

    /// References of the `window − 1` nearest ancestors of a child of `parent`.
    fn window_refs(&self, parent: u32, window: u64) -> Vec<Digest> {
        let mut out = Vec::new();
        let mut cur = Some(parent);
        while let Some(c) = cur {
            if out.len() as u64 + 1 >= window {
                break;
            }
            let n = &self.nodes[c as usize];
            out.push(n.block.header.h);
            cur = n.parent;
        }
        out
    }

    /// The longest valid tip. Ties: earliest position in `preferred`, then
    /// earliest arrival, then smallest reference.
    pub fn select(&self, preferred: &[Arc<Block>]) -> u32 {
        if self.best.len() == 1 {
            return self.best[0];
        }
        let position = |id: u32| {
            let h = &self.nodes[id as usize].block.header;
            preferred.iter().position(|b| b.header == *h).unwrap_or(usize::MAX)
        };
        *self
            .best
            .iter()
            .min_by_key(|&&id| {
                let n = &self.nodes[id as usize];
                (position(id), n.arrival, n.block.header.h)
            })
            .expect("genesis is always a candidate")
    }

    pub fn path(&self, tip: u32) -> Chain {
        let mut blocks = Vec::with_capacity(self.nodes[tip as usize].height as usize + 1);
        let mut cur = Some(tip);
        while let Some(c) = cur {
            let n = &self.nodes[c as usize];
            blocks.push(n.block.clone());
            cur = n.parent;
        }
        blocks.reverse();
        Chain { blocks }
    }
}

#[derive(Clone, Debug)]
struct LcMemory {
    tree: BlockTree,
    cache: Option<(u32, Arc<ExtractedLedger>)>,
}

#[derive(Clone, Debug)]
pub struct LcOutput {
    pub chain: Chain,
    pub h_prev: Digest,
    pub h_f: Digest,
    pub ledger: Arc<ExtractedLedger>,
}

#[derive(Clone, Debug)]
pub struct FsOutput {
    pub all_valid: FruitPool,
    pub f_rec: Vec<Fruit>,
    pub dig: Digest,
}

/// Fruit pointer of a chain: `chain[max(1, H − kappa)]`, genesis when `H = 0`.
pub fn pointer_index(height: u64, kappa: u32) -> u64 {
    if height == 0 {
        0
    } else {
        height.saturating_sub(kappa as u64).max(1)
    }
}

pub struct Oracles {
    cfg: OracleConfig,
    ctx: ValidityContext,
    ro: RandomOracleTable,
    round: u64,
    used: HashMap<(PartyId, OracleKind), u32>,
    ledger: CostLedger,
    log: Vec<QueryRecord>,
    memory: HashMap<PartyId, LcMemory>,
}

impl Oracles {
    pub fn new(cfg: OracleConfig, ctx: ValidityContext) -> Self {
        let ro = RandomOracleTable::new(ctx.key, cfg.kappa);
        Oracles {
            cfg,
            ctx,
            ro,
            round: 0,
            used: HashMap::new(),
            ledger: CostLedger::default(),
            log: Vec::new(),
            memory: HashMap::new(),
        }
    }

    pub fn from_params(params: &ProtocolParams, key: OracleKey) -> Self {
        Self::new(OracleConfig::from_params(params), ValidityContext::new(key, params))
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn context(&self) -> &ValidityContext {
        &self.ctx
    }

    pub fn begin_round(&mut self, round: u64) {
        self.round = round;
        self.used.clear();
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn cost_ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn take_log(&mut self) -> Vec<QueryRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn remaining(&self, party: PartyId, kind: OracleKind) -> u32 {
        self.cfg.quota(kind) - self.used.get(&(party, kind)).copied().unwrap_or(0)
    }

    fn charge(&mut self, party: PartyId, kind: OracleKind) -> Result<(), OracleError> {
        let used = self.used.entry((party, kind)).or_insert(0);
        if *used >= self.cfg.quota(kind) {
            return Err(OracleError::QuotaExceeded { party, oracle: kind, round: self.round });
        }
        *used += 1;
        self.ledger.charge(party, kind, self.cfg.cost(kind));
        Ok(())
    }

    fn record(&mut self, party: PartyId, kind: OracleKind, outcome: u64) {
        self.log.push(QueryRecord { round: self.round, party, oracle: kind, cost: self.cfg.cost(kind), outcome });
    }

    pub fn query_ro(&mut self, party: PartyId, bytes: &[u8]) -> Result<Digest, OracleError> {
        self.charge(party, OracleKind::Ro)?;
        let h = self.ro.lookup(bytes);
        let o = classify_digest(h, &self.cfg);
        self.record(party, OracleKind::Ro, o.fruit as u64 | (o.block as u64) << 1);
        Ok(h)
    }

    pub fn query_lc(&mut self, party: PartyId, chain: &Chain, new_blocks: &[Arc<Block>]) -> Result<LcOutput, OracleError> {
        self.charge(party, OracleKind::Lc)?;
        let genesis = self.ctx.genesis.clone();
        let mem = self
            .memory
            .entry(party)
            .or_insert_with(|| LcMemory { tree: BlockTree::new(genesis), cache: None });
        let missing: Vec<&Arc<Block>> =
            chain.blocks.iter().rev().take_while(|b| mem.tree.node_of(&b.header).is_none()).collect();
        for b in missing.into_iter().rev() {
            mem.tree.insert(&self.ctx, b);
        }
        for b in new_blocks {
            mem.tree.insert(&self.ctx, b);
        }
        let best = mem.tree.select(new_blocks);
        let (out_chain, tip) = if mem.tree.height_of(best) > chain.height() {
            (mem.tree.path(best), Some(best))
        } else {
            (chain.clone(), mem.tree.node_of(&chain.tip().header))
        };
        let ledger = match (tip, mem.cache.take()) {
            (Some(t), Some((c, l))) if c == t => l,
            (Some(t), Some((c, mut l))) if mem.tree.parent_of(t) == Some(c) => {
                Arc::make_mut(&mut l).extend_with(out_chain.tip());
                l
            }
            _ => Arc::new(ExtractedLedger::from_chain(&out_chain)),
        };
        mem.cache = tip.map(|t| (t, ledger.clone()));
        let height = out_chain.height();
        let h_prev = out_chain.tip().header.h;
        let h_f = out_chain.blocks[pointer_index(height, self.cfg.kappa) as usize].header.h;
        self.record(party, OracleKind::Lc, height);
        Ok(LcOutput { chain: out_chain, h_prev, h_f, ledger })
    }

    pub fn query_fs(
        &mut self,
        party: PartyId,
        chain: &Chain,
        known: FruitPool,
        received: &[Fruit],
    ) -> Result<FsOutput, OracleError> {
        self.charge(party, OracleKind::Fs)?;
        let mut pool = known;
        for f in received {
            if !pool.contains(f) && is_fruit_valid(&self.ctx, f).is_valid() {
                pool.insert(f.clone());
            }
        }
        let lo = recent_floor(chain.height(), self.ctx.window) as usize;
        let refs: Vec<Digest> = chain.blocks[lo..].iter().map(|b| b.header.h).collect();
        let cached = self.memory.get(&party).and_then(|m| {
            let (node, ledger) = m.cache.as_ref()?;
            (m.tree.nodes[*node as usize].block.header == chain.tip().header).then(|| ledger.clone())
        });
        // A fruit pointing into the window can only sit inside the window.
        let window_fruits: HashSet<&Fruit> = match cached {
            Some(_) => HashSet::new(),
            None => chain.blocks[lo.max(1)..].iter().flat_map(|b| b.fruits.iter()).collect(),
        };
        let f_rec: Vec<Fruit> = pool
            .pointing_to(&refs)
            .into_iter()
            .map(|i| &pool.entries[i])
            .filter(|f| match &cached {
                Some(l) => !l.contains_fruit(f),
                None => !window_fruits.contains(f),
            })
            .cloned()
            .collect();
        let dig = self.ctx.fruit_set_digest(&f_rec);
        self.record(party, OracleKind::Fs, f_rec.len() as u64);
        Ok(FsOutput { all_valid: pool, f_rec, dig })
    }

    pub fn query_tx(&mut self, party: PartyId, txs: &[Transaction], records: &ExtractedLedger) -> Result<Record, OracleError> {
        self.charge(party, OracleKind::Tx)?;
        let mut ids = HashSet::new();
        let kept: Vec<Transaction> = txs
            .iter()
            .filter(|t| !records.contains_tx(t.id) && ids.insert(t.id))
            .cloned()
            .collect();
        self.record(party, OracleKind::Tx, kept.len() as u64);
        Ok(Record { coinbase: party, txs: kept })
    }

    pub fn query_ltx(&mut self, party: PartyId, record: &Record, tx: &Transaction) -> Result<bool, OracleError> {
        self.charge(party, OracleKind::Ltx)?;
        let bit = tx.is_well_formed() && record.txs.contains(tx);
        self.record(party, OracleKind::Ltx, bit as u64);
        Ok(bit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    fn oracles(kappa: u32) -> Oracles {
        let ctx = easy_ctx(kappa);
        let cfg = OracleConfig { kappa, d_pf: ctx.d_pf, d_pb: ctx.d_pb, q: 3, costs: unit_costs() };
        Oracles::new(cfg, ctx)
    }

    #[test]
    fn classify_examples() {
        let cfg = OracleConfig { kappa: 8, d_pf: 13, d_pb: 3, q: 1, costs: CostTable::default() };
        assert!(classify_digest(Digest { prefix: 0x55, suffix: 0x0a }, &cfg).fruit);
        assert!(!classify_digest(Digest { prefix: 0x55, suffix: 0x0d }, &cfg).fruit);
        let o = classify_digest(Digest { prefix: 0x00, suffix: 0xff }, &cfg);
        assert!(o.block && !o.fruit);
    }

    #[test]
    fn ro_memoizes_and_charges_each_query() {
        let mut o = oracles(8);
        o.begin_round(1);
        let a = o.query_ro(PartyId(0), b"abc").unwrap();
        let b = o.query_ro(PartyId(0), b"abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(o.cost_ledger().count(PartyId(0), OracleKind::Ro), 2);
        o.query_ro(PartyId(0), b"x").unwrap();
        assert_eq!(
            o.query_ro(PartyId(0), b"y"),
            Err(OracleError::QuotaExceeded { party: PartyId(0), oracle: OracleKind::Ro, round: 1 })
        );
        assert_eq!(o.cost_ledger().count(PartyId(0), OracleKind::Ro), 3);
        o.begin_round(2);
        assert!(o.query_ro(PartyId(0), b"y").is_ok());
    }

    #[test]
    fn single_query_quota_for_other_oracles() {
        let mut o = oracles(8);
        o.begin_round(1);
        let g = o.context().genesis_chain();
        let ledger = ExtractedLedger::default();
        o.query_lc(PartyId(1), &g, &[]).unwrap();
        assert!(o.query_lc(PartyId(1), &g, &[]).is_err());
        o.query_fs(PartyId(1), &g, FruitPool::new(), &[]).unwrap();
        assert!(o.query_fs(PartyId(1), &g, FruitPool::new(), &[]).is_err());
        o.query_tx(PartyId(1), &[], &ledger).unwrap();
        assert!(o.query_tx(PartyId(1), &[], &ledger).is_err());
        o.query_ltx(PartyId(1), &Record::bottom(), &Transaction::plain(1)).unwrap();
        assert!(o.query_ltx(PartyId(1), &Record::bottom(), &Transaction::plain(1)).is_err());
        assert!(o.query_lc(PartyId(2), &g, &[]).is_ok());
    }

    #[test]
    fn lc_without_competitors_keeps_chain() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 1);
        let mut chain = ctx.genesis_chain();
        for _ in 0..3 {
            let f = miner.fruit(&chain, PartyId(0));
            let b = miner.block(&chain, vec![f], PartyId(0));
            chain.push(b);
        }
        o.begin_round(1);
        let out = o.query_lc(PartyId(0), &chain, &[]).unwrap();
        assert_eq!(out.chain, chain);
        assert_eq!(out.ledger.records, crate::chain::extract_fruit_unchecked(&chain));
        assert_eq!(out.h_prev, chain.tip().header.h);
        assert_eq!(out.h_f, chain.blocks[1].header.h);
    }

    #[test]
    fn lc_prefers_first_tip_in_array() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 2);
        let g = ctx.genesis_chain();
        let a = miner.block(&g, vec![], PartyId(0));
        let b = miner.block(&g, vec![], PartyId(1));
        o.begin_round(1);
        let out = o.query_lc(PartyId(0), &g, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(out.chain.tip(), &a);
        o.begin_round(1);
        let out = o.query_lc(PartyId(3), &g, &[b.clone(), a]).unwrap();
        assert_eq!(out.chain.tip(), &b);
    }

    #[test]
    fn lc_adopts_only_strictly_longer() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 3);
        let g = ctx.genesis_chain();
        let a = miner.block(&g, vec![], PartyId(0));
        let b = miner.block(&g, vec![], PartyId(1));
        let mut mine = g.clone();
        mine.push(a);
        o.begin_round(1);
        let out = o.query_lc(PartyId(0), &mine, &[b]).unwrap();
        assert_eq!(out.chain, mine);
    }

    #[test]
    fn lc_links_out_of_order_blocks() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 4);
        let mut chain = ctx.genesis_chain();
        for _ in 0..4 {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        let mut reversed: Vec<_> = chain.blocks[1..].to_vec();
        reversed.reverse();
        o.begin_round(1);
        let out = o.query_lc(PartyId(0), &ctx.genesis_chain(), &reversed).unwrap();
        assert_eq!(out.chain, chain);
    }

    #[test]
    fn fs_empty_case() {
        let mut o = oracles(8);
        o.begin_round(1);
        let g = o.context().genesis_chain();
        let out = o.query_fs(PartyId(0), &g, FruitPool::new(), &[]).unwrap();
        assert!(out.f_rec.is_empty());
        assert_eq!(out.dig, o.context().fruit_set_digest(&[]));
    }

    #[test]
    fn fs_excludes_stale_and_invalid_fruits() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 5);
        let mut chain = ctx.genesis_chain();
        let old = miner.fruit(&chain, PartyId(0));
        let window = ctx.window as usize;
        for _ in 0..window {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        let fresh = miner.fruit(&chain, PartyId(0));
        let mut forged = fresh.clone();
        forged.eta ^= 1;
        o.begin_round(1);
        let out = o
            .query_fs(PartyId(0), &chain, FruitPool::new(), &[old.clone(), forged, fresh.clone()])
            .unwrap();
        assert_eq!(out.f_rec, vec![fresh]);
        assert_eq!(out.all_valid.len(), 2);
    }

    #[test]
    fn fs_skips_fruits_already_in_chain() {
        let mut o = oracles(8);
        let ctx = o.context().clone();
        let mut miner = Miner::new(&ctx, 6);
        let mut chain = ctx.genesis_chain();
        let f1 = miner.fruit(&chain, PartyId(0));
        let f2 = miner.fruit(&chain, PartyId(0));
        let b = miner.block(&chain, vec![f1.clone()], PartyId(0));
        chain.push(b);
        o.begin_round(1);
        let pool: FruitPool = [f1.clone(), f2.clone()].into_iter().collect();
        let out = o.query_fs(PartyId(0), &chain, pool.clone(), &[]).unwrap();
        assert_eq!(out.f_rec, vec![f2.clone()]);
        // Same answer through the extraction cache.
        o.begin_round(2);
        o.query_lc(PartyId(0), &chain, &[]).unwrap();
        let out = o.query_fs(PartyId(0), &chain, pool, &[]).unwrap();
        assert_eq!(out.f_rec, vec![f2]);
    }

    #[test]
    fn tx_filters_known_ids() {
        let mut o = oracles(8);
        o.begin_round(1);
        let known = Record { coinbase: PartyId(0), txs: vec![Transaction::plain(5)] };
        let ledger = ExtractedLedger::from_records(vec![Arc::new(known)]);
        let rec = o
            .query_tx(PartyId(2), &[Transaction::plain(5), Transaction::plain(6), Transaction::plain(6)], &ledger)
            .unwrap();
        assert_eq!(rec, Record { coinbase: PartyId(2), txs: vec![Transaction::plain(6)] });
        let empty = o.query_tx(PartyId(3), &[], &ledger).unwrap();
        assert_eq!(empty, Record::empty(PartyId(3)));
    }

    #[test]
    fn ltx_membership() {
        let mut o = oracles(8);
        o.begin_round(1);
        let rec = Record { coinbase: PartyId(0), txs: vec![Transaction::plain(5)] };
        assert!(o.query_ltx(PartyId(0), &rec, &Transaction::plain(5)).unwrap());
        assert!(!o.query_ltx(PartyId(1), &rec, &Transaction::plain(6)).unwrap());
    }

    #[test]
    fn pointer_index_clamps() {
        assert_eq!(pointer_index(0, 8), 0);
        assert_eq!(pointer_index(3, 8), 1);
        assert_eq!(pointer_index(20, 8), 12);
    }
}
