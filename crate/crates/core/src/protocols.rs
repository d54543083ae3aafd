//! Party programs: solo FruitChain mining, the pool leader and the pool
//! member, plus payment arithmetic and the empty-record leader variant.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ValidityContext;
use crate::network::{AuthChannel, DiffuseBuffer, Inbox, Message, MessageKind};
use crate::oracles::{classify_digest, BlockTree, ExtractedLedger, FruitPool, OracleError, Oracles};
use crate::transcript::{
    Affiliation, CostCheck, ExitReason, ExitRecord, InstanceRecord, MinedKind, MinedRecord, PaymentComputation,
    PaymentRecord, RoundEvents,
};
use crate::types::{mining_query, Amount, Block, Chain, Digest, Fruit, PartyId, ProtocolParams, Rational, Record, Transaction};

/// The tuple every pool party mines on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub h_prev: Digest,
    pub h_f: Digest,
    pub dig: Digest,
    pub record: Arc<Record>,
}

impl Instance {
    /// The initial `(0, 0, 0, ⊥)`.
    pub fn genesis() -> Self {
        Instance { h_prev: Digest::ZERO, h_f: Digest::ZERO, dig: Digest::ZERO, record: Arc::new(Record::bottom()) }
    }

    /// Whether a fruit or header was mined on this instance.
    pub fn matches(&self, f: &Fruit) -> bool {
        f.h_prev == self.h_prev
            && f.h_f == self.h_f
            && f.dig == self.dig
            && (Arc::ptr_eq(&f.record, &self.record) || *f.record == *self.record)
    }

    pub fn query_bytes(&self, eta: u64) -> Vec<u8> {
        mining_query(self.h_prev, self.h_f, eta, self.dig, &self.record)
    }

    pub fn to_record(&self, leader: PartyId) -> InstanceRecord {
        InstanceRecord { leader, h_prev: self.h_prev, h_f: self.h_f, dig: self.dig, record: self.record.clone() }
    }
}

/// Payload the leader sends over the authenticated channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolMessage {
    pub instance: Instance,
    pub f_rec: Arc<Vec<Fruit>>,
    pub round: u64,
    pub tx_t: Option<Transaction>,
}

pub fn compute_payment(rew: Amount, cost: Amount, n: u16) -> PaymentComputation {
    let surplus = ((rew - cost) / n as i128).max(Amount::ZERO);
    PaymentComputation { rew, cost, n, w_leader: cost.min(rew) + surplus, w_member: surplus }
}

/// A round is a payment round iff blocks arrived and nothing contradicted the instance.
pub fn is_payment_round(blocks: &[Arc<Block>], fruits: &[Fruit], instance: &Instance) -> bool {
    !blocks.is_empty() && !has_mismatch(blocks, fruits, instance)
}

pub fn has_mismatch(blocks: &[Arc<Block>], fruits: &[Fruit], instance: &Instance) -> bool {
    blocks.iter().any(|b| !instance.matches(&b.header)) || fruits.iter().any(|f| !instance.matches(f))
}

/// Id space of payment transactions, disjoint from environment ids.
pub const PAYMENT_TX_BASE: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFilter {
    Fruits,
    Blocks,
    Both,
}

impl ObjectFilter {
    pub fn covers(self, kind: MessageKind) -> bool {
        matches!(
            (self, kind),
            (ObjectFilter::Both | ObjectFilter::Fruits, MessageKind::Fruit)
                | (ObjectFilter::Both | ObjectFilter::Blocks, MessageKind::Block)
        )
    }

    pub fn overlaps(self, other: ObjectFilter) -> bool {
        self == ObjectFilter::Both || other == ObjectFilter::Both || self == other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceField {
    HPrev,
    HF,
    Dig,
    Record,
}

/// How a member replaces the leader's instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "case")]
pub enum TamperRecipe {
    /// Own coinbase in the record.
    SelfCoinbase,
    /// A different `h₋₁`.
    ForkPrev,
    /// A different fruit pointer.
    OtherPointer,
    /// A different fruit-set digest.
    OtherDigest,
    /// Keep last round's values for these fields.
    Stale { fields: Vec<InstanceField> },
}

impl TamperRecipe {
    pub fn fields(&self) -> Vec<InstanceField> {
        match self {
            TamperRecipe::SelfCoinbase => vec![InstanceField::Record],
            TamperRecipe::ForkPrev => vec![InstanceField::HPrev],
            TamperRecipe::OtherPointer => vec![InstanceField::HF],
            TamperRecipe::OtherDigest => vec![InstanceField::Dig],
            TamperRecipe::Stale { fields } => fields.clone(),
        }
    }

    fn apply(&self, me: PartyId, fresh: &Instance, previous: &Instance) -> Instance {
        let flip = |d: Digest| Digest { prefix: d.prefix, suffix: d.suffix ^ 1 };
        let mut out = fresh.clone();
        match self {
            TamperRecipe::SelfCoinbase => {
                out.record = Arc::new(Record { coinbase: me, txs: fresh.record.txs.clone() });
            }
            TamperRecipe::ForkPrev => out.h_prev = flip(fresh.h_prev),
            TamperRecipe::OtherPointer => out.h_f = flip(fresh.h_f),
            TamperRecipe::OtherDigest => out.dig = flip(fresh.dig),
            TamperRecipe::Stale { fields } => {
                for f in fields {
                    match f {
                        InstanceField::HPrev => out.h_prev = previous.h_prev,
                        InstanceField::HF => out.h_f = previous.h_f,
                        InstanceField::Dig => out.dig = previous.dig,
                        InstanceField::Record => out.record = previous.record.clone(),
                    }
                }
            }
        }
        out
    }
}

/// Per-round behaviour knobs. The default is the honest program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Behavior {
    /// Random-oracle queries per round, if fewer than `q`.
    pub ro_budget: Option<u32>,
    pub skip_ltx: bool,
    pub withhold: Option<ObjectFilter>,
    pub delay: Option<(ObjectFilter, u64)>,
    pub ignore_exit: bool,
    pub skip_fs: bool,
    pub skip_tx: bool,
    pub skip_lc: bool,
    /// Fraction of `W` paid to members outside the coalition.
    pub underpay: Option<Rational>,
    /// Fraction of `W` paid to every member (internal transfer of a breakaway pool).
    pub member_share: Option<Rational>,
    pub tamper: Option<TamperRecipe>,
    /// Restrict diffusion and pool messages to these recipients.
    pub recipients: Option<Vec<PartyId>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    HonestFruit,
    PoolLeader,
    PoolMember,
    /// Solo mining after leaving or dissolving a pool.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub leader: PartyId,
    /// Everyone except the leader.
    pub members: Vec<PartyId>,
}

impl PoolSpec {
    pub fn size(&self) -> u16 {
        self.members.len() as u16 + 1
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// What a party program may touch during its activation.
pub struct RoundCtx<'a> {
    pub round: u64,
    pub params: &'a ProtocolParams,
    pub oracles: &'a mut Oracles,
    pub net: &'a mut DiffuseBuffer,
    pub auth: &'a mut AuthChannel<PoolMessage>,
    pub rng: &'a mut ChaCha8Rng,
    pub events: &'a mut RoundEvents,
    pub corrupted: &'a BTreeSet<PartyId>,
}

#[derive(Clone, Debug)]
pub struct PartyState {
    pub id: PartyId,
    pub role: Role,
    pub chain: Chain,
    pub fruit_pool: FruitPool,
    pub success: bool,
    pub instance: Instance,
    /// Leader accumulator or member mirror.
    pub cost: Amount,
    pub pool: Option<PoolSpec>,
    pub variant_s: bool,
    record: Arc<ExtractedLedger>,
    f_rec: Arc<Vec<Fruit>>,
    seen_blocks: HashSet<Fruit>,
    seen_fruits: HashSet<Fruit>,
    archive_blocks: Vec<Arc<Block>>,
    archive_fruits: Vec<Fruit>,
    archive_batches: Vec<usize>,
    backlog: Option<(Vec<Arc<Block>>, Vec<Fruit>)>,
    delayed: Vec<(u64, Message)>,
}

impl PartyState {
    pub fn new(id: PartyId, role: Role, genesis: Chain, pool: Option<PoolSpec>) -> Self {
        PartyState {
            id,
            role,
            chain: genesis,
            fruit_pool: FruitPool::new(),
            success: false,
            instance: Instance::genesis(),
            cost: Amount::ZERO,
            pool,
            variant_s: false,
            record: Arc::new(ExtractedLedger::default()),
            f_rec: Arc::new(Vec::new()),
            seen_blocks: HashSet::new(),
            seen_fruits: HashSet::new(),
            archive_blocks: Vec::new(),
            archive_fruits: Vec::new(),
            archive_batches: Vec::new(),
            backlog: None,
            delayed: Vec::new(),
        }
    }

    pub fn affiliation(&self) -> Affiliation {
        match (&self.role, &self.pool) {
            (Role::PoolLeader | Role::PoolMember, Some(p)) => Affiliation::Pool(p.leader),
            _ => Affiliation::Solo,
        }
    }

    /// Blocks this party has received, in arrival order.
    pub fn received_blocks(&self) -> &[Arc<Block>] {
        &self.archive_blocks
    }

    /// Whether the role keeps a local chain of its own.
    pub fn keeps_chain(&self) -> bool {
        self.role != Role::PoolMember
    }

    /// The local chain, or for a pure member the chain its archive selects
    /// under the longest-chain rule applied round by round.
    pub fn final_view(&self, ctx: &ValidityContext) -> Chain {
        if self.keeps_chain() {
            return self.chain.clone();
        }
        let mut tree = BlockTree::new(ctx.genesis.clone());
        let mut chain = ctx.genesis_chain();
        let mut at = 0;
        for &len in &self.archive_batches {
            let batch = &self.archive_blocks[at..at + len];
            at += len;
            for b in batch {
                tree.insert(ctx, b);
            }
            let best = tree.select(batch);
            if tree.height_of(best) > chain.height() {
                chain = tree.path(best);
            }
        }
        chain
    }

    /// Step 1: last round's objects not seen before.
    fn retrieve(&mut self, inbox: &Inbox) -> (Vec<Arc<Block>>, Vec<Fruit>) {
        let blocks: Vec<Arc<Block>> =
            inbox.blocks.iter().filter(|b| self.seen_blocks.insert(b.header.clone())).cloned().collect();
        let fruits: Vec<Fruit> = inbox.fruits.iter().filter(|f| self.seen_fruits.insert((*f).clone())).cloned().collect();
        if self.role == Role::PoolMember {
            self.archive_batches.push(blocks.len());
            self.archive_blocks.extend(blocks.iter().cloned());
            self.archive_fruits.extend(fruits.iter().cloned());
        }
        (blocks, fruits)
    }

    /// Switches to solo mining; a former member first replays its archive.
    fn leave(&mut self, reason: ExitReason, ctx: &mut RoundCtx<'_>) {
        if self.role == Role::PoolMember {
            self.archive_batches.clear();
            self.backlog = Some((std::mem::take(&mut self.archive_blocks), std::mem::take(&mut self.archive_fruits)));
        }
        self.role = Role::Fallback;
        ctx.events.exits.push(ExitRecord { party: self.id, reason });
    }

    /// Strategic exit from the pool at the start of a round.
    pub fn abandon(&mut self, ctx: &mut RoundCtx<'_>) {
        if matches!(self.role, Role::PoolLeader | Role::PoolMember) {
            self.leave(ExitReason::Abandon, ctx);
        }
    }

    /// Moves this party into a breakaway pool.
    pub fn join_breakaway(&mut self, pool: PoolSpec, ctx: &mut RoundCtx<'_>) {
        let role = if pool.leader == self.id { Role::PoolLeader } else { Role::PoolMember };
        if self.role == Role::PoolMember && role == Role::PoolLeader {
            // A new leader mines from its archive as its first view.
            self.archive_batches.clear();
            self.backlog = Some((std::mem::take(&mut self.archive_blocks), std::mem::take(&mut self.archive_fruits)));
        }
        self.role = role;
        self.pool = Some(pool);
        self.instance = Instance::genesis();
        self.cost = Amount::ZERO;
        ctx.events.exits.push(ExitRecord { party: self.id, reason: ExitReason::Breakaway });
    }

    pub fn step(&mut self, txs: &[Transaction], inbox: &Inbox, beh: &Behavior, ctx: &mut RoundCtx<'_>) -> Result<(), ProtocolError> {
        self.release_delayed(beh, ctx);
        match self.role {
            Role::HonestFruit | Role::Fallback => honest_round(self, txs, inbox, beh, ctx),
            Role::PoolLeader => leader_round(self, txs, inbox, beh, ctx),
            Role::PoolMember => member_round(self, txs, inbox, beh, ctx),
        }
    }

    fn release_delayed(&mut self, beh: &Behavior, ctx: &mut RoundCtx<'_>) {
        if self.delayed.is_empty() {
            return;
        }
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.delayed).into_iter().partition(|(r, _)| *r <= ctx.round);
        self.delayed = keep;
        for (_, m) in due {
            send(self.id, m, beh, ctx);
        }
    }

    /// Diffuses a mined object unless withheld or postponed.
    fn emit(&mut self, msg: Message, beh: &Behavior, ctx: &mut RoundCtx<'_>) {
        let kind = msg.kind();
        if beh.withhold.is_some_and(|f| f.covers(kind)) {
            ctx.events.withheld.extend(msg.refs().into_iter().map(|r| (self.id, r)));
            return;
        }
        if let Some((filter, delay)) = beh.delay {
            if filter.covers(kind) {
                ctx.events.withheld.extend(msg.refs().into_iter().map(|r| (self.id, r)));
                self.delayed.push((ctx.round + delay, msg));
                return;
            }
        }
        send(self.id, msg, beh, ctx);
    }

    /// The mining loop shared by every role. Solo miners keep their own
    /// fruits and extend their chain; pool miners only diffuse.
    fn mine(&mut self, inst: &Instance, f_rec: &[Fruit], solo: bool, beh: &Behavior, ctx: &mut RoundCtx<'_>) -> Result<(), ProtocolError> {
        let q = ctx.params.q;
        let budget = beh.ro_budget.map_or(q, |b| b.min(q));
        let kappa = ctx.params.kappa;
        let mask = if kappa == 64 { u64::MAX } else { (1u64 << kappa) - 1 };
        let cfg = ctx.oracles.config().clone();
        for _ in 0..budget {
            let eta = ctx.rng.gen::<u64>() & mask;
            let h = ctx.oracles.query_ro(self.id, &inst.query_bytes(eta))?;
            let outcome = classify_digest(h, &cfg);
            let object = Fruit { h_prev: inst.h_prev, h_f: inst.h_f, eta, dig: inst.dig, record: inst.record.clone(), h };
            if outcome.fruit {
                if solo {
                    self.fruit_pool.insert(object.clone());
                }
                ctx.events.mined.push(MinedRecord { party: self.id, kind: MinedKind::Fruit, object: object.clone(), fruit_refs: vec![] });
                self.emit(Message::Fruit(object.clone()), beh, ctx);
            }
            if outcome.block && !self.success {
                let block = Arc::new(Block { header: object, fruits: f_rec.to_vec() });
                if solo {
                    self.chain.push(block.clone());
                }
                self.success = true;
                ctx.events.mined.push(MinedRecord {
                    party: self.id,
                    kind: MinedKind::Block,
                    object: block.header.clone(),
                    fruit_refs: block.fruits.iter().map(|f| f.h).collect(),
                });
                self.emit(Message::Block(block), beh, ctx);
            }
        }
        Ok(())
    }

    fn relay(&self, blocks: &[Arc<Block>], beh: &Behavior, ctx: &mut RoundCtx<'_>) {
        if !blocks.is_empty() {
            send(self.id, Message::Blocks(blocks.to_vec()), beh, ctx);
        }
    }

    /// Solo steps 2 to 10 on already retrieved objects.
    fn solo_steps(
        &mut self,
        txs: &[Transaction],
        blocks: Vec<Arc<Block>>,
        fruits: Vec<Fruit>,
        beh: &Behavior,
        ctx: &mut RoundCtx<'_>,
    ) -> Result<(), ProtocolError> {
        let (mut lc_blocks, mut fs_fruits) = (blocks.clone(), fruits);
        if let Some((old_blocks, old_fruits)) = self.backlog.take() {
            lc_blocks.extend(old_blocks.into_iter().filter(|b| !blocks.contains(b)));
            fs_fruits.extend(old_fruits);
        }
        let lc = ctx.oracles.query_lc(self.id, &self.chain, &lc_blocks)?;
        self.chain = lc.chain;
        let known = std::mem::take(&mut self.fruit_pool);
        let fs = ctx.oracles.query_fs(self.id, &self.chain, known, &fs_fruits)?;
        self.fruit_pool = fs.all_valid;
        let m = ctx.oracles.query_tx(self.id, txs, &lc.ledger)?;
        drop(lc.ledger);
        let inst = Instance { h_prev: lc.h_prev, h_f: lc.h_f, dig: fs.dig, record: Arc::new(m) };
        self.mine(&inst, &fs.f_rec, true, beh, ctx)?;
        self.instance = inst;
        self.relay(&blocks, beh, ctx);
        self.success = false;
        Ok(())
    }
}

fn send(id: PartyId, msg: Message, beh: &Behavior, ctx: &mut RoundCtx<'_>) {
    match &beh.recipients {
        Some(r) => {
            ctx.net.diffuse_to(id, msg, r.clone());
        }
        None => {
            ctx.net.diffuse(id, msg);
        }
    }
}

/// One round of solo FruitChain mining.
pub fn honest_round(
    st: &mut PartyState,
    txs: &[Transaction],
    inbox: &Inbox,
    beh: &Behavior,
    ctx: &mut RoundCtx<'_>,
) -> Result<(), ProtocolError> {
    let (blocks, fruits) = st.retrieve(inbox);
    st.solo_steps(txs, blocks, fruits, beh, ctx)
}

/// One round of the pool leader. With `st.variant_s` set this is the
/// empty-record variant: no transaction oracle, `inst₄ = {tx_T}` on payment rounds.
pub fn leader_round(
    st: &mut PartyState,
    txs: &[Transaction],
    inbox: &Inbox,
    beh: &Behavior,
    ctx: &mut RoundCtx<'_>,
) -> Result<(), ProtocolError> {
    let (blocks, fruits) = st.retrieve(inbox);
    if !beh.ignore_exit && has_mismatch(&blocks, &fruits, &st.instance) {
        st.leave(ExitReason::Dissolve, ctx);
        return st.solo_steps(txs, blocks, fruits, beh, ctx);
    }
    let pool = st.pool.clone().expect("leader has a pool");
    let costs = ctx.params.costs;
    let mut tx_t = None;
    if let Some(first) = blocks.first() {
        let rew = ctx.params.reward_f.times(first.fruits.len() as u64);
        let pc = compute_payment(rew, st.cost, pool.size());
        let payments = pool
            .members
            .iter()
            .map(|&m| {
                let mut w = pc.w_member;
                if let Some(s) = beh.member_share {
                    w = w * s;
                }
                if let Some(f) = beh.underpay.filter(|_| !ctx.corrupted.contains(&m)) {
                    w = w * f;
                }
                (m, w)
            })
            .collect();
        let tx = Transaction {
            id: PAYMENT_TX_BASE | ctx.round << 16 | st.id.0 as u64,
            payload: Vec::new(),
            payments: Some(payments),
        };
        ctx.events.payments.push(PaymentRecord { leader: st.id, computation: pc, tx: tx.clone() });
        tx_t = Some(tx);
    }
    // A breakaway leader also adopts its archive once.
    let catch_up = st.backlog.is_some();
    if !blocks.is_empty() || catch_up {
        if !beh.skip_lc {
            let mut lc_blocks = blocks.clone();
            if let Some((old, _)) = st.backlog.as_mut() {
                lc_blocks.extend(std::mem::take(old).into_iter().filter(|b| !blocks.contains(b)));
            }
            let lc = ctx.oracles.query_lc(st.id, &st.chain, &lc_blocks)?;
            st.chain = lc.chain;
            st.instance.h_prev = lc.h_prev;
            st.instance.h_f = lc.h_f;
            st.record = lc.ledger;
        }
        if blocks.is_empty() {
            st.cost += costs.lc;
        } else {
            st.cost = costs.lc;
        }
    }
    if !beh.skip_fs {
        let mut fs_fruits = fruits;
        if let Some((_, old)) = st.backlog.take() {
            fs_fruits.extend(old);
        }
        let known = std::mem::take(&mut st.fruit_pool);
        let fs = ctx.oracles.query_fs(st.id, &st.chain, known, &fs_fruits)?;
        st.fruit_pool = fs.all_valid;
        st.instance.dig = fs.dig;
        st.f_rec = Arc::new(fs.f_rec);
    }
    st.cost += costs.fs;
    if st.variant_s {
        if let Some(tx) = &tx_t {
            st.instance.record = Arc::new(Record { coinbase: st.id, txs: vec![tx.clone()] });
        }
    } else {
        if !beh.skip_tx {
            let mut all = txs.to_vec();
            all.extend(tx_t.iter().cloned());
            let m = ctx.oracles.query_tx(st.id, &all, &st.record)?;
            st.instance.record = Arc::new(m);
        }
        st.cost += costs.tx;
    }
    ctx.events.instances.push(st.instance.to_record(st.id));
    for &m in pool.members.iter().filter(|m| beh.recipients.as_ref().is_none_or(|r| r.contains(m))) {
        let msg = PoolMessage { instance: st.instance.clone(), f_rec: st.f_rec.clone(), round: ctx.round, tx_t: tx_t.clone() };
        ctx.auth.send(st.id, m, msg);
    }
    let (inst, f_rec) = (st.instance.clone(), st.f_rec.clone());
    st.mine(&inst, &f_rec, false, beh, ctx)?;
    st.relay(&blocks, beh, ctx);
    st.success = false;
    Ok(())
}

/// One round of a pool member.
pub fn member_round(
    st: &mut PartyState,
    txs: &[Transaction],
    inbox: &Inbox,
    beh: &Behavior,
    ctx: &mut RoundCtx<'_>,
) -> Result<(), ProtocolError> {
    let (blocks, fruits) = st.retrieve(inbox);
    let leader = st.pool.as_ref().expect("member has a pool").leader;
    let n = st.pool.as_ref().expect("member has a pool").size();
    let msg = ctx
        .auth
        .take(st.id)
        .into_iter()
        .filter(|(s, m)| *s == leader && m.round == ctx.round)
        .map(|(_, m)| m)
        .next();
    if !beh.ignore_exit {
        let exit = member_exit_check(st, &blocks, &fruits, msg.as_ref(), n, beh, ctx)?;
        if let Some(reason) = exit {
            st.leave(reason, ctx);
            return st.solo_steps(txs, blocks, fruits, beh, ctx);
        }
    }
    let costs = ctx.params.costs;
    let tx_cost = if st.variant_s { Amount::ZERO } else { costs.tx };
    if blocks.is_empty() {
        st.cost += costs.fs + tx_cost;
    } else {
        st.cost = costs.lc + costs.fs + tx_cost;
    }
    if let Some(msg) = msg {
        let previous = std::mem::replace(&mut st.instance, msg.instance.clone());
        if let Some(recipe) = &beh.tamper {
            st.instance = recipe.apply(st.id, &msg.instance, &previous);
        }
        st.f_rec = msg.f_rec;
    }
    let (inst, f_rec) = (st.instance.clone(), st.f_rec.clone());
    st.mine(&inst, &f_rec, false, beh, ctx)?;
    st.relay(&blocks, beh, ctx);
    st.success = false;
    Ok(())
}

/// Checks 2(a), 2(c) and 2(b) in that order.
fn member_exit_check(
    st: &mut PartyState,
    blocks: &[Arc<Block>],
    fruits: &[Fruit],
    msg: Option<&PoolMessage>,
    n: u16,
    beh: &Behavior,
    ctx: &mut RoundCtx<'_>,
) -> Result<Option<ExitReason>, ProtocolError> {
    if has_mismatch(blocks, fruits, &st.instance) {
        return Ok(Some(ExitReason::Mismatch));
    }
    let Some(msg) = msg else {
        return Ok(Some(ExitReason::NoMessage));
    };
    let Some(first) = blocks.first() else {
        return Ok(None);
    };
    ctx.events.cost_checks.push(CostCheck { party: st.id, mirrored: st.cost });
    let Some(tx) = &msg.tx_t else {
        return Ok(Some(ExitReason::MissingPayment));
    };
    let rew = ctx.params.reward_f.times(first.fruits.len() as u64);
    let expected = compute_payment(rew, st.cost, n).w_member;
    if tx.paid_to(st.id) != Some(expected) {
        return Ok(Some(ExitReason::WrongAmount));
    }
    if !beh.skip_ltx && !ctx.oracles.query_ltx(st.id, &msg.instance.record, tx)? {
        return Ok(Some(ExitReason::NotIncluded));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payment_examples() {
        let a = |v: i128| Amount::from_int(v);
        let p = compute_payment(a(0), a(5), 4);
        assert_eq!((p.w_leader, p.w_member), (a(0), a(0)));
        let p = compute_payment(a(12), a(4), 4);
        assert_eq!((p.w_leader, p.w_member), (a(6), a(2)));
        let p = compute_payment(a(3), a(7), 2);
        assert_eq!((p.w_leader, p.w_member), (a(3), a(0)));
    }

    #[test]
    fn payment_round_classification() {
        let inst = Instance::genesis();
        let header = Fruit {
            h_prev: inst.h_prev,
            h_f: inst.h_f,
            eta: 1,
            dig: inst.dig,
            record: inst.record.clone(),
            h: Digest { prefix: 1, suffix: 2 },
        };
        let block = Arc::new(Block { header: header.clone(), fruits: vec![] });
        assert!(!is_payment_round(&[], &[], &inst));
        assert!(is_payment_round(std::slice::from_ref(&block), std::slice::from_ref(&header), &inst));
        let mut alien = header;
        alien.record = Arc::new(Record::empty(PartyId(3)));
        assert!(!is_payment_round(&[block], &[alien], &inst));
    }

    #[test]
    fn tamper_recipes_touch_their_fields() {
        let fresh = Instance {
            h_prev: Digest { prefix: 1, suffix: 1 },
            h_f: Digest { prefix: 2, suffix: 2 },
            dig: Digest { prefix: 3, suffix: 3 },
            record: Arc::new(Record::empty(PartyId(0))),
        };
        let prev = Instance::genesis();
        let me = PartyId(4);
        assert_eq!(TamperRecipe::SelfCoinbase.apply(me, &fresh, &prev).record.coinbase, me);
        assert_ne!(TamperRecipe::ForkPrev.apply(me, &fresh, &prev).h_prev, fresh.h_prev);
        assert_ne!(TamperRecipe::OtherPointer.apply(me, &fresh, &prev).h_f, fresh.h_f);
        assert_ne!(TamperRecipe::OtherDigest.apply(me, &fresh, &prev).dig, fresh.dig);
        let stale = TamperRecipe::Stale { fields: vec![InstanceField::Dig] }.apply(me, &fresh, &prev);
        assert_eq!(stale.dig, prev.dig);
        assert_eq!(stale.h_prev, fresh.h_prev);
    }

    #[test]
    fn filters() {
        assert!(ObjectFilter::Fruits.covers(MessageKind::Fruit));
        assert!(!ObjectFilter::Fruits.covers(MessageKind::Block));
        assert!(!ObjectFilter::Both.covers(MessageKind::Blocks));
        assert!(ObjectFilter::Both.overlaps(ObjectFilter::Blocks));
        assert!(!ObjectFilter::Fruits.overlaps(ObjectFilter::Blocks));
    }
}
