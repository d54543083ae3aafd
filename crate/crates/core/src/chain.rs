//! Fruit, block and chain validity, fruit recency and fruit extraction.

use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::types::{genesis_block, mining_query, Block, Chain, Digest, Fruit, OracleKey, ProtocolParams, Record, MINING_TAG};

/// Everything a validity predicate needs. Cheap to clone.
#[derive(Clone, Debug)]
pub struct ValidityContext {
    pub key: OracleKey,
    pub kappa: u32,
    pub d_pf: u64,
    pub d_pb: u64,
    /// `r · kappa`.
    pub window: u64,
    pub genesis: Arc<Block>,
}

impl ValidityContext {
    pub fn new(key: OracleKey, params: &ProtocolParams) -> Self {
        ValidityContext {
            key,
            kappa: params.kappa,
            d_pf: params.d_pf(),
            d_pb: params.d_pb(),
            window: params.window(),
            genesis: genesis_block(&key, params.kappa),
        }
    }

    /// Oracle image of a header tuple, without touching any memo table.
    pub fn hash_of(&self, f: &Fruit) -> Digest {
        let q = mining_query(f.h_prev, f.h_f, f.eta, f.dig, &f.record);
        self.key.eval(MINING_TAG, &q, self.kappa)
    }

    pub fn fruit_set_digest(&self, fruits: &[Fruit]) -> Digest {
        self.key.fruit_set_digest(fruits, self.kappa)
    }

    pub fn genesis_chain(&self) -> Chain {
        Chain::new(self.genesis.clone())
    }
}

/// Which numbered condition of a validity definition failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// Fruit: (1) hash equation, (2) suffix threshold.
    Fruit(u8),
    /// Block: (1) digest of fruit set, (2) fruit validity, (3) hash equation, (4) prefix threshold.
    Block(u8),
    /// Chain: (1) genesis, (2) block validity and linkage, (3) fruit recency window.
    Chain(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ValidityVerdict {
    pub failed: Option<Condition>,
}

impl ValidityVerdict {
    pub const VALID: ValidityVerdict = ValidityVerdict { failed: None };

    fn fail(c: Condition) -> Self {
        ValidityVerdict { failed: Some(c) }
    }

    pub fn is_valid(&self) -> bool {
        self.failed.is_none()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain is invalid: {0:?}")]
    InvalidChain(Condition),
}

pub fn is_fruit_valid(ctx: &ValidityContext, f: &Fruit) -> ValidityVerdict {
    if ctx.hash_of(f) != f.h {
        return ValidityVerdict::fail(Condition::Fruit(1));
    }
    if f.h.suffix >= ctx.d_pf {
        return ValidityVerdict::fail(Condition::Fruit(2));
    }
    ValidityVerdict::VALID
}

/// Block validity. Genesis is valid by definition.
pub fn is_block_valid(ctx: &ValidityContext, b: &Block) -> ValidityVerdict {
    if *b == *ctx.genesis {
        return ValidityVerdict::VALID;
    }
    if ctx.fruit_set_digest(&b.fruits) != b.header.dig {
        return ValidityVerdict::fail(Condition::Block(1));
    }
    if !b.fruits.iter().all(|f| is_fruit_valid(ctx, f).is_valid()) {
        return ValidityVerdict::fail(Condition::Block(2));
    }
    if ctx.hash_of(&b.header) != b.header.h {
        return ValidityVerdict::fail(Condition::Block(3));
    }
    if b.header.h.prefix >= ctx.d_pb {
        return ValidityVerdict::fail(Condition::Block(4));
    }
    ValidityVerdict::VALID
}

/// True iff `f` points at some block with index `k > height − window`.
pub fn is_recent(f: &Fruit, chain: &Chain, window: u64) -> bool {
    let lo = recent_floor(chain.height(), window);
    chain.blocks[lo as usize..].iter().any(|b| b.header.h == f.h_f)
}

/// Smallest block index inside the recency window of a chain of `height`:
/// pointers need `k > |chain| − window`, where `|chain| = height + 1`.
pub fn recent_floor(height: u64, window: u64) -> u64 {
    (height + 2).saturating_sub(window)
}

/// Fruit `f` may sit in block `j` iff it points at block `k` with `j − window < k < j`.
pub fn fruit_fits_at(f: &Fruit, ancestors: &[Digest]) -> bool {
    ancestors.contains(&f.h_f)
}

pub fn is_chain_valid(ctx: &ValidityContext, chain: &Chain) -> ValidityVerdict {
    if chain.blocks.first().map(|g| **g != *ctx.genesis).unwrap_or(true) {
        return ValidityVerdict::fail(Condition::Chain(1));
    }
    for j in 1..chain.blocks.len() {
        let b = &chain.blocks[j];
        if b.header.h_prev != chain.blocks[j - 1].header.h || !is_block_valid(ctx, b).is_valid() {
            return ValidityVerdict::fail(Condition::Chain(2));
        }
    }
    for j in 1..chain.blocks.len() {
        let lo = (j as u64 + 1).saturating_sub(ctx.window) as usize;
        let refs: Vec<Digest> = chain.blocks[lo..j].iter().map(|b| b.header.h).collect();
        if !chain.blocks[j].fruits.iter().all(|f| fruit_fits_at(f, &refs)) {
            return ValidityVerdict::fail(Condition::Chain(3));
        }
    }
    ValidityVerdict::VALID
}

/// Records of the distinct fruits of `chain`, first occurrence kept. No validation.
pub fn extract_fruit_unchecked(chain: &Chain) -> Vec<Arc<Record>> {
    let mut seen: HashSet<&Fruit> = HashSet::new();
    let mut out = Vec::new();
    for b in chain.blocks.iter().skip(1) {
        for f in &b.fruits {
            if seen.insert(f) {
                out.push(f.record.clone());
            }
        }
    }
    out
}

/// Validating entry point of fruit extraction.
pub fn extract_fruit(ctx: &ValidityContext, chain: &Chain) -> Result<Vec<Arc<Record>>, ChainError> {
    match is_chain_valid(ctx, chain).failed {
        Some(c) => Err(ChainError::InvalidChain(c)),
        None => Ok(extract_fruit_unchecked(chain)),
    }
}

/// Distinct fruits of a chain in extraction order.
pub fn distinct_fruits(chain: &Chain) -> Vec<Fruit> {
    let mut seen: HashSet<&Fruit> = HashSet::new();
    let mut out = Vec::new();
    for b in chain.blocks.iter().skip(1) {
        for f in &b.fruits {
            if seen.insert(f) {
                out.push(f.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use crate::types::{Digest, PartyId};

    #[test]
    fn mined_fruits_and_blocks_are_valid() {
        let ctx = easy_ctx(8);
        let g = ctx.genesis_chain();
        let mut miner = Miner::new(&ctx, 11);
        for _ in 0..1000 {
            let f = miner.fruit(&g, PartyId(0));
            assert!(is_fruit_valid(&ctx, &f).is_valid());
        }
        let mut chain = g.clone();
        for _ in 0..1000 {
            let fruits = vec![miner.fruit(&chain, PartyId(1))];
            let b = miner.block(&chain, fruits, PartyId(1));
            assert!(is_block_valid(&ctx, &b).is_valid());
            if chain.blocks.len() < 20 {
                chain.push(b);
            }
        }
        assert!(is_chain_valid(&ctx, &chain).is_valid());
    }

    #[test]
    fn genesis_is_valid() {
        let ctx = easy_ctx(8);
        assert!(is_block_valid(&ctx, &ctx.genesis).is_valid());
        assert!(is_chain_valid(&ctx, &ctx.genesis_chain()).is_valid());
        assert!(extract_fruit(&ctx, &ctx.genesis_chain()).unwrap().is_empty());
    }

    #[test]
    fn flipped_record_breaks_hash() {
        let ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 1);
        let mut f = miner.fruit(&ctx.genesis_chain(), PartyId(0));
        let mut rec = (*f.record).clone();
        rec.coinbase = PartyId(rec.coinbase.0 ^ 1);
        f.record = Arc::new(rec);
        assert_eq!(is_fruit_valid(&ctx, &f).failed, Some(Condition::Fruit(1)));
    }

    #[test]
    fn threshold_edit_fails_condition_two() {
        let mut ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 2);
        let f = miner.fruit(&ctx.genesis_chain(), PartyId(0));
        ctx.d_pf = f.h.suffix;
        assert_eq!(is_fruit_valid(&ctx, &f).failed, Some(Condition::Fruit(2)));
    }

    #[test]
    fn replaced_fruit_breaks_digest() {
        let ctx = easy_ctx(8);
        let g = ctx.genesis_chain();
        let mut miner = Miner::new(&ctx, 3);
        let fruits = vec![miner.fruit(&g, PartyId(0))];
        let mut b = miner.block(&g, fruits, PartyId(0));
        Arc::make_mut(&mut b).fruits[0] = miner.fruit(&g, PartyId(1));
        assert_eq!(is_block_valid(&ctx, &b).failed, Some(Condition::Block(1)));
    }

    #[test]
    fn broken_link_fails_condition_two() {
        let ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 4);
        let mut chain = ctx.genesis_chain();
        for _ in 0..3 {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        let other = miner.block(&ctx.genesis_chain(), vec![], PartyId(1));
        chain.blocks[2] = other;
        assert_eq!(is_chain_valid(&ctx, &chain).failed, Some(Condition::Chain(2)));
    }

    #[test]
    fn stale_fruit_fails_condition_three() {
        let mut ctx = easy_ctx(8);
        ctx.window = 3;
        let mut miner = Miner::new(&ctx, 5);
        let mut chain = ctx.genesis_chain();
        let old = miner.fruit(&chain, PartyId(0));
        for _ in 0..3 {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        // Block 4 may hold fruits pointing at blocks 2 or 3 only.
        let b = miner.block(&chain, vec![old], PartyId(0));
        chain.push(b);
        assert_eq!(is_chain_valid(&ctx, &chain).failed, Some(Condition::Chain(3)));
    }

    #[test]
    fn recency_boundaries() {
        let ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 6);
        let mut chain = ctx.genesis_chain();
        for _ in 0..10 {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        let window = 4;
        let pointing = |k: usize| {
            let mut f = miner_fruit_stub();
            f.h_f = chain.blocks[k].header.h;
            f
        };
        assert!(is_recent(&pointing(10), &chain, window));
        assert!(is_recent(&pointing(8), &chain, window));
        assert!(!is_recent(&pointing(7), &chain, window));
        let mut stray = pointing(10);
        stray.h_f = Digest { prefix: 1, suffix: 1 };
        assert!(!is_recent(&stray, &chain, window));
    }

    #[test]
    fn duplicate_fruit_counted_once_at_first_block() {
        let ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 7);
        let mut chain = ctx.genesis_chain();
        for _ in 0..2 {
            let b = miner.block(&chain, vec![], PartyId(0));
            chain.push(b);
        }
        let f = miner.fruit(&chain, PartyId(2));
        let g = miner.fruit(&chain, PartyId(3));
        let b3 = miner.block(&chain, vec![f.clone()], PartyId(0));
        chain.push(b3);
        let b4 = miner.block(&chain, vec![g.clone()], PartyId(0));
        chain.push(b4);
        let b5 = miner.block(&chain, vec![f.clone()], PartyId(0));
        chain.push(b5);
        let recs = extract_fruit(&ctx, &chain).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].coinbase, PartyId(2));
        assert_eq!(recs[1].coinbase, PartyId(3));
    }

    #[test]
    fn standalone_extract_rejects_invalid_chain() {
        let ctx = easy_ctx(8);
        let mut miner = Miner::new(&ctx, 8);
        let mut chain = ctx.genesis_chain();
        let b = miner.block(&chain, vec![], PartyId(0));
        chain.push(b.clone());
        chain.push(b);
        assert!(extract_fruit(&ctx, &chain).is_err());
    }
}
