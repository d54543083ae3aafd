#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use fruitpool::chain::ValidityContext;
use fruitpool::oracles::pointer_index;
use fruitpool::types::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The desk-scale instance used by the utility checks.
pub fn acceptance_params() -> ProtocolParams {
    ProtocolParams {
        kappa: 16,
        n: 5,
        q: 10,
        big_n: 2000,
        p_f: Probability::new(1, 20),
        p_b: Probability::new(1, 500),
        r: 4,
        reward_f: Amount::from_int(1),
        costs: CostTable {
            lc: Amount::new(1, 5),
            fs: Amount::new(1, 20),
            tx: Amount::new(1, 20),
            ro: Amount::new(1, 200),
            ltx: Amount::new(1, 100),
        },
        delta: 0.5,
    }
}

/// Small, fast instance with frequent successes.
pub fn busy_params() -> ProtocolParams {
    ProtocolParams {
        kappa: 8,
        n: 4,
        q: 20,
        big_n: 30,
        p_f: Probability::new(115, 256),
        p_b: Probability::new(4, 256),
        r: 2,
        reward_f: Amount::from_int(1),
        costs: CostTable {
            lc: Amount::new(1, 10),
            fs: Amount::new(1, 20),
            tx: Amount::new(1, 20),
            ro: Amount::new(1, 200),
            ltx: Amount::new(1, 100),
        },
        delta: 0.5,
    }
}

pub fn parties(ids: &[u16]) -> BTreeSet<PartyId> {
    ids.iter().map(|&i| PartyId(i)).collect()
}

/// Validity context where half of all queries are fruits and a quarter blocks.
pub fn easy_ctx(kappa: u32) -> ValidityContext {
    let key = OracleKey::from_seed(7);
    ValidityContext {
        key,
        kappa,
        d_pf: 1 << (kappa - 1),
        d_pb: 1 << (kappa - 2),
        window: 2 * kappa as u64,
        genesis: genesis_block(&key, kappa),
    }
}

/// Brute-force miner for hand-built chains.
pub struct Miner<'a> {
    pub ctx: &'a ValidityContext,
    rng: ChaCha8Rng,
}

impl<'a> Miner<'a> {
    pub fn new(ctx: &'a ValidityContext, seed: u64) -> Self {
        Miner { ctx, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn search(&mut self, mut f: Fruit, accept: impl Fn(Digest) -> bool) -> Fruit {
        loop {
            f.eta = self.rng.gen();
            f.h = self.ctx.hash_of(&f);
            if accept(f.h) {
                return f;
            }
        }
    }

    /// A fruit hanging off `chain` and pointing at `chain[pointer]`.
    pub fn fruit_at(&mut self, chain: &Chain, pointer: usize, coinbase: PartyId) -> Fruit {
        let t = Fruit {
            h_prev: chain.tip().header.h,
            h_f: chain.blocks[pointer].header.h,
            eta: 0,
            dig: Digest::ZERO,
            record: Arc::new(Record::empty(coinbase)),
            h: Digest::ZERO,
        };
        let d = self.ctx.d_pf;
        self.search(t, |h| h.suffix < d)
    }

    pub fn fruit(&mut self, chain: &Chain, coinbase: PartyId) -> Fruit {
        let ptr = pointer_index(chain.height(), self.ctx.kappa) as usize;
        self.fruit_at(chain, ptr, coinbase)
    }

    pub fn block(&mut self, chain: &Chain, fruits: Vec<Fruit>, coinbase: PartyId) -> Arc<Block> {
        let ptr = pointer_index(chain.height(), self.ctx.kappa) as usize;
        let t = Fruit {
            h_prev: chain.tip().header.h,
            h_f: chain.blocks[ptr].header.h,
            eta: 0,
            dig: self.ctx.fruit_set_digest(&fruits),
            record: Arc::new(Record::empty(coinbase)),
            h: Digest::ZERO,
        };
        let d = self.ctx.d_pb;
        let header = self.search(t, |h| h.prefix < d);
        Arc::new(Block { header, fruits })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
