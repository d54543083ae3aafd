//! Shared fixtures for unit tests.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::ValidityContext;
use crate::oracles::pointer_index;
use crate::types::*;

pub fn unit_costs() -> CostTable {
    CostTable {
        lc: Amount::from_int(1),
        fs: Amount::from_int(1),
        tx: Amount::from_int(1),
        ro: Amount::from_int(1),
        ltx: Amount::from_int(1),
    }
}

pub fn small_params() -> ProtocolParams {
    ProtocolParams {
        kappa: 8,
        n: 3,
        q: 4,
        big_n: 20,
        p_f: Probability::new(1, 4),
        p_b: Probability::new(1, 16),
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

/// A context where half of all queries are fruits and a quarter are blocks.
pub fn easy_ctx(kappa: u32) -> ValidityContext {
    let key = OracleKey::from_seed(42);
    ValidityContext {
        key,
        kappa,
        d_pf: 1 << (kappa - 1),
        d_pb: 1 << (kappa - 2),
        window: 2 * kappa as u64,
        genesis: genesis_block(&key, kappa),
    }
}

/// Brute-force miner that produces valid objects on demand.
pub struct Miner<'a> {
    ctx: &'a ValidityContext,
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

    fn template(&self, chain: &Chain, dig: Digest, coinbase: PartyId) -> Fruit {
        let ptr = pointer_index(chain.height(), self.ctx.kappa) as usize;
        Fruit {
            h_prev: chain.tip().header.h,
            h_f: chain.blocks[ptr].header.h,
            eta: 0,
            dig,
            record: Arc::new(Record::empty(coinbase)),
            h: Digest::ZERO,
        }
    }

    pub fn fruit(&mut self, chain: &Chain, coinbase: PartyId) -> Fruit {
        let t = self.template(chain, Digest::ZERO, coinbase);
        let d = self.ctx.d_pf;
        self.search(t, |h| h.suffix < d)
    }

    pub fn block(&mut self, chain: &Chain, fruits: Vec<Fruit>, coinbase: PartyId) -> Arc<Block> {
        let dig = self.ctx.fruit_set_digest(&fruits);
        let t = self.template(chain, dig, coinbase);
        let d = self.ctx.d_pb;
        let header = self.search(t, |h| h.prefix < d);
        Arc::new(Block { header, fruits })
    }
}

/// A structurally complete fruit whose hash is not checked.
pub fn miner_fruit_stub() -> Fruit {
    Fruit {
        h_prev: Digest::ZERO,
        h_f: Digest::ZERO,
        eta: 0,
        dig: Digest::ZERO,
        record: Arc::new(Record::empty(PartyId(0))),
        h: Digest::ZERO,
    }
}

fn arb_digest() -> impl Strategy<Value = Digest> {
    (any::<u64>(), any::<u64>()).prop_map(|(prefix, suffix)| Digest { prefix, suffix })
}

fn arb_tx() -> impl Strategy<Value = Transaction> {
    (
        any::<u64>(),
        proptest::collection::vec(any::<u8>(), 0..4),
        proptest::option::of(proptest::collection::vec((any::<u16>(), -50i128..50, 1i128..9), 0..3)),
    )
        .prop_map(|(id, payload, pays)| Transaction {
            id,
            payload,
            payments: pays.map(|v| v.into_iter().map(|(p, a, b)| (PartyId(p), Amount::new(a, b))).collect()),
        })
}

pub fn arb_fruit() -> impl Strategy<Value = Fruit> {
    (
        arb_digest(),
        arb_digest(),
        any::<u64>(),
        arb_digest(),
        any::<u16>(),
        proptest::collection::vec(arb_tx(), 0..3),
        arb_digest(),
    )
        .prop_map(|(h_prev, h_f, eta, dig, coinbase, txs, h)| Fruit {
            h_prev,
            h_f,
            eta,
            dig,
            record: Arc::new(Record { coinbase: PartyId(coinbase), txs }),
            h,
        })
}
