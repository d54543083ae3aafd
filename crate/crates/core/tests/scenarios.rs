mod common;

use std::collections::BTreeSet;

use common::{busy_params, parties};
use fruitpool::accounting::{coalition_utility, cost_of, rewards_in_view, u_min_max, RewardOptions};
use fruitpool::adversary::*;
use fruitpool::audit::audit;
use fruitpool::chain::distinct_fruits;
use fruitpool::engine::{measure_statistics, run, ExecutionConfig};
use fruitpool::oracles::OracleKind;
use fruitpool::transcript::{ExecutionTranscript, MinedKind, Mode};
use fruitpool::types::*;

fn honest(mode: Mode, seed: u64) -> ExecutionTranscript {
    run(&ExecutionConfig::new(busy_params(), mode, Strategy::default(), seed)).unwrap()
}

fn strategy_run(strategy: Strategy, seed: u64) -> ExecutionTranscript {
    run(&ExecutionConfig::new(busy_params(), Mode::StrategyRun, strategy, seed)).unwrap()
}

#[test]
fn one_round_of_solo_mining_spends_the_quota() {
    let mut p = busy_params();
    p.n = 2;
    p.big_n = 1;
    let t = run(&ExecutionConfig::new(p.clone(), Mode::HonestFruit, Strategy::default(), 3)).unwrap();
    let ro: u64 = t.finals.iter().map(|f| f.counts[OracleKind::Ro.index()]).sum();
    assert_eq!(ro, 2 * p.q as u64);
}

#[test]
fn honest_pool_has_no_exits_and_a_clean_audit() {
    for seed in 0..20 {
        let t = honest(Mode::HonestPool, seed);
        assert!(t.rounds.iter().all(|r| r.events.exits.is_empty()), "seed {seed}");
        assert_eq!(audit(&t), vec![], "seed {seed}");
        assert!(measure_statistics(&t).payment_rounds > 0, "seed {seed}");
    }
}

#[test]
fn pool_payments_conserve_rewards() {
    for seed in 0..20 {
        let t = honest(Mode::HonestPool, seed);
        let payments: Vec<_> = t.payments().map(|(_, p)| p.clone()).collect();
        let r_f = t.header.params.reward_f;
        for f in t.honest_parties() {
            let credited: Amount = rewards_in_view(&f.view, &payments, r_f, RewardOptions::default()).into_values().sum();
            assert_eq!(credited, r_f.times(distinct_fruits(&f.view).len() as u64), "seed {seed}");
        }
    }
}

#[test]
fn reported_costs_price_the_counts() {
    let t = honest(Mode::HonestPool, 5);
    let costs = &t.header.params.costs;
    for f in &t.finals {
        let logged: Amount =
            t.rounds.iter().flat_map(|r| &r.queries).filter(|q| q.party == f.party).map(|q| q.cost).sum();
        assert_eq!(logged, cost_of(&f.counts, costs));
    }
}

#[test]
fn empty_record_leader_never_queries_transactions() {
    for seed in 0..5 {
        let mut cfg = ExecutionConfig::new(busy_params(), Mode::HonestPool, Strategy::default(), seed);
        cfg.variant_s = true;
        let t = run(&cfg).unwrap();
        assert_eq!(t.final_of(PartyId(0)).unwrap().counts[OracleKind::Tx.index()], 0);
        let usual = honest(Mode::HonestPool, seed);
        assert!(usual.final_of(PartyId(0)).unwrap().counts[OracleKind::Tx.index()] > 0);
        assert_eq!(audit(&t), vec![]);
    }
}

#[test]
fn idle_member_mines_nothing_and_pays_for_the_rest() {
    let c = parties(&[2]);
    let s = h_c_adversary(c.clone()).with(Deviation::D3 { budget: 0 }, RoundRange::ALL, vec![]);
    for seed in 0..5 {
        let t = strategy_run(s.clone(), seed);
        let idle = t.final_of(PartyId(2)).unwrap();
        assert_eq!(idle.counts[OracleKind::Ro.index()], 0);
        assert!(t.rounds.iter().flat_map(|r| &r.events.mined).all(|m| m.party != PartyId(2)));
        let paid: Amount =
            t.payments().filter_map(|(_, p)| p.tx.paid_to(PartyId(2))).sum();
        let cost = cost_of(&idle.counts, &t.header.params.costs);
        for v in t.honest_parties() {
            assert_eq!(coalition_utility(&t, &c, v.party, RewardOptions::default()).unwrap(), paid - cost);
        }
    }
}

#[test]
fn selective_diffusion_splits_views() {
    let c = parties(&[3]);
    let s = h_c_adversary(c.clone()).with(
        Deviation::Selective { recipients: vec![PartyId(1)] },
        RoundRange::ALL,
        vec![],
    );
    let split = (0..20).any(|seed| {
        let r = u_min_max(&strategy_run(s.clone(), seed), &c, RewardOptions::default()).unwrap();
        assert!(r.u_min <= r.u_max);
        r.u_min < r.u_max
    });
    assert!(split);
}

#[test]
fn transfers_inside_a_coalition_cancel() {
    let c: BTreeSet<PartyId> = parties(&[1, 2, 3]);
    let s = h_c_adversary(c.clone()).with(
        Deviation::D6 {
            breakaway: Breakaway { leader: PartyId(1), members: vec![PartyId(2), PartyId(3)], member_share: Amount::new(1, 2) },
        },
        RoundRange::starting(5),
        vec![],
    );
    let mut internal = 0;
    for seed in 0..10 {
        let t = strategy_run(s.clone(), seed);
        let all: Vec<_> = t.payments().map(|(_, p)| p.clone()).collect();
        let external: Vec<_> = all.iter().filter(|p| !c.contains(&p.leader)).cloned().collect();
        internal += all.len() - external.len();
        let r_f = t.header.params.reward_f;
        for f in t.honest_parties() {
            let total = |payments: &[_]| -> Amount {
                let r = rewards_in_view(&f.view, payments, r_f, RewardOptions::default());
                c.iter().filter_map(|p| r.get(p)).copied().sum()
            };
            assert_eq!(total(&all), total(&external), "seed {seed}");
        }
    }
    assert!(internal > 0, "no breakaway payments were made");
}

#[test]
fn switching_to_solo_stops_pool_traffic() {
    let c = parties(&[1]);
    let s = h_c_adversary(c).with(Deviation::D8 { r_star: 10 }, RoundRange::ALL, vec![]);
    let t = strategy_run(s, 2);
    for r in t.rounds.iter().filter(|r| r.round >= 10) {
        for p in &r.events.payments {
            assert_eq!(p.tx.paid_to(PartyId(1)), None, "round {}", r.round);
        }
    }
    assert!(t.rounds.iter().filter(|r| r.round >= 10).flat_map(|r| &r.events.mined).any(|m| m.party == PartyId(1)
        && m.kind == MinedKind::Fruit
        && m.object.record.coinbase == PartyId(1)));
}
