//! Random message sequences against the contract. Whatever is accepted or
//! rejected, money is conserved, escrow covers every outstanding obligation,
//! stored phases only move forward and reputations match their histories.

mod common;

use std::collections::BTreeMap;

use attest_core::contract::{ContractCall, DesignPhase};
use attest_core::crypto::{Blinding, Commitment};
use attest_core::money::Money;
use attest_core::trust::{Phase, Vote};
use proptest::prelude::*;

use common::*;

const PLAYERS: [&str; 6] = ["p0", "p1", "p2", "p3", "p4", "p5"];

#[derive(Debug, Clone)]
enum Op {
    Announce(u8),
    Register(usize, u64, bool),
    Receive(usize, u64),
    Commit(usize, u64, Vote, u8),
    Reveal(usize, u64, bool),
    Calculate(u64),
    OpenFeedback(u64),
}

fn op() -> impl Strategy<Value = Op> {
    let p = 0..PLAYERS.len();
    let j = 0u64..3;
    let vote = prop_oneof![Just(Vote::Invalid), Just(Vote::Abstain), Just(Vote::Valid)];
    prop_oneof![
        1 => (1u8..8).prop_map(Op::Announce),
        4 => (p.clone(), j.clone(), any::<bool>()).prop_map(|(p, j, ok)| Op::Register(p, j, ok)),
        4 => (p.clone(), j.clone()).prop_map(|(p, j)| Op::Receive(p, j)),
        4 => (p.clone(), j.clone(), vote, any::<u8>()).prop_map(|(p, j, v, b)| Op::Commit(p, j, v, b)),
        4 => (p, j.clone(), any::<bool>()).prop_map(|(p, j, ok)| Op::Reveal(p, j, ok)),
        2 => j.clone().prop_map(Op::Calculate),
        1 => j.prop_map(Op::OpenFeedback),
    ]
}

fn check(f: &Fixture, last_phases: &mut BTreeMap<u64, DesignPhase>) -> Result<(), TestCaseError> {
    let ledger = f.sim.ledger();
    let contract = f.sim.machine();
    prop_assert_eq!(ledger.total_supply(), f.genesis_supply);

    let mut owed: Money = contract.designs().iter().map(|d| d.balance).sum();
    for d in contract.designs() {
        for (round, settled) in [(Phase::Evaluation, d.eval_output.is_some()), (Phase::Feedback, d.feedback_output.is_some())] {
            if settled {
                continue;
            }
            for p in d.roster(round) {
                owed += contract.player(p).unwrap().deposits[&d.index];
            }
        }
    }
    prop_assert_eq!(ledger.balance(&id("escrow")).unwrap(), owed);

    for d in contract.designs() {
        let prev = last_phases.insert(d.index, d.phase).unwrap_or(DesignPhase::EvaluationCommit);
        prop_assert!(d.phase >= prev, "design {} went from {:?} to {:?}", d.index, prev, d.phase);
    }
    for st in contract.players().values() {
        prop_assert!(st.reputation_consistent(0.01));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_traffic_keeps_the_books(ops in prop::collection::vec((op(), 0u64..5), 1..120)) {
        let mut f = Fixture::new(&PLAYERS);
        let mut openings: BTreeMap<(usize, u64), Commitment> = BTreeMap::new();
        let mut last = BTreeMap::new();
        let mut now = 0;
        for (op, dt) in ops {
            now += dt;
            let _ = match op {
                Op::Announce(c) => f.exec("vendor", ContractCall::Announce {
                    design_hash: attest_core::crypto::design_hash(&[c]),
                    collateral: schedule().reward * c as i64,
                }, now),
                Op::Register(p, j, ok) => {
                    let dep = if ok { f.deposit() } else { f.deposit() - Money::from_micro(1) };
                    f.register(PLAYERS[p], j, dep, now)
                }
                Op::Receive(p, j) => f.receive(PLAYERS[p], j, now),
                Op::Commit(p, j, v, b) => {
                    let c = Commitment::new(v, Blinding([b; 32]));
                    let r = f.exec(PLAYERS[p], ContractCall::Commit { design: j, digest: c.digest }, now);
                    if r.is_ok() {
                        openings.insert((p, j), c);
                    }
                    r
                }
                Op::Reveal(p, j, honest) => {
                    let mut c = openings.get(&(p, j)).copied().unwrap_or_else(|| Commitment::new(Vote::Valid, Blinding([0; 32])));
                    if !honest {
                        c.blinding.0[5] ^= 0x80;
                    }
                    f.reveal(PLAYERS[p], j, &c, now)
                }
                Op::Calculate(j) => f.exec("p0", ContractCall::CalculateResult { design: j }, now),
                Op::OpenFeedback(j) => f.exec("vendor", ContractCall::OpenFeedback { design: j }, now),
            };
            check(&f, &mut last)?;
        }
    }
}
