#![allow(dead_code)]

pub mod oracle;

use attest_core::agents::IdentityProvider;
use attest_core::chain::{AccountId, Ledger, Simulation, Tick};
use attest_core::contract::{
    CallOutput, ContractCall, ContractConstants, ContractError, VotingContract, DEFAULT_NEWCOMER_EPSILON,
};
use attest_core::crypto::{Blinding, Commitment, design_hash};
use attest_core::money::Money;
use attest_core::trust::{PaymentSchedule, PaymentVariant, Vote};

pub const DELTA_COMMIT: Tick = 10;
pub const DELTA_REVEAL: Tick = 10;

pub fn schedule() -> PaymentSchedule {
    PaymentSchedule::new(Money::from_units(1), 0.75, Money::from_micro(1_000), PaymentVariant::Simplified).unwrap()
}

pub struct Fixture {
    pub sim: Simulation<VotingContract>,
    pub ip: IdentityProvider,
    pub genesis_supply: Money,
}

pub fn id(s: &str) -> AccountId {
    AccountId::from(s)
}

impl Fixture {
    pub fn new(players: &[&str]) -> Self {
        let ip = IdentityProvider::from_seed([42; 32]);
        let constants = ContractConstants {
            delta_commit: DELTA_COMMIT,
            delta_reveal: DELTA_REVEAL,
            schedule: schedule(),
            manager: id("manager"),
            ip_key: ip.public_key(),
            escrow: id("escrow"),
            newcomer_reputation: DEFAULT_NEWCOMER_EPSILON,
            newcomer_weight_basis: DEFAULT_NEWCOMER_EPSILON,
        };
        let mut accounts = vec![
            (id("vendor"), Money::from_units(1_000)),
            (id("manager"), Money::ZERO),
            (id("escrow"), Money::ZERO),
        ];
        accounts.extend(players.iter().map(|p| (id(p), Money::from_units(100))));
        let ledger = Ledger::genesis(accounts).unwrap();
        let genesis_supply = ledger.total_supply();
        let sim = Simulation::new(ledger, VotingContract::new(constants).unwrap());
        Self { sim, ip, genesis_supply }
    }

    pub fn exec(&mut self, sender: &str, call: ContractCall, at: Tick) -> Result<CallOutput, ContractError> {
        self.sim.submit(sender, call, at).unwrap();
        self.sim.advance(at).pop().unwrap().outcome
    }

    pub fn announce(&mut self, collateral: Money, at: Tick) -> u64 {
        match self.exec("vendor", ContractCall::Announce { design_hash: design_hash(b"part.stl"), collateral }, at) {
            Ok(CallOutput::Announced(j)) => j,
            other => panic!("announce failed: {other:?}"),
        }
    }

    pub fn register(&mut self, player: &str, j: u64, deposit: Money, at: Tick) -> Result<CallOutput, ContractError> {
        let ip_signature = self.ip.issue(&id(player));
        self.exec(player, ContractCall::Register { design: j, ip_signature, deposit }, at)
    }

    pub fn receive(&mut self, player: &str, j: u64, at: Tick) -> Result<CallOutput, ContractError> {
        self.exec("manager", ContractCall::SetReceived { design: j, player: id(player) }, at)
    }

    pub fn commit(&mut self, player: &str, j: u64, vote: Vote, at: Tick) -> (Result<CallOutput, ContractError>, Commitment) {
        let mut b = [0u8; 32];
        b[..player.len().min(32)].copy_from_slice(&player.as_bytes()[..player.len().min(32)]);
        b[31] = j as u8;
        let c = Commitment::new(vote, Blinding(b));
        (self.exec(player, ContractCall::Commit { design: j, digest: c.digest }, at), c)
    }

    pub fn reveal(&mut self, player: &str, j: u64, c: &Commitment, at: Tick) -> Result<CallOutput, ContractError> {
        self.exec(player, ContractCall::Reveal { design: j, vote: c.vote, blinding: c.blinding }, at)
    }

    pub fn deposit(&self) -> Money {
        schedule().required_deposit()
    }

    /// Registers, marks receipt, commits and (optionally) reveals for each player.
    pub fn full_round(&mut self, j: u64, start: Tick, votes: &[(&str, Option<Vote>)]) -> CallOutput {
        let dep = self.deposit();
        for (p, _) in votes {
            self.register(p, j, dep, start + 1).unwrap();
        }
        for (p, _) in votes {
            self.receive(p, j, start + 2).unwrap();
        }
        let mut openings = Vec::new();
        for (p, v) in votes {
            if let Some(v) = v {
                let (r, c) = self.commit(p, j, *v, start + 3);
                r.unwrap();
                openings.push((*p, c));
            }
        }
        for (p, c) in &openings {
            self.reveal(p, j, c, start + DELTA_COMMIT + 1).unwrap();
        }
        self.exec("vendor", ContractCall::CalculateResult { design: j }, start + DELTA_COMMIT + DELTA_REVEAL + 1)
            .unwrap()
    }

    pub fn balance(&self, who: &str) -> Money {
        self.sim.ledger().balance(&id(who)).unwrap()
    }
}
