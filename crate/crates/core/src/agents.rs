//! Protocol parties: vendor-facing manager, identity provider, and players
//! with pluggable voting strategies, plus the hidden ground truth they observe.

use std::collections::BTreeMap;

use ed25519_dalek::SigningKey;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{AccountId, EventBody, LedgerEvent, Simulation, Tick};
use crate::contract::{CallOutput, ContractCall, ContractError, TransactionOutput, VotingContract};
use crate::crypto::{self, Blinding, Commitment, Hash32, IdentitySignature, PublicKey};
use crate::money::Money;
use crate::trust::{Phase, Vote};

/// Hidden validity of each design.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    validity: BTreeMap<u64, bool>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, design: u64, valid: bool) {
        self.validity.insert(design, valid);
    }

    pub fn is_valid(&self, design: u64) -> Option<bool> {
        self.validity.get(&design).copied()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("quality {0} outside [0.5, 1]")]
    QualityOutOfRange(f64),
    #[error("bias {0} outside [0, 1]")]
    BiasOutOfRange(f64),
    #[error("commit window of {0} ticks leaves no room for registration and distribution (need >= 3)")]
    WindowTooShort(Tick),
    #[error("no ground truth for design {0}")]
    UnknownDesign(u64),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Pays the effort cost and observes the truth with probability `quality`.
    TruthfulEffort { quality: f64 },
    /// Votes valid with probability `bias`, without effort.
    Guess { bias: f64 },
    /// Takes the design, never commits.
    FreeRide,
    FixedVote { vote: Vote },
    Colluder { group: String, target: Vote },
    /// Never registers.
    Abstain,
}

impl Strategy {
    pub fn validate(&self) -> Result<(), AgentError> {
        match *self {
            Strategy::TruthfulEffort { quality } if !(0.5..=1.0).contains(&quality) => {
                Err(AgentError::QualityOutOfRange(quality))
            }
            Strategy::Guess { bias } if !(0.0..=1.0).contains(&bias) => Err(AgentError::BiasOutOfRange(bias)),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::TruthfulEffort { .. } => "truthful_effort",
            Strategy::Guess { .. } => "guess",
            Strategy::FreeRide => "free_ride",
            Strategy::FixedVote { .. } => "fixed_vote",
            Strategy::Colluder { .. } => "colluder",
            Strategy::Abstain => "abstain",
        }
    }

    pub fn participates(&self) -> bool {
        !matches!(self, Strategy::Abstain)
    }

    /// The vote this strategy casts after receiving the design, and whether
    /// producing it required an effort observation.
    pub fn decide(&self, truth: bool, rng: &mut impl Rng) -> Option<(Vote, bool)> {
        match *self {
            Strategy::TruthfulEffort { quality } => Some((observe(quality, truth, rng), true)),
            Strategy::Guess { bias } => Some((Vote::from_validity(rng.gen_bool(bias)), false)),
            Strategy::FixedVote { vote } => Some((vote, false)),
            Strategy::Colluder { target, .. } => Some((target, false)),
            Strategy::FreeRide | Strategy::Abstain => None,
        }
    }
}

/// Symmetric binary channel: the true vote with probability `quality`.
pub fn observe(quality: f64, truth: bool, rng: &mut impl Rng) -> Vote {
    let truthful = Vote::from_validity(truth);
    if rng.gen_bool(quality.clamp(0.0, 1.0)) {
        truthful
    } else {
        truthful.flipped()
    }
}

/// Off-chain record of effort spent, in observations per agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortLedger {
    observations: BTreeMap<AccountId, Vec<u64>>,
}

impl EffortLedger {
    pub fn charge(&mut self, agent: &AccountId, design: u64) {
        self.observations.entry(agent.clone()).or_default().push(design);
    }

    pub fn count(&self, agent: &AccountId) -> u64 {
        self.observations.get(agent).map_or(0, |v| v.len() as u64)
    }

    pub fn total(&self) -> u64 {
        self.observations.values().map(|v| v.len() as u64).sum()
    }
}

/// Signs each requested address once; repeated requests get the same signature.
#[derive(Debug, Clone)]
pub struct IdentityProvider {
    key: SigningKey,
    issued: BTreeMap<AccountId, IdentitySignature>,
}

impl IdentityProvider {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { key: SigningKey::from_bytes(&seed), issued: BTreeMap::new() }
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey::of(&self.key)
    }

    pub fn issue(&mut self, account: &AccountId) -> IdentitySignature {
        let key = &self.key;
        *self.issued.entry(account.clone()).or_insert_with(|| crypto::sign_identity(key, account))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub tick: Tick,
    pub design: u64,
    pub player: AccountId,
    pub hash_verified: bool,
}

/// Semi-trusted fair-exchange party. Marks receipt only after a verified delivery.
#[derive(Debug, Clone)]
pub struct ManagerActor {
    pub id: AccountId,
    designs: BTreeMap<u64, Vec<u8>>,
    deliveries: Vec<Delivery>,
}

impl ManagerActor {
    pub fn new(id: impl Into<AccountId>) -> Self {
        Self { id: id.into(), designs: BTreeMap::new(), deliveries: Vec::new() }
    }

    /// Takes the vendor's file; keeps it only if it hashes to the announced digest.
    pub fn accept_design(&mut self, design: u64, bytes: &[u8], announced: &Hash32) -> bool {
        if crypto::design_hash(bytes) != *announced {
            return false;
        }
        self.designs.insert(design, bytes.to_vec());
        true
    }

    /// Sends the design to `player` and returns the delivery if the player's
    /// own hash check succeeds.
    pub fn deliver(&mut self, design: u64, player: &AccountId, announced: &Hash32, tick: Tick) -> Option<Delivery> {
        let bytes = self.designs.get(&design)?;
        let delivery = Delivery {
            tick,
            design,
            player: player.clone(),
            hash_verified: crypto::design_hash(bytes) == *announced,
        };
        self.deliveries.push(delivery.clone());
        delivery.hash_verified.then_some(delivery)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }
}

/// A player with a strategy and its own RNG stream.
#[derive(Debug, Clone)]
pub struct PlayerAgent {
    pub id: AccountId,
    pub strategy: Strategy,
    pub deposit: Money,
    rng: ChaCha8Rng,
}

impl PlayerAgent {
    pub fn new(id: impl Into<AccountId>, strategy: Strategy, deposit: Money, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { id: id.into(), strategy, deposit, rng }
    }

    fn fresh_blinding(&mut self) -> Blinding {
        let mut b = [0u8; 32];
        self.rng.fill_bytes(&mut b);
        Blinding(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AgentAction {
    Abstained,
    Registered,
    RegistrationRejected { reason: String },
    NotDelivered,
    Received,
    FreeRode,
    Committed { vote: Vote },
    CommitRejected { reason: String },
    Revealed { vote: Vote },
    RevealRejected { reason: String },
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub actions: BTreeMap<AccountId, Vec<AgentAction>>,
    pub output: Option<TransactionOutput>,
    pub calculation_error: Option<ContractError>,
    /// First tick after the round; the next round may start here.
    pub end: Tick,
}

/// What the round driver needs besides the players.
pub struct RoundContext<'a> {
    pub design: u64,
    pub phase: Phase,
    pub truth: bool,
    /// Bytes the vendor hands to the manager.
    pub design_bytes: &'a [u8],
    /// Tick at which the round's commit clock started.
    pub start: Tick,
    /// Account that sends `calculateResult`.
    pub caller: AccountId,
}

fn rejection(err: &ContractError) -> String {
    err.to_string()
}

/// Drives one commit-reveal round: registration, distribution, commit,
/// reveal and result calculation. Contract rejections become agent actions.
pub fn run_party_round(
    sim: &mut Simulation<VotingContract>,
    ctx: &RoundContext<'_>,
    players: &mut [PlayerAgent],
    manager: &mut ManagerActor,
    ip: &mut IdentityProvider,
    effort: &mut EffortLedger,
) -> Result<RoundOutcome, AgentError> {
    let dc = sim.machine().constants().delta_commit;
    let dr = sim.machine().constants().delta_reveal;
    if dc < 3 {
        return Err(AgentError::WindowTooShort(dc));
    }
    let j = ctx.design;
    let announced = sim.machine().design(j).map(|d| d.design_hash).ok_or(AgentError::UnknownDesign(j))?;
    let mut actions: BTreeMap<AccountId, Vec<AgentAction>> = BTreeMap::new();

    // Registration.
    let reg_tick = ctx.start + 1;
    for p in players.iter() {
        if !p.strategy.participates() {
            actions.entry(p.id.clone()).or_default().push(AgentAction::Abstained);
            continue;
        }
        let ip_signature = ip.issue(&p.id);
        sim.submit(p.id.clone(), ContractCall::Register { design: j, ip_signature, deposit: p.deposit }, reg_tick)?;
    }
    let mut registered = Vec::new();
    for r in sim.advance(reg_tick) {
        let entry = actions.entry(r.ticket.sender.clone()).or_default();
        match r.outcome {
            Ok(_) => {
                entry.push(AgentAction::Registered);
                registered.push(r.ticket.sender);
            }
            Err(e) => entry.push(AgentAction::RegistrationRejected { reason: rejection(&e) }),
        }
    }

    // Distribution: the manager verifies the vendor's file, then delivers.
    let dist_tick = reg_tick + 1;
    let accepted = manager.accept_design(j, ctx.design_bytes, &announced);
    let mut delivered = Vec::new();
    for p in &registered {
        if accepted && manager.deliver(j, p, &announced, dist_tick).is_some() {
            sim.submit(manager.id.clone(), ContractCall::SetReceived { design: j, player: p.clone() }, dist_tick)?;
            delivered.push(p.clone());
        } else {
            actions.entry(p.clone()).or_default().push(AgentAction::NotDelivered);
        }
    }
    let mut received = Vec::new();
    for r in sim.advance(dist_tick) {
        if let (Ok(_), ContractCall::SetReceived { player, .. }) = (&r.outcome, &r.call) {
            actions.entry(player.clone()).or_default().push(AgentAction::Received);
            received.push(player.clone());
        }
    }

    // Commit.
    let commit_tick = dist_tick + 1;
    let mut openings: BTreeMap<AccountId, Commitment> = BTreeMap::new();
    for p in players.iter_mut().filter(|p| received.contains(&p.id)) {
        let Some((vote, spent_effort)) = p.strategy.decide(ctx.truth, &mut p.rng) else {
            actions.entry(p.id.clone()).or_default().push(AgentAction::FreeRode);
            continue;
        };
        if spent_effort && ctx.phase == Phase::Evaluation {
            effort.charge(&p.id, j);
        }
        let blinding = p.fresh_blinding();
        let c = Commitment::new(vote, blinding);
        sim.submit(p.id.clone(), ContractCall::Commit { design: j, digest: c.digest }, commit_tick)?;
        openings.insert(p.id.clone(), c);
    }
    for r in sim.advance(commit_tick) {
        let entry = actions.entry(r.ticket.sender.clone()).or_default();
        match r.outcome {
            Ok(_) => entry.push(AgentAction::Committed { vote: openings[&r.ticket.sender].vote }),
            Err(e) => {
                entry.push(AgentAction::CommitRejected { reason: rejection(&e) });
                openings.remove(&r.ticket.sender);
            }
        }
    }

    // Reveal.
    let reveal_tick = ctx.start + dc + 1;
    for (id, c) in &openings {
        sim.submit(id.clone(), ContractCall::Reveal { design: j, vote: c.vote, blinding: c.blinding }, reveal_tick)?;
    }
    for r in sim.advance(reveal_tick) {
        let entry = actions.entry(r.ticket.sender.clone()).or_default();
        match r.outcome {
            Ok(_) => entry.push(AgentAction::Revealed { vote: openings[&r.ticket.sender].vote }),
            Err(e) => entry.push(AgentAction::RevealRejected { reason: rejection(&e) }),
        }
    }

    // Result calculation.
    let calc_tick = ctx.start + dc + dr + 1;
    sim.submit(ctx.caller.clone(), ContractCall::CalculateResult { design: j }, calc_tick)?;
    let mut output = None;
    let mut calculation_error = None;
    for r in sim.advance(calc_tick) {
        match r.outcome {
            Ok(CallOutput::Calculated(out)) => output = Some(out),
            Ok(_) => {}
            Err(e) => calculation_error = Some(e),
        }
    }

    Ok(RoundOutcome { actions, output, calculation_error, end: calc_tick + 1 })
}

/// Net settlement income minus effort spent, from the event log.
pub fn utility(agent: &AccountId, events: &[LedgerEvent], effort: &EffortLedger, effort_cost: Money) -> Money {
    let payouts: Money = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ResultCalculated { settlements, .. } => {
                settlements.iter().find(|s| &s.player == agent).map(|s| s.amount)
            }
            _ => None,
        })
        .sum();
    payouts - effort_cost * effort.count(agent) as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_observer_always_reports_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| observe(1.0, true, &mut rng) == Vote::Valid));
        assert!((0..1000).all(|_| observe(1.0, false, &mut rng) == Vote::Invalid));
    }

    #[test]
    fn observation_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let coin = (0..n).filter(|_| observe(0.5, true, &mut rng) == Vote::Valid).count() as f64 / n as f64;
        assert!((coin - 0.5).abs() < 0.02, "{coin}");
        let sharp = (0..n).filter(|_| observe(0.9, false, &mut rng) == Vote::Invalid).count() as f64 / n as f64;
        assert!((sharp - 0.9).abs() < 0.02, "{sharp}");
    }

    #[test]
    fn strategy_validation() {
        assert!(Strategy::TruthfulEffort { quality: 0.4 }.validate().is_err());
        assert!(Strategy::TruthfulEffort { quality: 0.5 }.validate().is_ok());
        assert!(Strategy::Guess { bias: 1.2 }.validate().is_err());
        assert!(Strategy::FreeRide.validate().is_ok());
    }

    #[test]
    fn strategies_are_pure_given_seed() {
        let strategies = [
            Strategy::TruthfulEffort { quality: 0.7 },
            Strategy::Guess { bias: 0.5 },
            Strategy::Colluder { group: "g".into(), target: Vote::Invalid },
        ];
        for s in strategies {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                (0..50).map(|i| s.decide(i % 3 == 0, &mut rng)).collect::<Vec<_>>()
            };
            assert_eq!(run(), run());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Strategy::FreeRide.decide(true, &mut rng), None);
        assert_eq!(Strategy::FixedVote { vote: Vote::Abstain }.decide(true, &mut rng), Some((Vote::Abstain, false)));
    }

    #[test]
    fn identity_provider_signs_once() {
        let mut ip = IdentityProvider::from_seed([3; 32]);
        let a = AccountId::from("a");
        let s1 = ip.issue(&a);
        assert_eq!(ip.issue(&a), s1);
        assert!(crypto::verify_identity(&ip.public_key(), &a, &s1));
    }

    #[test]
    fn manager_refuses_tampered_design() {
        let mut m = ManagerActor::new("m");
        let good = b"design bytes".to_vec();
        let h = crypto::design_hash(&good);
        assert!(!m.accept_design(0, b"tampered", &h));
        assert!(m.deliver(0, &"p".into(), &h, 1).is_none());
        assert!(m.accept_design(0, &good, &h));
        assert!(m.deliver(0, &"p".into(), &h, 1).unwrap().hash_verified);
        assert_eq!(m.deliveries().len(), 1);
    }

    #[test]
    fn utility_of_a_non_participant_is_zero() {
        let effort = EffortLedger::default();
        assert_eq!(utility(&"nobody".into(), &[], &effort, Money::from_units(1)), Money::ZERO);
    }
}
