//! End-to-end scenario execution.

use std::collections::BTreeMap;

use attest_core::agents::{
    self, run_party_round, AgentError, EffortLedger, GroundTruth, IdentityProvider, ManagerActor, PlayerAgent,
    RoundContext,
};
use attest_core::chain::{AccountId, EventBody, Ledger, Simulation, Tick};
use attest_core::contract::{
    CallOutput, ContractCall, ContractConstants, DesignPhase, TransactionOutput, VotingContract, DEFAULT_NEWCOMER_EPSILON,
};
use attest_core::crypto;
use attest_core::money::Money;
use attest_core::trust::{PaymentSchedule, PaymentVariant, Phase, ResultCode, SettlementReason};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ScenarioConfig, ESCROW, MANAGER, VENDOR};
use crate::trace;
use crate::verify;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("agent error: {0}")]
    Agent(#[from] AgentError),
    /// An internal consistency check failed; `trace` holds the log so far.
    #[error("internal check failed: {message}")]
    Internal { message: String, trace: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub final_score: f64,
    pub result: ResultCode,
    pub vendor_refund: Money,
    pub next_phase: DesignPhase,
}

impl From<&TransactionOutput> for PhaseReport {
    fn from(t: &TransactionOutput) -> Self {
        Self { final_score: t.final_score.value(), result: t.result, vendor_refund: t.vendor_refund, next_phase: t.next_phase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub index: u64,
    pub valid: bool,
    pub tampered: bool,
    pub collateral: Money,
    pub evaluation: Option<PhaseReport>,
    pub feedback: Option<PhaseReport>,
    pub final_state: DesignPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoutRow {
    pub player: AccountId,
    pub design: u64,
    pub phase: Phase,
    pub amount: Money,
    pub reason: SettlementReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReputationRow {
    pub player: AccountId,
    pub design: u64,
    pub phase: Phase,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerReport {
    pub id: AccountId,
    pub strategy: &'static str,
    pub payout: Money,
    pub effort_observations: u64,
    pub utility: Money,
    pub reputation: f64,
    pub transactions: u64,
    pub balance_start: Money,
    pub balance_end: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conservation {
    pub genesis_supply: Money,
    pub final_supply: Money,
    /// Sum of balance changes over all accounts; zero when money is conserved.
    pub balance_delta: Money,
    /// Player utilities + effort spent + vendor, manager and escrow deltas.
    pub utility_tie: Money,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub payment_variant: PaymentVariant,
    pub schedule: PaymentSchedule,
    pub designs: Vec<DesignReport>,
    pub players: Vec<PlayerReport>,
    pub payouts: Vec<PayoutRow>,
    pub reputation: Vec<ReputationRow>,
    pub conservation: Conservation,
    #[serde(skip)]
    pub trace: Vec<String>,
    /// Where the trace was written, once it has been.
    pub event_log: Option<std::path::PathBuf>,
}

impl RunReport {
    pub fn player(&self, id: &str) -> Option<&PlayerReport> {
        self.players.iter().find(|p| p.id.as_str() == id)
    }
}

fn design_bytes(seed: u64, j: u64) -> Vec<u8> {
    format!("design {j} of scenario seed {seed}\n").into_bytes()
}

fn ip_seed(seed: u64) -> [u8; 32] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut out = [0u8; 32];
    rng.fill_bytes(&mut out);
    out
}

/// Runs every design of the scenario through evaluation and, when it passes,
/// feedback.
pub fn run(config: &ScenarioConfig) -> Result<RunReport, RunError> {
    let schedule = config.schedule();
    let seed = config.seed;
    let mut ip = IdentityProvider::from_seed(ip_seed(seed));
    let constants = ContractConstants {
        delta_commit: config.constants.delta_commit,
        delta_reveal: config.constants.delta_reveal,
        schedule,
        manager: AccountId::from(MANAGER),
        ip_key: ip.public_key(),
        escrow: AccountId::from(ESCROW),
        newcomer_reputation: DEFAULT_NEWCOMER_EPSILON,
        newcomer_weight_basis: DEFAULT_NEWCOMER_EPSILON,
    };
    let vendor = AccountId::from(VENDOR);
    let mut genesis: BTreeMap<AccountId, Money> = BTreeMap::new();
    genesis.insert(vendor.clone(), config.vendor_balance());
    genesis.insert(AccountId::from(MANAGER), Money::ZERO);
    genesis.insert(AccountId::from(ESCROW), Money::ZERO);
    for p in &config.players {
        genesis.insert(AccountId::from(p.id.as_str()), p.balance);
    }
    let ledger = Ledger::genesis(genesis.clone()).expect("config validation rules out duplicate or negative accounts");
    let contract = VotingContract::new(constants).expect("constants derive from a validated config");
    let mut sim = Simulation::new(ledger, contract);

    let mut agents: Vec<PlayerAgent> = config
        .players
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let deposit = p.deposit.unwrap_or_else(|| schedule.required_deposit());
            PlayerAgent::new(p.id.as_str(), p.strategy.clone(), deposit, seed, i as u64)
        })
        .collect();
    let mut manager = ManagerActor::new(MANAGER);
    let mut effort = EffortLedger::default();
    let mut truth = GroundTruth::new();
    let mut designs = Vec::new();
    let mut now: Tick = 0;

    let internal = |sim: &Simulation<VotingContract>, message: String| RunError::Internal {
        message,
        trace: trace::render(sim, &genesis),
    };

    for j in 0..config.rounds {
        let dc = config.design(j);
        let bytes = design_bytes(seed, j);
        let hash = crypto::design_hash(&bytes);
        let mut delivered = bytes.clone();
        if dc.tampered {
            delivered.extend_from_slice(b"tampered");
        }
        let collateral = config.collateral(j);
        sim.submit(vendor.clone(), ContractCall::Announce { design_hash: hash, collateral }, now)
            .map_err(AgentError::from)?;
        let announced = sim.advance(now);
        match announced.last().map(|r| &r.outcome) {
            Some(Ok(CallOutput::Announced(k))) if *k == j => {}
            other => return Err(internal(&sim, format!("design {j} announcement: {other:?}"))),
        }
        truth.set(j, dc.valid);

        let eval_output = play_round(&mut sim, &mut agents, &config.evaluators(j), &RoundContext {
            design: j,
            phase: Phase::Evaluation,
            truth: dc.valid,
            design_bytes: &delivered,
            start: now,
            caller: vendor.clone(),
        }, &mut manager, &mut ip, &mut effort)?;
        let (eval, end) = match eval_output {
            (Some(out), end) => (out, end),
            (None, _) => return Err(internal(&sim, format!("design {j}: evaluation produced no result"))),
        };
        now = end;

        let mut feedback = None;
        if eval.result == ResultCode::Valid {
            sim.submit(vendor.clone(), ContractCall::OpenFeedback { design: j }, now).map_err(AgentError::from)?;
            let opened = sim.advance(now);
            if !opened.last().is_some_and(|r| r.is_ok()) {
                return Err(internal(&sim, format!("design {j}: feedback round did not open")));
            }
            let (out, end) = play_round(&mut sim, &mut agents, &config.feedback_roster(j), &RoundContext {
                design: j,
                phase: Phase::Feedback,
                truth: dc.valid,
                design_bytes: &delivered,
                start: now,
                caller: vendor.clone(),
            }, &mut manager, &mut ip, &mut effort)?;
            now = end;
            feedback = Some(out.ok_or_else(|| internal(&sim, format!("design {j}: feedback produced no result")))?);
        }
        let final_state = sim.machine().design(j).map(|d| d.phase).expect("announced");
        designs.push(DesignReport {
            index: j,
            valid: dc.valid,
            tampered: dc.tampered,
            collateral,
            evaluation: Some(PhaseReport::from(&eval)),
            feedback: feedback.as_ref().map(PhaseReport::from),
            final_state,
        });
    }

    let lines = trace::render(&sim, &genesis);
    let verification = verify::verify_lines(lines.iter().map(String::as_str));
    if let Some(d) = verification.divergence {
        return Err(RunError::Internal { message: format!("trace does not verify: {d}"), trace: lines });
    }

    let events = sim.ledger().events();
    let mut payouts = Vec::new();
    let mut reputation = Vec::new();
    for ev in events {
        if let EventBody::ResultCalculated { phase, settlements, reputations, .. } = &ev.body {
            let design = ev.design.expect("results carry a design");
            payouts.extend(settlements.iter().map(|s| PayoutRow {
                player: s.player.clone(),
                design,
                phase: *phase,
                amount: s.amount,
                reason: s.reason,
            }));
            reputation.extend(reputations.iter().map(|r| ReputationRow {
                player: r.player.clone(),
                design,
                phase: *phase,
                before: r.before,
                after: r.after,
            }));
        }
    }

    let balances = sim.ledger().balances();
    let mut players = Vec::new();
    for a in &agents {
        let utility = agents::utility(&a.id, events, &effort, schedule.effort_cost);
        let payout = payouts.iter().filter(|p| p.player == a.id).map(|p| p.amount).sum();
        let state = sim.machine().player(&a.id);
        players.push(PlayerReport {
            id: a.id.clone(),
            strategy: a.strategy.label(),
            payout,
            effort_observations: effort.count(&a.id),
            utility,
            reputation: state.map(|s| s.reputation.value()).unwrap_or(DEFAULT_NEWCOMER_EPSILON),
            transactions: state.map(|s| s.trust.transaction_count()).unwrap_or(0),
            balance_start: genesis[&a.id],
            balance_end: balances[&a.id],
        });
    }

    let genesis_supply: Money = genesis.values().copied().sum();
    let final_supply = sim.ledger().total_supply();
    let balance_delta: Money = balances.iter().map(|(id, b)| *b - genesis[id]).sum();
    let utilities: Money = players.iter().map(|p| p.utility).sum();
    let spent = schedule.effort_cost * effort.total() as i64;
    let party_delta: Money =
        [VENDOR, MANAGER, ESCROW].iter().map(|id| balances[&AccountId::from(*id)] - genesis[&AccountId::from(*id)]).sum();
    let utility_tie = utilities + spent + party_delta;
    let conservation = Conservation {
        genesis_supply,
        final_supply,
        balance_delta,
        utility_tie,
        holds: balance_delta == Money::ZERO && final_supply == genesis_supply && utility_tie == Money::ZERO,
    };
    if !conservation.holds {
        return Err(RunError::Internal { message: format!("conservation violated: {conservation:?}"), trace: lines });
    }

    Ok(RunReport {
        seed,
        payment_variant: config.constants.payment_variant,
        schedule,
        designs,
        players,
        payouts,
        reputation,
        conservation,
        trace: lines,
        event_log: None,
    })
}

/// Runs one round with the given subset of agents, keeping their RNG state.
#[allow(clippy::too_many_arguments)]
fn play_round(
    sim: &mut Simulation<VotingContract>,
    agents: &mut [PlayerAgent],
    roster: &[usize],
    ctx: &RoundContext<'_>,
    manager: &mut ManagerActor,
    ip: &mut IdentityProvider,
    effort: &mut EffortLedger,
) -> Result<(Option<TransactionOutput>, Tick), RunError> {
    let mut party: Vec<PlayerAgent> = roster.iter().map(|i| agents[*i].clone()).collect();
    let outcome = run_party_round(sim, ctx, &mut party, manager, ip, effort)?;
    for (i, a) in roster.iter().zip(party) {
        agents[*i] = a;
    }
    Ok((outcome.output, outcome.end))
}
