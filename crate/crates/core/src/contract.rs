//! Design-voting contract: announce, register, setReceived, commit, reveal,
//! calculateResult, and the second (feedback) round.
//!
//! Every operation validates before it mutates, so a rejected message leaves
//! the contract untouched. Money moves through a single escrow account on the
//! [`Ledger`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{AccountId, EventBody, Ledger, LedgerError, Machine, ReputationEntry, SettlementEntry, Tick};
use crate::crypto::{self, Blinding, Hash32, IdentitySignature, PublicKey};
use crate::money::Money;
use crate::trust::{
    self, PaymentSchedule, Phase, PlayerTrust, ResultCode, Score, Settlement, SettlementReason, TrustError, Vote,
    VoteRecord,
};

/// Reputation and weight basis given to a player with no settled history.
pub const DEFAULT_NEWCOMER_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignPhase {
    EvaluationCommit,
    EvaluationReveal,
    OnSaleFeedbackCommit,
    FeedbackReveal,
    Attested,
    Removed,
    Annulled,
}

impl DesignPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, DesignPhase::Attested | DesignPhase::Removed | DesignPhase::Annulled)
    }

    pub fn round(self) -> Option<Phase> {
        match self {
            DesignPhase::EvaluationCommit | DesignPhase::EvaluationReveal => Some(Phase::Evaluation),
            DesignPhase::OnSaleFeedbackCommit | DesignPhase::FeedbackReveal => Some(Phase::Feedback),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractConstants {
    pub delta_commit: Tick,
    pub delta_reveal: Tick,
    pub schedule: PaymentSchedule,
    pub manager: AccountId,
    pub ip_key: PublicKey,
    pub escrow: AccountId,
    pub newcomer_reputation: f64,
    pub newcomer_weight_basis: f64,
}

impl ContractConstants {
    pub fn validate(&self) -> Result<(), ContractError> {
        if self.delta_commit == 0 || self.delta_reveal == 0 {
            return Err(ContractError::InvalidConstants("commit and reveal windows must be positive"));
        }
        if !(0.0..=1.0).contains(&self.newcomer_reputation) {
            return Err(ContractError::InvalidConstants("newcomer reputation must lie in [0, 1]"));
        }
        if !(self.newcomer_weight_basis.is_finite() && self.newcomer_weight_basis >= 0.0) {
            return Err(ContractError::InvalidConstants("newcomer weight basis must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutput {
    pub result: ResultCode,
    pub final_score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub index: u64,
    pub vendor: AccountId,
    pub design_hash: Hash32,
    pub announce_time: Tick,
    /// Vendor collateral not yet paid out or refunded. Penalties are added here.
    pub balance: Money,
    pub phase: DesignPhase,
    pub feedback_start: Option<Tick>,
    pub eval_roster: BTreeSet<AccountId>,
    pub feedback_roster: BTreeSet<AccountId>,
    pub eval_output: Option<PhaseOutput>,
    pub feedback_output: Option<PhaseOutput>,
}

impl DesignRecord {
    fn round_start(&self, round: Phase) -> Option<Tick> {
        match round {
            Phase::Evaluation => Some(self.announce_time),
            Phase::Feedback => self.feedback_start,
        }
    }

    /// The phase implied by the stored phase and the clock.
    pub fn phase_at(&self, now: Tick, delta_commit: Tick) -> DesignPhase {
        match self.phase {
            DesignPhase::EvaluationCommit if now > self.announce_time + delta_commit => DesignPhase::EvaluationReveal,
            DesignPhase::OnSaleFeedbackCommit => match self.feedback_start {
                Some(start) if now > start + delta_commit => DesignPhase::FeedbackReveal,
                _ => DesignPhase::OnSaleFeedbackCommit,
            },
            p => p,
        }
    }

    pub fn roster(&self, round: Phase) -> &BTreeSet<AccountId> {
        match round {
            Phase::Evaluation => &self.eval_roster,
            Phase::Feedback => &self.feedback_roster,
        }
    }

    fn roster_mut(&mut self, round: Phase) -> &mut BTreeSet<AccountId> {
        match round {
            Phase::Evaluation => &mut self.eval_roster,
            Phase::Feedback => &mut self.feedback_roster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractPlayerState {
    pub account: AccountId,
    pub ip_signature: IdentitySignature,
    pub reputation: Score,
    /// `|T(i)|`, or the newcomer basis while the history is empty.
    pub weight_basis: f64,
    pub trust: PlayerTrust,
    pub deposits: BTreeMap<u64, Money>,
    pub commitments: BTreeMap<u64, Hash32>,
    pub votes: BTreeMap<u64, Vote>,
    pub received: BTreeMap<u64, bool>,
}

impl ContractPlayerState {
    /// Stored reputation equals the formula over the stored history (or the
    /// newcomer value while the history is empty).
    pub fn reputation_consistent(&self, newcomer: f64) -> bool {
        if self.trust.history().is_empty() {
            self.reputation.value() == newcomer
        } else {
            self.reputation == self.trust.reputation()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContractError {
    #[error("invalid contract constants: {0}")]
    InvalidConstants(&'static str),
    #[error("unknown design {0}")]
    UnknownDesign(u64),
    #[error("collateral must be positive")]
    ZeroCollateral,
    #[error("identity signature does not verify")]
    InvalidSignature,
    #[error("deposit {offered} below required {required}")]
    InsufficientDeposit { required: Money, offered: Money },
    #[error("roster is full ({cap} players)")]
    RosterFull { cap: u64 },
    #[error("player already registered for this design")]
    AlreadyRegistered,
    #[error("evaluation players cannot join the feedback round of the same design")]
    PhaseOverlap,
    #[error("registration is closed in phase {0:?}")]
    RegistrationClosed(DesignPhase),
    #[error("only the manager may mark receipt")]
    NotManager,
    #[error("player not registered for the open round")]
    NotRegistered,
    #[error("round is not accepting messages in phase {0:?}")]
    RoundClosed(DesignPhase),
    #[error("player has not been marked as having received the design")]
    NotReceived,
    #[error("commit window closed at {deadline} (now {now})")]
    CommitWindowClosed { deadline: Tick, now: Tick },
    #[error("feedback round has not been opened")]
    FeedbackNotOpen,
    #[error("reveal window is ({opens}, {closes}], now {now}")]
    OutsideRevealWindow { opens: Tick, closes: Tick, now: Tick },
    #[error("no commitment on record")]
    NoCommitment,
    #[error("opening does not match the commitment")]
    CommitmentMismatch,
    #[error("vote already revealed")]
    AlreadyRevealed,
    #[error("result cannot be calculated before {after} (now {now})")]
    TooEarly { after: Tick, now: Tick },
    #[error("feedback round cannot open in phase {0:?}")]
    FeedbackUnavailable(DesignPhase),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Trust(#[from] TrustError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum ContractCall {
    Announce { design_hash: Hash32, collateral: Money },
    Register { design: u64, ip_signature: IdentitySignature, deposit: Money },
    SetReceived { design: u64, player: AccountId },
    Commit { design: u64, digest: Hash32 },
    Reveal { design: u64, vote: Vote, blinding: Blinding },
    CalculateResult { design: u64 },
    OpenFeedback { design: u64 },
}

/// Result of one round's calculation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionOutput {
    pub design: u64,
    pub phase: Phase,
    pub result: ResultCode,
    pub final_score: Score,
    pub settlements: BTreeMap<AccountId, Settlement>,
    pub vendor_refund: Money,
    pub next_phase: DesignPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallOutput {
    Announced(u64),
    Registered,
    ReceivedSet,
    Committed,
    Revealed,
    Calculated(TransactionOutput),
    FeedbackOpened,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VotingContract {
    constants: ContractConstants,
    designs: Vec<DesignRecord>,
    players: BTreeMap<AccountId, ContractPlayerState>,
}

impl VotingContract {
    pub fn new(constants: ContractConstants) -> Result<Self, ContractError> {
        constants.validate()?;
        Ok(Self { constants, designs: Vec::new(), players: BTreeMap::new() })
    }

    pub fn constants(&self) -> &ContractConstants {
        &self.constants
    }

    pub fn designs(&self) -> &[DesignRecord] {
        &self.designs
    }

    pub fn design(&self, j: u64) -> Option<&DesignRecord> {
        self.designs.get(j as usize)
    }

    pub fn players(&self) -> &BTreeMap<AccountId, ContractPlayerState> {
        &self.players
    }

    pub fn player(&self, id: &AccountId) -> Option<&ContractPlayerState> {
        self.players.get(id)
    }

    /// Maximum evaluation roster for a design: `floor(balance / reward)`.
    pub fn roster_cap(&self, j: u64) -> Option<u64> {
        let d = self.design(j)?;
        d.balance.checked_div_floor(self.constants.schedule.reward).map(|c| c.max(0) as u64)
    }

    pub fn phase_at(&self, j: u64, now: Tick) -> Option<DesignPhase> {
        self.design(j).map(|d| d.phase_at(now, self.constants.delta_commit))
    }

    fn design_checked(&self, j: u64) -> Result<&DesignRecord, ContractError> {
        self.design(j).ok_or(ContractError::UnknownDesign(j))
    }

    fn sync_phase(&mut self, j: u64, now: Tick) {
        let dc = self.constants.delta_commit;
        let d = &mut self.designs[j as usize];
        d.phase = d.phase_at(now, dc);
    }

    pub fn announce(
        &mut self,
        ledger: &mut Ledger,
        vendor: &AccountId,
        design_hash: Hash32,
        collateral: Money,
    ) -> Result<u64, ContractError> {
        if !collateral.is_positive() {
            return Err(ContractError::ZeroCollateral);
        }
        let j = self.designs.len() as u64;
        ledger.transfer(vendor, &self.constants.escrow, collateral, Some(j))?;
        let now = ledger.now();
        self.designs.push(DesignRecord {
            index: j,
            vendor: vendor.clone(),
            design_hash,
            announce_time: now,
            balance: collateral,
            phase: DesignPhase::EvaluationCommit,
            feedback_start: None,
            eval_roster: BTreeSet::new(),
            feedback_roster: BTreeSet::new(),
            eval_output: None,
            feedback_output: None,
        });
        ledger.emit(Some(j), EventBody::NewDesign { vendor: vendor.clone(), design_hash, collateral });
        Ok(j)
    }

    pub fn register(
        &mut self,
        ledger: &mut Ledger,
        player: &AccountId,
        ip_signature: IdentitySignature,
        j: u64,
        deposit: Money,
    ) -> Result<(), ContractError> {
        let now = ledger.now();
        let design = self.design_checked(j)?;
        let phase = design.phase_at(now, self.constants.delta_commit);
        let round = match phase {
            DesignPhase::EvaluationCommit => Phase::Evaluation,
            DesignPhase::OnSaleFeedbackCommit => Phase::Feedback,
            other => return Err(ContractError::RegistrationClosed(other)),
        };
        if !crypto::verify_identity(&self.constants.ip_key, player, &ip_signature) {
            return Err(ContractError::InvalidSignature);
        }
        let required = self.constants.schedule.required_deposit();
        if deposit < required {
            return Err(ContractError::InsufficientDeposit { required, offered: deposit });
        }
        if design.roster(round).contains(player) {
            return Err(ContractError::AlreadyRegistered);
        }
        if round == Phase::Feedback && design.eval_roster.contains(player) {
            return Err(ContractError::PhaseOverlap);
        }
        if round == Phase::Evaluation {
            let cap = self.roster_cap(j).unwrap_or(0);
            if design.eval_roster.len() as u64 + 1 > cap {
                return Err(ContractError::RosterFull { cap });
            }
        }

        ledger.transfer(player, &self.constants.escrow, deposit, Some(j))?;
        self.sync_phase(j, now);
        let newcomer_rep = Score::new(self.constants.newcomer_reputation)?;
        let newcomer_basis = self.constants.newcomer_weight_basis;
        let state = self.players.entry(player.clone()).or_insert_with(|| ContractPlayerState {
            account: player.clone(),
            ip_signature,
            reputation: newcomer_rep,
            weight_basis: newcomer_basis,
            trust: PlayerTrust::new(),
            deposits: BTreeMap::new(),
            commitments: BTreeMap::new(),
            votes: BTreeMap::new(),
            received: BTreeMap::new(),
        });
        state.ip_signature = ip_signature;
        state.deposits.insert(j, deposit);
        state.received.insert(j, false);
        self.designs[j as usize].roster_mut(round).insert(player.clone());
        ledger.emit(Some(j), EventBody::Registered { player: player.clone(), phase: round, deposit, ip_signature });
        Ok(())
    }

    /// The round (evaluation or feedback) currently accepting messages.
    fn open_round(&self, j: u64, now: Tick) -> Result<(Phase, DesignPhase), ContractError> {
        let phase = self.design_checked(j)?.phase_at(now, self.constants.delta_commit);
        let round = phase.round().ok_or(ContractError::RoundClosed(phase))?;
        Ok((round, phase))
    }

    pub fn set_received(
        &mut self,
        ledger: &mut Ledger,
        caller: &AccountId,
        player: &AccountId,
        j: u64,
    ) -> Result<(), ContractError> {
        if *caller != self.constants.manager {
            return Err(ContractError::NotManager);
        }
        let now = ledger.now();
        let (round, _) = self.open_round(j, now)?;
        if !self.designs[j as usize].roster(round).contains(player) {
            return Err(ContractError::NotRegistered);
        }
        self.sync_phase(j, now);
        self.players.get_mut(player).expect("rostered players have state").received.insert(j, true);
        ledger.emit(Some(j), EventBody::Received { player: player.clone() });
        Ok(())
    }

    pub fn commit(&mut self, ledger: &mut Ledger, player: &AccountId, digest: Hash32, j: u64) -> Result<(), ContractError> {
        let now = ledger.now();
        let (round, _) = self.open_round(j, now)?;
        let design = &self.designs[j as usize];
        if !design.roster(round).contains(player) || !self.players[player].received.get(&j).copied().unwrap_or(false) {
            return Err(ContractError::NotReceived);
        }
        let start = design.round_start(round).ok_or(ContractError::FeedbackNotOpen)?;
        let deadline = start + self.constants.delta_commit;
        if now > deadline {
            return Err(ContractError::CommitWindowClosed { deadline, now });
        }
        self.sync_phase(j, now);
        self.players.get_mut(player).expect("checked").commitments.insert(j, digest);
        ledger.emit(Some(j), EventBody::Committed { player: player.clone(), digest });
        Ok(())
    }

    pub fn reveal(
        &mut self,
        ledger: &mut Ledger,
        player: &AccountId,
        vote: Vote,
        blinding: Blinding,
        j: u64,
    ) -> Result<(), ContractError> {
        let now = ledger.now();
        let (round, _) = self.open_round(j, now)?;
        let design = &self.designs[j as usize];
        let start = design.round_start(round).ok_or(ContractError::FeedbackNotOpen)?;
        let opens = start + self.constants.delta_commit;
        let closes = opens + self.constants.delta_reveal;
        if now <= opens || now > closes {
            return Err(ContractError::OutsideRevealWindow { opens, closes, now });
        }
        let state = match self.players.get(player) {
            Some(s) if design.roster(round).contains(player) => s,
            _ => return Err(ContractError::NoCommitment),
        };
        let digest = state.commitments.get(&j).ok_or(ContractError::NoCommitment)?;
        if !crypto::Commitment::opens(digest, vote, &blinding) {
            return Err(ContractError::CommitmentMismatch);
        }
        if state.votes.contains_key(&j) {
            return Err(ContractError::AlreadyRevealed);
        }
        self.sync_phase(j, now);
        self.players.get_mut(player).expect("checked").votes.insert(j, vote);
        ledger.emit(Some(j), EventBody::Revealed { player: player.clone(), vote, blinding });
        Ok(())
    }

    pub fn open_feedback_phase(&mut self, ledger: &mut Ledger, j: u64) -> Result<(), ContractError> {
        let now = ledger.now();
        let design = self.design_checked(j)?;
        if design.phase != DesignPhase::OnSaleFeedbackCommit || design.feedback_start.is_some() {
            return Err(ContractError::FeedbackUnavailable(design.phase_at(now, self.constants.delta_commit)));
        }
        self.designs[j as usize].feedback_start = Some(now);
        ledger.emit(Some(j), EventBody::FeedbackOpened { start: now });
        Ok(())
    }

    pub fn calculate_result(&mut self, ledger: &mut Ledger, j: u64) -> Result<TransactionOutput, ContractError> {
        let now = ledger.now();
        let (round, _) = self.open_round(j, now)?;
        let design = &self.designs[j as usize];
        let start = design.round_start(round).ok_or(ContractError::FeedbackNotOpen)?;
        let after = start + self.constants.delta_commit + self.constants.delta_reveal;
        if now <= after {
            return Err(ContractError::TooEarly { after, now });
        }

        let roster = design.roster(round).clone();
        let received: BTreeMap<AccountId, bool> = roster
            .iter()
            .map(|p| (p.clone(), self.players[p].received.get(&j).copied().unwrap_or(false)))
            .collect();
        let participants: BTreeSet<AccountId> = received.iter().filter(|(_, r)| **r).map(|(p, _)| p.clone()).collect();
        let revealed: BTreeMap<AccountId, Vote> = participants
            .iter()
            .filter_map(|p| self.players[p].votes.get(&j).map(|v| (p.clone(), *v)))
            .collect();
        let reputations: BTreeMap<AccountId, Score> =
            participants.iter().map(|p| (p.clone(), self.players[p].reputation)).collect();
        let counts: BTreeMap<AccountId, f64> =
            participants.iter().map(|p| (p.clone(), self.players[p].weight_basis)).collect();

        let (final_score, weights) = if participants.is_empty() {
            (Score::NEUTRAL, BTreeMap::new())
        } else {
            let weights = trust::compute_weights(&counts, &participants)?;
            let votes: BTreeMap<AccountId, Vote> = participants
                .iter()
                .map(|p| (p.clone(), revealed.get(p).copied().unwrap_or(Vote::Abstain)))
                .collect();
            (trust::compute_final_score(&votes, &reputations, &weights)?, weights)
        };
        let schedule = self.constants.schedule;
        let result = trust::decide_result(final_score, schedule.quality_threshold)?;

        let settlements = match round {
            Phase::Evaluation => {
                trust::settle_evaluation(&roster, &revealed, &received, &reputations, &weights, &schedule, result)?
            }
            Phase::Feedback => roster
                .iter()
                .map(|p| {
                    let reason = if result == ResultCode::Annulled {
                        SettlementReason::Annulled
                    } else if received[p] {
                        SettlementReason::Feedback
                    } else {
                        SettlementReason::NotReceived
                    };
                    (p.clone(), Settlement { amount: Money::ZERO, reason })
                })
                .collect(),
        };

        let paid: Money = settlements.values().map(|s| s.amount).sum();
        let vendor_refund = if round == Phase::Evaluation {
            design.balance.checked_sub(paid).filter(|m| !m.is_negative()).ok_or(ContractError::Ledger(
                LedgerError::Overdraw { account: self.constants.escrow.clone(), balance: design.balance, amount: paid },
            ))?
        } else {
            design.balance
        };

        let next_phase = match (round, result) {
            (Phase::Evaluation, ResultCode::Valid) => DesignPhase::OnSaleFeedbackCommit,
            (Phase::Feedback, ResultCode::Valid) => DesignPhase::Attested,
            (_, ResultCode::Invalid) => DesignPhase::Removed,
            (_, ResultCode::Annulled) => DesignPhase::Annulled,
        };

        // Money first: any ledger failure aborts before contract state changes.
        let escrow = self.constants.escrow.clone();
        for (p, s) in &settlements {
            let deposit = self.players[p].deposits.get(&j).copied().unwrap_or(Money::ZERO);
            ledger.transfer(&escrow, p, deposit + s.amount, Some(j))?;
        }
        let vendor = design.vendor.clone();
        ledger.transfer(&escrow, &vendor, vendor_refund, Some(j))?;

        let mut reputation_log = Vec::new();
        if result != ResultCode::Annulled {
            for p in &participants {
                let state = self.players.get_mut(p).expect("participant state");
                let before = state.reputation;
                state.trust.record(VoteRecord {
                    design: j,
                    phase: round,
                    vote: revealed.get(p).copied().unwrap_or(Vote::Abstain),
                    result,
                    final_score,
                });
                state.reputation = state.trust.reputation();
                state.weight_basis = state.trust.transaction_count() as f64;
                reputation_log.push(ReputationEntry {
                    player: p.clone(),
                    before: before.value(),
                    after: state.reputation.value(),
                    transactions: state.trust.transaction_count(),
                });
            }
        }

        let design = &mut self.designs[j as usize];
        design.balance = Money::ZERO;
        design.phase = next_phase;
        let output = PhaseOutput { result, final_score };
        match round {
            Phase::Evaluation => design.eval_output = Some(output),
            Phase::Feedback => design.feedback_output = Some(output),
        }

        ledger.emit(
            Some(j),
            EventBody::ResultCalculated {
                phase: round,
                final_score: final_score.value(),
                result,
                settlements: settlements
                    .iter()
                    .map(|(p, s)| SettlementEntry { player: p.clone(), amount: s.amount, reason: s.reason })
                    .collect(),
                reputations: reputation_log,
                vendor_refund,
                next_phase,
            },
        );

        Ok(TransactionOutput { design: j, phase: round, result, final_score, settlements, vendor_refund, next_phase })
    }
}

impl Machine for VotingContract {
    type Call = ContractCall;
    type Output = CallOutput;
    type Error = ContractError;

    fn execute(&mut self, ledger: &mut Ledger, sender: &AccountId, call: &ContractCall) -> Result<CallOutput, ContractError> {
        match call {
            ContractCall::Announce { design_hash, collateral } => {
                self.announce(ledger, sender, *design_hash, *collateral).map(CallOutput::Announced)
            }
            ContractCall::Register { design, ip_signature, deposit } => {
                self.register(ledger, sender, *ip_signature, *design, *deposit).map(|_| CallOutput::Registered)
            }
            ContractCall::SetReceived { design, player } => {
                self.set_received(ledger, sender, player, *design).map(|_| CallOutput::ReceivedSet)
            }
            ContractCall::Commit { design, digest } => {
                self.commit(ledger, sender, *digest, *design).map(|_| CallOutput::Committed)
            }
            ContractCall::Reveal { design, vote, blinding } => {
                self.reveal(ledger, sender, *vote, *blinding, *design).map(|_| CallOutput::Revealed)
            }
            ContractCall::CalculateResult { design } => {
                self.calculate_result(ledger, *design).map(CallOutput::Calculated)
            }
            ContractCall::OpenFeedback { design } => {
                self.open_feedback_phase(ledger, *design).map(|_| CallOutput::FeedbackOpened)
            }
        }
    }
}
