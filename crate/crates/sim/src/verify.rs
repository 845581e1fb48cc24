//! Independent trace verification: replays every message through a fresh
//! contract and recomputes every result with exact rationals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use attest_core::chain::{AccountId, EventBody, Ledger, LedgerEvent, ReputationEntry, SettlementEntry, Simulation};
use attest_core::contract::{DesignPhase, VotingContract};
use attest_core::money::Money;
use attest_core::trust::{PaymentSchedule, PaymentVariant, Phase, ResultCode, SettlementReason, Vote};
use num_traits::{One, Signed, Zero};

use crate::exact::{self, Q};
use crate::trace::{self, Header, TraceLine, TRACE_VERSION};

/// Final scores may differ from the exact value by this much.
pub const SCORE_TOLERANCE: f64 = 1e-9;
/// Exact values this close to a decision boundary defer to the logged decision.
pub const BOUNDARY_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Verification {
    pub messages: usize,
    pub events: usize,
    pub results_checked: usize,
    pub divergence: Option<Divergence>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub fn verify_trace(path: &Path) -> Result<Verification, VerifyError> {
    let text = std::fs::read_to_string(path).map_err(|source| VerifyError::Io { path: path.to_owned(), source })?;
    Ok(verify_lines(text.lines()))
}

pub fn verify_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Verification {
    let mut v = Verification::default();
    if let Err(d) = run(lines, &mut v) {
        v.divergence = Some(d);
    }
    v
}

fn fail<T>(line: usize, reason: impl Into<String>) -> Result<T, Divergence> {
    Err(Divergence { line, reason: reason.into() })
}

fn run<'a>(lines: impl IntoIterator<Item = &'a str>, stats: &mut Verification) -> Result<(), Divergence> {
    let mut lines = lines.into_iter().enumerate().map(|(i, l)| (i + 1, l));
    let header = match lines.next() {
        None => return fail(1, "empty trace"),
        Some((n, raw)) => match serde_json::from_str::<TraceLine>(raw) {
            Ok(TraceLine::Header(h)) => h,
            Ok(_) => return fail(n, "first record must be the header"),
            Err(e) => return fail(n, format!("malformed record: {e}")),
        },
    };
    if header.trace_version != TRACE_VERSION {
        return fail(1, format!("unsupported trace version {}", header.trace_version));
    }
    check_schedule(&header).or_else(|r| fail(1, r))?;
    let ledger = Ledger::genesis(header.accounts.clone()).or_else(|e| fail(1, format!("genesis: {e}")))?;
    let contract = VotingContract::new(header.constants.clone()).or_else(|e| fail(1, format!("constants: {e}")))?;
    let mut sim = Simulation::new(ledger, contract);
    let mut oracle = Oracle::new(&header);

    let mut expected: VecDeque<LedgerEvent> = VecDeque::new();
    let mut produced = 0usize;
    let mut last_key: Option<(u64, AccountId, u64)> = None;
    let mut finished = false;
    let mut line_no = 1;

    for (n, raw) in lines {
        line_no = n;
        if finished {
            return fail(n, "record after the final record");
        }
        let record: TraceLine = serde_json::from_str(raw).or_else(|e| fail(n, format!("malformed record: {e}")))?;
        match record {
            TraceLine::Header(_) => return fail(n, "second header"),
            TraceLine::Message(m) => {
                if let Some(ev) = expected.front() {
                    return fail(n, format!("replay produced event {} ({}) that the trace omits", ev.seq, ev.body.kind()));
                }
                let key = (m.tick, m.sender.clone(), m.nonce);
                if let Some(prev) = &last_key {
                    if key <= *prev {
                        return fail(
                            n,
                            format!(
                                "message (tick {}, sender {}, nonce {}) is out of scheduler order",
                                m.tick, m.sender, m.nonce
                            ),
                        );
                    }
                }
                last_key = Some(key);
                sim.submit_with_nonce(m.sender.clone(), m.nonce, m.call.clone(), m.tick)
                    .or_else(|e| fail(n, format!("message cannot be scheduled: {e}")))?;
                let receipts = sim.advance(m.tick);
                if receipts.len() != 1 {
                    return fail(n, format!("replay executed {} messages, expected 1", receipts.len()));
                }
                let replay_error = receipts[0].outcome.as_ref().err().map(|e| e.to_string());
                if replay_error != m.error {
                    return fail(n, format!("outcome differs from replay: logged {:?}, replay {:?}", m.error, replay_error));
                }
                let events = sim.ledger().events();
                expected.extend(events[produced..].iter().cloned());
                produced = events.len();
                stats.messages += 1;
            }
            TraceLine::Event(_) => {
                let Some(ev) = expected.pop_front() else {
                    return fail(n, "event was not produced by any replayed message");
                };
                let want = TraceLine::Event(ev.clone()).to_json();
                if want != raw {
                    return fail(n, format!("event differs from replay; replay has {want}"));
                }
                oracle.apply(&ev).or_else(|r| fail(n, r))?;
                stats.events += 1;
                if matches!(ev.body, EventBody::ResultCalculated { .. }) {
                    stats.results_checked += 1;
                }
            }
            TraceLine::Final(_) => {
                if let Some(ev) = expected.front() {
                    return fail(n, format!("replay produced event {} ({}) that the trace omits", ev.seq, ev.body.kind()));
                }
                let want = trace::footer(sim.ledger().balances()).to_json();
                if want != raw {
                    return fail(n, format!("final balances differ from replay; replay has {want}"));
                }
                finished = true;
            }
        }
    }
    if !finished {
        return fail(line_no + 1, "missing final record");
    }
    Ok(())
}

fn check_schedule(h: &Header) -> Result<(), String> {
    let s = h.constants.schedule;
    let rebuilt = PaymentSchedule::new(s.effort_cost, s.quality_threshold, s.epsilon, s.variant)
        .map_err(|e| format!("payment schedule: {e}"))?;
    if rebuilt != s {
        return Err(format!("payment schedule does not follow from its parameters (expected reward {})", rebuilt.reward));
    }
    let exact = exact::reward_micro(s.effort_cost.micro(), s.quality_threshold, s.variant == PaymentVariant::Derivation);
    if (exact::to_f64(&exact) - s.reward.micro() as f64).abs() > 1.0 {
        return Err(format!("reward {} is not the rounded exact reward", s.reward));
    }
    if s.penalty != -s.reward - s.epsilon {
        return Err("penalty must equal -reward - epsilon".into());
    }
    Ok(())
}

#[derive(Default)]
struct DesignState {
    balance: Money,
    round_of: BTreeMap<AccountId, Phase>,
    received: BTreeSet<AccountId>,
    votes: BTreeMap<AccountId, i64>,
}

/// Rebuilds rosters, votes and histories from the event stream alone.
struct Oracle {
    q: f64,
    schedule: PaymentSchedule,
    newcomer_rep: Q,
    newcomer_basis: Q,
    designs: BTreeMap<u64, DesignState>,
    history: BTreeMap<AccountId, History>,
}

/// Running sums of `a*r*FS` and `FS` over non-annulled records.
#[derive(Default)]
struct History {
    num: Q,
    den: Q,
    count: u64,
}

impl History {
    fn push(&mut self, vote: i64, result: i64, fs: &Q) {
        self.num += exact::from_int(vote * result) * fs;
        self.den += fs;
        self.count += 1;
    }

    fn reputation(&self) -> Q {
        if self.den.is_zero() {
            exact::half()
        } else {
            exact::half() * (&self.num / &self.den + Q::one())
        }
    }
}

impl Oracle {
    fn new(h: &Header) -> Self {
        Self {
            q: h.constants.schedule.quality_threshold,
            schedule: h.constants.schedule,
            newcomer_rep: exact::from_f64(h.constants.newcomer_reputation),
            newcomer_basis: exact::from_f64(h.constants.newcomer_weight_basis),
            designs: BTreeMap::new(),
            history: BTreeMap::new(),
        }
    }

    fn reputation(&self, p: &AccountId) -> Q {
        match self.history.get(p) {
            Some(h) if h.count > 0 => h.reputation(),
            _ => self.newcomer_rep.clone(),
        }
    }

    fn basis(&self, p: &AccountId) -> Q {
        match self.history.get(p) {
            Some(h) if h.count > 0 => exact::from_int(h.count as i64),
            _ => self.newcomer_basis.clone(),
        }
    }

    fn design_mut(&mut self, j: Option<u64>) -> Result<&mut DesignState, String> {
        let j = j.ok_or("event without a design index")?;
        self.designs.get_mut(&j).ok_or_else(|| format!("event for unannounced design {j}"))
    }

    fn apply(&mut self, ev: &LedgerEvent) -> Result<(), String> {
        let j = ev.design;
        match &ev.body {
            EventBody::NewDesign { collateral, .. } => {
                let j = j.ok_or("design announcement without an index")?;
                let d = self.designs.entry(j).or_default();
                d.balance = *collateral;
            }
            EventBody::Registered { player, phase, .. } => {
                self.design_mut(j)?.round_of.insert(player.clone(), *phase);
            }
            EventBody::Received { player } => {
                self.design_mut(j)?.received.insert(player.clone());
            }
            EventBody::Revealed { player, vote, .. } => {
                self.design_mut(j)?.votes.insert(player.clone(), vote.value());
            }
            EventBody::ResultCalculated { phase, final_score, result, settlements, reputations, vendor_refund, next_phase } => {
                let jj = j.ok_or("result without a design index")?;
                self.check_result(jj, *phase, *final_score, *result, settlements, reputations, *vendor_refund, *next_phase)?;
            }
            EventBody::Committed { .. } | EventBody::FeedbackOpened { .. } | EventBody::Transfer { .. } => {}
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn check_result(
        &mut self,
        j: u64,
        round: Phase,
        logged_fs: f64,
        result: ResultCode,
        settlements: &[SettlementEntry],
        reputations: &[ReputationEntry],
        vendor_refund: Money,
        next_phase: DesignPhase,
    ) -> Result<(), String> {
        let d = self.designs.get(&j).ok_or_else(|| format!("result for unannounced design {j}"))?;
        let roster: Vec<AccountId> = d.round_of.iter().filter(|(_, r)| **r == round).map(|(p, _)| p.clone()).collect();
        let participants: Vec<AccountId> = roster.iter().filter(|p| d.received.contains(*p)).cloned().collect();
        let votes: Vec<i64> = participants.iter().map(|p| d.votes.get(p).copied().unwrap_or(0)).collect();
        let reps: Vec<Q> = participants.iter().map(|p| self.reputation(p)).collect();
        let basis: Vec<Q> = participants.iter().map(|p| self.basis(p)).collect();
        let weights = if participants.is_empty() { Vec::new() } else { exact::weights(&basis) };
        let fs = exact::final_score(&votes, &reps, &weights);
        let fs_f = exact::to_f64(&fs);
        if (fs_f - logged_fs).abs() > SCORE_TOLERANCE {
            return Err(format!("design {j}: final score {logged_fs} but the exact value is {fs_f}"));
        }

        let q = exact::from_f64(self.q);
        let lower = Q::one() - &q;
        let near = |x: &Q| exact::to_f64(&(&fs - x).abs()) <= BOUNDARY_BAND;
        if !(near(&q) || near(&lower)) {
            let want = if fs > q {
                ResultCode::Valid
            } else if fs < lower {
                ResultCode::Invalid
            } else {
                ResultCode::Annulled
            };
            if want != result {
                return Err(format!("design {j}: result {result:?} but the exact score decides {want:?}"));
            }
        }

        if settlements.len() != roster.len() {
            return Err(format!("design {j}: {} settlements for a roster of {}", settlements.len(), roster.len()));
        }
        let s = self.schedule;
        let mut paid = Money::ZERO;
        for (entry, p) in settlements.iter().zip(&roster) {
            if entry.player != *p {
                return Err(format!("design {j}: settlement for {} where {} was expected", entry.player, p));
            }
            let received = d.received.contains(p);
            let vote = d.votes.get(p).copied();
            let mut allowed: Vec<(Money, SettlementReason)> = Vec::new();
            if result == ResultCode::Annulled {
                allowed.push((Money::ZERO, SettlementReason::Annulled));
            } else if !received {
                allowed.push((Money::ZERO, SettlementReason::NotReceived));
            } else if round == Phase::Feedback {
                allowed.push((Money::ZERO, SettlementReason::Feedback));
            } else if vote.is_none() {
                allowed.push((s.penalty, SettlementReason::NoReveal));
            } else if vote == Some(Vote::Abstain.value()) {
                allowed.push((s.penalty, SettlementReason::ZeroVote));
            } else {
                let k = participants.iter().position(|x| x == p).expect("received players participate");
                let (own, rest, mass) = exact::agreement_terms(k, &votes, &reps, &weights);
                let agree = (s.reward, SettlementReason::Agree);
                let disagree = (s.penalty, SettlementReason::Disagree);
                let neutral = (Money::ZERO, SettlementReason::Neutral);
                let tiny = |x: &Q, scale: &Q| !x.is_zero() && exact::to_f64(&x.abs()) <= BOUNDARY_BAND * exact::to_f64(scale).max(1.0);
                if tiny(&rest, &mass) || tiny(&own, &Q::one()) || (rest.is_zero() && !mass.is_zero()) {
                    allowed.extend([agree, disagree, neutral]);
                } else {
                    allowed.push(match (exact::sign(&own), exact::sign(&rest)) {
                        (0, _) | (_, 0) => neutral,
                        (a, b) if a == b => agree,
                        _ => disagree,
                    });
                }
            }
            if !allowed.contains(&(entry.amount, entry.reason)) {
                return Err(format!(
                    "design {j}: {} settled {} ({:?}); expected {}",
                    p,
                    entry.amount,
                    entry.reason,
                    allowed.iter().map(|(m, r)| format!("{m} ({r:?})")).collect::<Vec<_>>().join(" or ")
                ));
            }
            paid += entry.amount;
        }

        let want_refund = if round == Phase::Evaluation { d.balance - paid } else { d.balance };
        if vendor_refund != want_refund {
            return Err(format!("design {j}: vendor refund {vendor_refund}, expected {want_refund}"));
        }
        let want_next = match (round, result) {
            (Phase::Evaluation, ResultCode::Valid) => DesignPhase::OnSaleFeedbackCommit,
            (Phase::Feedback, ResultCode::Valid) => DesignPhase::Attested,
            (_, ResultCode::Invalid) => DesignPhase::Removed,
            (_, ResultCode::Annulled) => DesignPhase::Annulled,
        };
        if next_phase != want_next {
            return Err(format!("design {j}: next phase {next_phase:?}, expected {want_next:?}"));
        }

        if result == ResultCode::Annulled {
            if !reputations.is_empty() {
                return Err(format!("design {j}: annulled round changed reputations"));
            }
        } else {
            if reputations.len() != participants.len() {
                return Err(format!("design {j}: {} reputation updates for {} participants", reputations.len(), participants.len()));
            }
            let fs_logged = exact::from_f64(logged_fs);
            for ((entry, p), (vote, before)) in reputations.iter().zip(&participants).zip(votes.iter().zip(&reps)) {
                if entry.player != *p {
                    return Err(format!("design {j}: reputation update for {} where {} was expected", entry.player, p));
                }
                if (exact::to_f64(before) - entry.before).abs() > SCORE_TOLERANCE {
                    return Err(format!("design {j}: {p} reputation before is {}, exact {}", entry.before, exact::to_f64(before)));
                }
                let h = self.history.entry(p.clone()).or_default();
                h.push(*vote, result.value(), &fs_logged);
                let after = exact::to_f64(&h.reputation());
                if (after - entry.after).abs() > SCORE_TOLERANCE || entry.transactions != h.count {
                    return Err(format!(
                        "design {j}: {p} reputation after is {} over {} transactions, exact {} over {}",
                        entry.after,
                        entry.transactions,
                        after,
                        h.count
                    ));
                }
            }
        }
        self.designs.get_mut(&j).expect("checked above").balance = Money::ZERO;
        Ok(())
    }
}
