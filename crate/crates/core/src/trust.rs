//! Reputation, weighted majority voting and the reward/penalty rules.
//!
//! Everything here is a pure function of its arguments. Player-keyed inputs
//! are `BTreeMap`s, so summation order (and therefore every floating-point
//! result) is independent of insertion order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::money::Money;

/// Tolerance for the "weights sum to one" precondition.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrustError {
    #[error("vote must be -1, 0 or +1, got {0}")]
    InvalidVote(i64),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("result code must be -1, 0 or +1, got {0}")]
    InvalidResultCode(i64),
    #[error("quality threshold {0} outside (0.5, 1]")]
    InvalidQualityThreshold(f64),
    #[error("effort cost must be positive, got {0}")]
    NonPositiveEffortCost(f64),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("reward rounds to zero micro-units")]
    RewardRoundsToZero,
    #[error("roster is empty")]
    EmptyRoster,
    #[error("subject is not a roster member")]
    NotInRoster,
    #[error("transaction count must be a non-negative finite number, got {0}")]
    InvalidCount(f64),
    #[error("votes, reputations and weights must have identical key sets")]
    MismatchedKeys,
    #[error("weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("agreement needs at least two players, got {0}")]
    RosterTooSmall(usize),
    #[error("protocol inconsistency: {0}")]
    ProtocolInconsistency(&'static str),
}

/// A player's answer for one design: valid, invalid, or no answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Vote {
    Invalid,
    Abstain,
    Valid,
}

impl Vote {
    pub fn value(self) -> i64 {
        match self {
            Vote::Invalid => -1,
            Vote::Abstain => 0,
            Vote::Valid => 1,
        }
    }

    pub fn from_validity(valid: bool) -> Self {
        if valid {
            Vote::Valid
        } else {
            Vote::Invalid
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Vote::Invalid => Vote::Valid,
            Vote::Abstain => Vote::Abstain,
            Vote::Valid => Vote::Invalid,
        }
    }
}

impl TryFrom<i64> for Vote {
    type Error = TrustError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Vote::Invalid),
            0 => Ok(Vote::Abstain),
            1 => Ok(Vote::Valid),
            other => Err(TrustError::InvalidVote(other)),
        }
    }
}

impl From<Vote> for i64 {
    fn from(v: Vote) -> i64 {
        v.value()
    }
}

/// A normalized score in `[0, 1]`: final scores and reputations.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub const ZERO: Score = Score(0.0);
    pub const NEUTRAL: Score = Score(0.5);
    pub const ONE: Score = Score(1.0);

    pub fn new(value: f64) -> Result<Self, TrustError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(TrustError::ScoreOutOfRange(value))
        }
    }

    /// Clamps a value that is mathematically in `[0, 1]` but may have
    /// drifted by rounding.
    fn clamped(value: f64) -> Self {
        Score(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = TrustError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Outcome of a weighted majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum ResultCode {
    Invalid,
    Annulled,
    Valid,
}

impl ResultCode {
    pub fn value(self) -> i64 {
        match self {
            ResultCode::Invalid => -1,
            ResultCode::Annulled => 0,
            ResultCode::Valid => 1,
        }
    }
}

impl TryFrom<i64> for ResultCode {
    type Error = TrustError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(ResultCode::Invalid),
            0 => Ok(ResultCode::Annulled),
            1 => Ok(ResultCode::Valid),
            other => Err(TrustError::InvalidResultCode(other)),
        }
    }
}

impl From<ResultCode> for i64 {
    fn from(r: ResultCode) -> i64 {
        r.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Evaluation,
    Feedback,
}

/// One settled participation: the player's vote and the outcome of the
/// phase they voted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub design: u64,
    pub phase: Phase,
    pub vote: Vote,
    pub result: ResultCode,
    pub final_score: Score,
}

/// Accumulated trust of one player. Annulled transactions are never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlayerTrust {
    history: Vec<VoteRecord>,
}

impl PlayerTrust {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a settled record. Annulled records are dropped and `false` is
    /// returned.
    pub fn record(&mut self, rec: VoteRecord) -> bool {
        if rec.result == ResultCode::Annulled {
            return false;
        }
        self.history.push(rec);
        true
    }

    pub fn history(&self) -> &[VoteRecord] {
        &self.history
    }

    /// `|T(i)|`: the number of non-annulled settled transactions.
    pub fn transaction_count(&self) -> u64 {
        self.history.len() as u64
    }

    pub fn reputation(&self) -> Score {
        compute_reputation(&self.history)
    }
}

/// Which closed form to use for the truth-telling reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentVariant {
    /// `C* / (2 q*^2)`.
    #[default]
    Simplified,
    /// `2 C* / (x*^2 + x*)` with `x* = 2 q* - 1`.
    Derivation,
}

impl std::str::FromStr for PaymentVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simplified" => Ok(PaymentVariant::Simplified),
            "derivation" => Ok(PaymentVariant::Derivation),
            other => Err(format!("unknown payment variant `{other}` (expected simplified|derivation)")),
        }
    }
}

impl fmt::Display for PaymentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaymentVariant::Simplified => "simplified",
            PaymentVariant::Derivation => "derivation",
        })
    }
}

pub fn validate_quality_threshold(q: f64) -> Result<(), TrustError> {
    if q > 0.5 && q <= 1.0 {
        Ok(())
    } else {
        Err(TrustError::InvalidQualityThreshold(q))
    }
}

/// Reward for agreeing with the weighted majority, in whole units.
pub fn reward_amount(effort_cost: f64, quality_threshold: f64, variant: PaymentVariant) -> Result<f64, TrustError> {
    if !(effort_cost > 0.0 && effort_cost.is_finite()) {
        return Err(TrustError::NonPositiveEffortCost(effort_cost));
    }
    validate_quality_threshold(quality_threshold)?;
    let q = quality_threshold;
    Ok(match variant {
        PaymentVariant::Simplified => effort_cost / (2.0 * q * q),
        PaymentVariant::Derivation => {
            let x = 2.0 * q - 1.0;
            2.0 * effort_cost / (x * x + x)
        }
    })
}

/// Penalty for disagreeing or staying silent: `-reward - epsilon`.
pub fn penalty_amount(
    effort_cost: f64,
    quality_threshold: f64,
    epsilon: f64,
    variant: PaymentVariant,
) -> Result<f64, TrustError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TrustError::NonPositiveEpsilon(epsilon));
    }
    Ok(-reward_amount(effort_cost, quality_threshold, variant)? - epsilon)
}

/// Fixed-point payment parameters for the evaluation phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentSchedule {
    pub effort_cost: Money,
    pub quality_threshold: f64,
    pub epsilon: Money,
    pub variant: PaymentVariant,
    pub reward: Money,
    pub penalty: Money,
}

impl PaymentSchedule {
    /// The reward is the closed form rounded to the nearest micro-unit; the
    /// penalty is then exactly `-reward - epsilon`.
    pub fn new(
        effort_cost: Money,
        quality_threshold: f64,
        epsilon: Money,
        variant: PaymentVariant,
    ) -> Result<Self, TrustError> {
        if !epsilon.is_positive() {
            return Err(TrustError::NonPositiveEpsilon(epsilon.as_units_f64()));
        }
        let reward = reward_amount(effort_cost.as_units_f64(), quality_threshold, variant)?;
        let reward = Money::from_units_f64(reward).ok_or(TrustError::NonPositiveEffortCost(reward))?;
        if !reward.is_positive() {
            return Err(TrustError::RewardRoundsToZero);
        }
        Ok(Self {
            effort_cost,
            quality_threshold,
            epsilon,
            variant,
            reward,
            penalty: -reward - epsilon,
        })
    }

    /// Minimum deposit a player must escrow: `|penalty|`.
    pub fn required_deposit(&self) -> Money {
        self.penalty.abs()
    }
}

/// `|T(subject)| / sum over roster of |T(k)|`, or `1/|roster|` if every count is zero.
pub fn compute_weight<P: Ord>(
    counts: &BTreeMap<P, f64>,
    roster: &BTreeSet<P>,
    subject: &P,
) -> Result<f64, TrustError> {
    if roster.is_empty() {
        return Err(TrustError::EmptyRoster);
    }
    if !roster.contains(subject) {
        return Err(TrustError::NotInRoster);
    }
    let total = roster_total(counts, roster)?;
    if total == 0.0 {
        return Ok(1.0 / roster.len() as f64);
    }
    Ok(count_of(counts, subject)? / total)
}

/// Weights for every roster member.
pub fn compute_weights<P: Ord + Clone>(
    counts: &BTreeMap<P, f64>,
    roster: &BTreeSet<P>,
) -> Result<BTreeMap<P, f64>, TrustError> {
    if roster.is_empty() {
        return Err(TrustError::EmptyRoster);
    }
    let total = roster_total(counts, roster)?;
    roster
        .iter()
        .map(|p| {
            let w = if total == 0.0 { 1.0 / roster.len() as f64 } else { count_of(counts, p)? / total };
            Ok((p.clone(), w))
        })
        .collect()
}

fn count_of<P: Ord>(counts: &BTreeMap<P, f64>, p: &P) -> Result<f64, TrustError> {
    let c = counts.get(p).copied().unwrap_or(0.0);
    if c.is_finite() && c >= 0.0 {
        Ok(c)
    } else {
        Err(TrustError::InvalidCount(c))
    }
}

fn roster_total<P: Ord>(counts: &BTreeMap<P, f64>, roster: &BTreeSet<P>) -> Result<f64, TrustError> {
    roster.iter().try_fold(0.0, |acc, p| Ok(acc + count_of(counts, p)?))
}

/// Reputation over a vote history. Annulled records carry no weight; an
/// empty history (or one whose final scores are all zero) yields 0.5.
pub fn compute_reputation(history: &[VoteRecord]) -> Score {
    let (num, den) = history
        .iter()
        .filter(|r| r.result != ResultCode::Annulled)
        .fold((0.0, 0.0), |(num, den), r| {
            let fs = r.final_score.value();
            (num + (r.vote.value() * r.result.value()) as f64 * fs, den + fs)
        });
    if den == 0.0 {
        return Score::NEUTRAL;
    }
    Score::clamped(0.5 * (num / den + 1.0))
}

fn check_keys<P: Ord, A, B, C>(
    a: &BTreeMap<P, A>,
    b: &BTreeMap<P, B>,
    c: &BTreeMap<P, C>,
) -> Result<(), TrustError> {
    let same = a.len() == b.len()
        && a.len() == c.len()
        && a.keys().zip(b.keys()).all(|(x, y)| x == y)
        && a.keys().zip(c.keys()).all(|(x, y)| x == y);
    if same {
        Ok(())
    } else {
        Err(TrustError::MismatchedKeys)
    }
}

/// Weighted majority score `((sum a*rep*w) / (sum rep*w) + 1) / 2`.
/// Returns 0.5 when the weighted reputation mass is zero.
pub fn compute_final_score<P: Ord>(
    votes: &BTreeMap<P, Vote>,
    reputations: &BTreeMap<P, Score>,
    weights: &BTreeMap<P, f64>,
) -> Result<Score, TrustError> {
    check_keys(votes, reputations, weights)?;
    if !weights.is_empty() {
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(TrustError::WeightsNotNormalized(sum));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((vote, rep), w) in votes.values().zip(reputations.values()).zip(weights.values()) {
        let mass = rep.value() * w;
        num += vote.value() as f64 * mass;
        den += mass;
    }
    if den == 0.0 {
        return Ok(Score::NEUTRAL);
    }
    Ok(Score::clamped(0.5 * (num / den + 1.0)))
}

/// `+1` above `q*`, `-1` below `1 - q*`, annulled in between.
pub fn decide_result(fs: Score, quality_threshold: f64) -> Result<ResultCode, TrustError> {
    validate_quality_threshold(quality_threshold)?;
    Ok(if fs.value() > quality_threshold {
        ResultCode::Valid
    } else if fs.value() < 1.0 - quality_threshold {
        ResultCode::Invalid
    } else {
        ResultCode::Annulled
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Agree,
    Disagree,
    Neutral,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Compares the sign of the subject's weighted vote with the sign of the
/// weighted vote of everyone else.
pub fn agreement_sign<P: Ord>(
    subject: &P,
    votes: &BTreeMap<P, Vote>,
    reputations: &BTreeMap<P, Score>,
    weights: &BTreeMap<P, f64>,
) -> Result<Agreement, TrustError> {
    check_keys(votes, reputations, weights)?;
    if !votes.contains_key(subject) {
        return Err(TrustError::NotInRoster);
    }
    if votes.len() < 2 {
        return Err(TrustError::RosterTooSmall(votes.len()));
    }
    let mut own = 0.0;
    let mut rest = 0.0;
    for (((p, vote), rep), w) in votes.iter().zip(reputations.values()).zip(weights.values()) {
        let term = vote.value() as f64 * rep.value() * w;
        if p == subject {
            own = term;
        } else {
            rest += term;
        }
    }
    Ok(match (sign(own), sign(rest)) {
        (0, _) | (_, 0) => Agreement::Neutral,
        (a, b) if a == b => Agreement::Agree,
        _ => Agreement::Disagree,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementReason {
    Agree,
    Disagree,
    Neutral,
    /// Received the design but never revealed a vote.
    NoReveal,
    /// Revealed "can not decide".
    ZeroVote,
    NotReceived,
    Annulled,
    /// Feedback participation: reputation only, no money.
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub amount: Money,
    pub reason: SettlementReason,
}

/// Evaluation-phase payouts for every roster member.
///
/// `reputations` and `weights` are keyed by the players who received the
/// design. Non-revealers count as a 0 vote in the agreement sums. With a
/// single received player there is nobody to agree with, so a nonzero vote
/// settles as neutral.
#[allow(clippy::too_many_arguments)]
pub fn settle_evaluation<P: Ord + Clone>(
    roster: &BTreeSet<P>,
    votes: &BTreeMap<P, Vote>,
    received: &BTreeMap<P, bool>,
    reputations: &BTreeMap<P, Score>,
    weights: &BTreeMap<P, f64>,
    schedule: &PaymentSchedule,
    result: ResultCode,
) -> Result<BTreeMap<P, Settlement>, TrustError> {
    if roster.iter().any(|p| !received.contains_key(p)) {
        return Err(TrustError::ProtocolInconsistency("roster member without a received flag"));
    }
    if votes.keys().any(|p| !roster.contains(p) || !received.get(p).copied().unwrap_or(false)) {
        return Err(TrustError::ProtocolInconsistency("vote from a player who never received the design"));
    }
    let participants: BTreeSet<&P> = roster.iter().filter(|p| received[*p]).collect();
    if reputations.len() != participants.len()
        || weights.len() != participants.len()
        || !participants.iter().all(|p| reputations.contains_key(*p) && weights.contains_key(*p))
    {
        return Err(TrustError::MismatchedKeys);
    }

    if result == ResultCode::Annulled {
        return Ok(roster
            .iter()
            .map(|p| (p.clone(), Settlement { amount: Money::ZERO, reason: SettlementReason::Annulled }))
            .collect());
    }

    let full_votes: BTreeMap<P, Vote> = participants
        .iter()
        .map(|p| ((*p).clone(), votes.get(*p).copied().unwrap_or(Vote::Abstain)))
        .collect();

    let mut out = BTreeMap::new();
    for p in roster {
        let settlement = if !received[p] {
            Settlement { amount: Money::ZERO, reason: SettlementReason::NotReceived }
        } else {
            match votes.get(p) {
                None => Settlement { amount: schedule.penalty, reason: SettlementReason::NoReveal },
                Some(Vote::Abstain) => Settlement { amount: schedule.penalty, reason: SettlementReason::ZeroVote },
                Some(_) => {
                    let agreement = if full_votes.len() < 2 {
                        Agreement::Neutral
                    } else {
                        agreement_sign(p, &full_votes, reputations, weights)?
                    };
                    match agreement {
                        Agreement::Agree => Settlement { amount: schedule.reward, reason: SettlementReason::Agree },
                        Agreement::Disagree => {
                            Settlement { amount: schedule.penalty, reason: SettlementReason::Disagree }
                        }
                        Agreement::Neutral => Settlement { amount: Money::ZERO, reason: SettlementReason::Neutral },
                    }
                }
            }
        };
        out.insert(p.clone(), settlement);
    }
    Ok(out)
}
