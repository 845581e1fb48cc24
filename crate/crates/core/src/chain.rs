//! Deterministic simulated ledger.
//!
//! A [`Ledger`] holds fixed-point balances, the logical clock and an
//! append-only event log. A [`Simulation`] wraps a ledger and a state
//! machine, queues messages by tick and executes them in
//! `(tick, sender, nonce)` order. A rejected message leaves no trace: its
//! transfers are undone and its events are truncated.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::DesignPhase;
use crate::crypto::{Blinding, Hash32, IdentitySignature};
use crate::money::Money;
use crate::trust::{Phase, ResultCode, SettlementReason, Vote};

pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        AccountId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_string())
    }
}

impl From<String> for AccountId {
    fn from(s: String) -> Self {
        AccountId(s)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Logical clock. Never moves backward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clock {
    now: Tick,
}

impl Clock {
    pub fn now(&self) -> Tick {
        self.now
    }

    fn advance_to(&mut self, t: Tick) {
        self.now = self.now.max(t);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub balance: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown account `{0}`")]
    UnknownAccount(AccountId),
    #[error("negative transfer amount {0}")]
    NegativeAmount(Money),
    #[error("account `{account}` holds {balance}, cannot send {amount}")]
    Overdraw { account: AccountId, balance: Money, amount: Money },
    #[error("duplicate genesis account `{0}`")]
    DuplicateAccount(AccountId),
    #[error("negative genesis balance for `{0}`")]
    NegativeGenesis(AccountId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("message dated {at} but the clock is at {now}")]
    PastDated { at: Tick, now: Tick },
    #[error("nonce {nonce} for `{sender}` already used (next is {next})")]
    StaleNonce { sender: AccountId, nonce: u64, next: u64 },
}

/// The message that caused an event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageRef {
    pub sender: AccountId,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementEntry {
    pub player: AccountId,
    pub amount: Money,
    pub reason: SettlementReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationEntry {
    pub player: AccountId,
    pub before: f64,
    pub after: f64,
    pub transactions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    NewDesign {
        vendor: AccountId,
        design_hash: Hash32,
        collateral: Money,
    },
    Registered {
        player: AccountId,
        phase: Phase,
        deposit: Money,
        ip_signature: IdentitySignature,
    },
    Received {
        player: AccountId,
    },
    Committed {
        player: AccountId,
        digest: Hash32,
    },
    Revealed {
        player: AccountId,
        vote: Vote,
        blinding: Blinding,
    },
    FeedbackOpened {
        start: Tick,
    },
    ResultCalculated {
        phase: Phase,
        final_score: f64,
        result: ResultCode,
        settlements: Vec<SettlementEntry>,
        reputations: Vec<ReputationEntry>,
        vendor_refund: Money,
        next_phase: DesignPhase,
    },
    Transfer {
        from: AccountId,
        to: AccountId,
        amount: Money,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::NewDesign { .. } => "NewDesign",
            EventBody::Registered { .. } => "Registered",
            EventBody::Received { .. } => "Received",
            EventBody::Committed { .. } => "Committed",
            EventBody::Revealed { .. } => "Revealed",
            EventBody::FeedbackOpened { .. } => "FeedbackOpened",
            EventBody::ResultCalculated { .. } => "ResultCalculated",
            EventBody::Transfer { .. } => "Transfer",
        }
    }
}

/// One append-only log entry, totally ordered by `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub tick: Tick,
    pub origin: Option<MessageRef>,
    pub design: Option<u64>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy)]
pub struct Checkpoint {
    log_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    clock: Clock,
    balances: BTreeMap<AccountId, Money>,
    log: Vec<LedgerEvent>,
    origin: Option<MessageRef>,
}

impl Ledger {
    pub fn genesis(accounts: impl IntoIterator<Item = (AccountId, Money)>) -> Result<Self, LedgerError> {
        let mut balances = BTreeMap::new();
        for (id, balance) in accounts {
            if balance.is_negative() {
                return Err(LedgerError::NegativeGenesis(id));
            }
            if balances.insert(id.clone(), balance).is_some() {
                return Err(LedgerError::DuplicateAccount(id));
            }
        }
        Ok(Self { clock: Clock::default(), balances, log: Vec::new(), origin: None })
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn balance(&self, id: &AccountId) -> Option<Money> {
        self.balances.get(id).copied()
    }

    pub fn accounts(&self) -> impl Iterator<Item = Account> + '_ {
        self.balances.iter().map(|(id, b)| Account { id: id.clone(), balance: *b })
    }

    pub fn balances(&self) -> &BTreeMap<AccountId, Money> {
        &self.balances
    }

    pub fn total_supply(&self) -> Money {
        self.balances.values().sum()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.log
    }

    /// Appends an event stamped with the current tick and originating message.
    pub fn emit(&mut self, design: Option<u64>, body: EventBody) {
        let seq = self.log.len() as u64;
        self.log.push(LedgerEvent { seq, tick: self.now(), origin: self.origin.clone(), design, body });
    }

    /// Atomic balance move. Zero amounts are accepted and logged.
    pub fn transfer(&mut self, from: &AccountId, to: &AccountId, amount: Money, design: Option<u64>) -> Result<(), LedgerError> {
        if amount.is_negative() {
            return Err(LedgerError::NegativeAmount(amount));
        }
        let from_balance = self.balance(from).ok_or_else(|| LedgerError::UnknownAccount(from.clone()))?;
        if !self.balances.contains_key(to) {
            return Err(LedgerError::UnknownAccount(to.clone()));
        }
        if from_balance < amount {
            return Err(LedgerError::Overdraw { account: from.clone(), balance: from_balance, amount });
        }
        *self.balances.get_mut(from).expect("checked") -= amount;
        *self.balances.get_mut(to).expect("checked") += amount;
        self.emit(design, EventBody::Transfer { from: from.clone(), to: to.clone(), amount });
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { log_len: self.log.len() }
    }

    /// Undoes every transfer and event recorded since `cp`.
    pub fn rollback(&mut self, cp: Checkpoint) {
        for ev in self.log.drain(cp.log_len..).rev() {
            if let EventBody::Transfer { from, to, amount } = ev.body {
                *self.balances.get_mut(&to).expect("transfer target exists") -= amount;
                *self.balances.get_mut(&from).expect("transfer source exists") += amount;
            }
        }
    }

    fn set_time(&mut self, t: Tick) {
        self.clock.advance_to(t);
    }
}

/// A state machine driven by ledger messages.
pub trait Machine {
    type Call: Clone + fmt::Debug;
    type Output: fmt::Debug;
    type Error: std::error::Error + Clone;

    /// Executes one message at `ledger.now()`. On `Err` the machine must be
    /// unchanged; ledger effects are rolled back by the caller.
    fn execute(&mut self, ledger: &mut Ledger, sender: &AccountId, call: &Self::Call) -> Result<Self::Output, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ticket {
    pub at: Tick,
    pub sender: AccountId,
    pub nonce: u64,
}

#[derive(Debug, Clone)]
pub struct Receipt<M: Machine> {
    pub ticket: Ticket,
    pub call: M::Call,
    pub outcome: Result<M::Output, M::Error>,
}

impl<M: Machine> Receipt<M> {
    pub fn executed_at(&self) -> Tick {
        self.ticket.at
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// One executed message, kept in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct Executed<C> {
    pub ticket: Ticket,
    pub call: C,
    /// Rejection message; `None` when the message was accepted.
    pub error: Option<String>,
}

/// Message scheduler over a ledger and a state machine.
#[derive(Debug, Clone)]
pub struct Simulation<M: Machine> {
    ledger: Ledger,
    machine: M,
    queue: BTreeMap<Ticket, M::Call>,
    next_nonce: BTreeMap<AccountId, u64>,
    journal: Vec<Executed<M::Call>>,
}

impl<M: Machine> Simulation<M> {
    pub fn new(ledger: Ledger, machine: M) -> Self {
        Self { ledger, machine, queue: BTreeMap::new(), next_nonce: BTreeMap::new(), journal: Vec::new() }
    }

    /// Every executed message, accepted or not.
    pub fn journal(&self) -> &[Executed<M::Call>] {
        &self.journal
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn machine(&self) -> &M {
        &self.machine
    }

    pub fn now(&self) -> Tick {
        self.ledger.now()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Queues `call` from `sender` for execution at tick `at`.
    pub fn submit(&mut self, sender: impl Into<AccountId>, call: M::Call, at: Tick) -> Result<Ticket, ChainError> {
        let sender = sender.into();
        let nonce = self.next_nonce.get(&sender).copied().unwrap_or(0);
        self.submit_with_nonce(sender, nonce, call, at)
    }

    /// Queues a message with an explicit nonce; used when replaying a trace.
    pub fn submit_with_nonce(&mut self, sender: impl Into<AccountId>, nonce: u64, call: M::Call, at: Tick) -> Result<Ticket, ChainError> {
        let sender = sender.into();
        let now = self.now();
        if at < now {
            return Err(ChainError::PastDated { at, now });
        }
        let next = self.next_nonce.get(&sender).copied().unwrap_or(0);
        if nonce < next {
            return Err(ChainError::StaleNonce { sender, nonce, next });
        }
        self.next_nonce.insert(sender.clone(), nonce + 1);
        let ticket = Ticket { at, sender, nonce };
        self.queue.insert(ticket.clone(), call);
        Ok(ticket)
    }

    /// Executes every queued message with tick `<= to`, then sets the clock
    /// to `to`. A target in the past only drains nothing.
    pub fn advance(&mut self, to: Tick) -> Vec<Receipt<M>> {
        let mut receipts = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().at > to {
                break;
            }
            let (ticket, call) = entry.remove_entry();
            self.ledger.set_time(ticket.at);
            self.ledger.origin = Some(MessageRef { sender: ticket.sender.clone(), nonce: ticket.nonce });
            let cp = self.ledger.checkpoint();
            let outcome = self.machine.execute(&mut self.ledger, &ticket.sender, &call);
            if outcome.is_err() {
                self.ledger.rollback(cp);
            }
            self.ledger.origin = None;
            self.journal.push(Executed {
                ticket: ticket.clone(),
                call: call.clone(),
                error: outcome.as_ref().err().map(|e| e.to_string()),
            });
            receipts.push(Receipt { ticket, call, outcome });
        }
        self.ledger.set_time(to);
        receipts
    }
}

impl<M: Machine> Simulation<M> {
    /// Direct balance move outside any message (used by tests and tooling).
    pub fn transfer(&mut self, from: &AccountId, to: &AccountId, amount: Money) -> Result<(), LedgerError> {
        self.ledger.transfer(from, to, amount, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records sender order; rejects calls named "fail" after moving money.
    #[derive(Debug, Default)]
    struct Recorder {
        seen: Vec<(Tick, String)>,
    }

    #[derive(Debug, Clone, thiserror::Error)]
    #[error("refused")]
    struct Refused;

    impl Machine for Recorder {
        type Call = &'static str;
        type Output = ();
        type Error = Refused;

        fn execute(&mut self, ledger: &mut Ledger, sender: &AccountId, call: &Self::Call) -> Result<(), Refused> {
            if *call == "fail" {
                ledger.transfer(&"a".into(), &"b".into(), Money::from_units(1), None).unwrap();
                return Err(Refused);
            }
            self.seen.push((ledger.now(), sender.to_string()));
            Ok(())
        }
    }

    fn sim() -> Simulation<Recorder> {
        let ledger = Ledger::genesis([("a".into(), Money::from_units(5)), ("b".into(), Money::ZERO)]).unwrap();
        Simulation::new(ledger, Recorder::default())
    }

    #[test]
    fn same_tick_orders_by_sender() {
        let mut s = sim();
        s.submit("b", "x", 5).unwrap();
        s.submit("a", "x", 5).unwrap();
        let receipts = s.advance(5);
        assert_eq!(receipts.len(), 2);
        assert_eq!(s.machine().seen, vec![(5, "a".to_string()), (5, "b".to_string())]);
        assert!(receipts.iter().all(|r| r.executed_at() == 5));
    }

    #[test]
    fn past_dated_rejected() {
        let mut s = sim();
        s.advance(10);
        assert_eq!(s.submit("a", "x", 9), Err(ChainError::PastDated { at: 9, now: 10 }));
        assert!(s.submit("a", "x", 10).is_ok());
    }

    #[test]
    fn advance_is_idempotent_and_empty_queue_is_quiet() {
        let mut s = sim();
        assert!(s.advance(3).is_empty());
        assert!(s.advance(3).is_empty());
        assert_eq!(s.now(), 3);
        assert!(s.ledger().events().is_empty());
        s.advance(1);
        assert_eq!(s.now(), 3);
    }

    #[test]
    fn rejected_message_rolls_back_transfers() {
        let mut s = sim();
        s.submit("a", "fail", 1).unwrap();
        let receipts = s.advance(1);
        assert!(!receipts[0].is_ok());
        assert_eq!(s.ledger().balance(&"a".into()), Some(Money::from_units(5)));
        assert!(s.ledger().events().is_empty());
        assert_eq!(s.journal().len(), 1);
        assert_eq!(s.journal()[0].error.as_deref(), Some("refused"));
    }

    #[test]
    fn transfer_rules() {
        let mut s = sim();
        let (a, b) = (AccountId::from("a"), AccountId::from("b"));
        let err = s.transfer(&a, &b, Money::from_units(5) + Money::from_micro(1)).unwrap_err();
        assert!(matches!(err, LedgerError::Overdraw { .. }));
        assert_eq!(s.ledger().balance(&a), Some(Money::from_units(5)));
        s.transfer(&a, &b, Money::ZERO).unwrap();
        assert_eq!(s.ledger().events().len(), 1);
        s.transfer(&a, &b, Money::from_units(5)).unwrap();
        assert_eq!(s.ledger().balance(&a), Some(Money::ZERO));
        assert_eq!(s.ledger().total_supply(), Money::from_units(5));
        assert!(matches!(s.transfer(&a, &"zz".into(), Money::ZERO), Err(LedgerError::UnknownAccount(_))));
    }

    #[test]
    fn explicit_nonces_must_increase() {
        let mut s = sim();
        s.submit_with_nonce("a", 4, "x", 0).unwrap();
        assert!(matches!(s.submit_with_nonce("a", 4, "x", 0), Err(ChainError::StaleNonce { .. })));
        let t = s.submit("a", "x", 0).unwrap();
        assert_eq!(t.nonce, 5);
    }

    #[test]
    fn genesis_validation() {
        assert!(matches!(
            Ledger::genesis([("a".into(), Money::ZERO), ("a".into(), Money::ZERO)]),
            Err(LedgerError::DuplicateAccount(_))
        ));
        assert!(Ledger::genesis([("a".into(), Money::from_micro(-1))]).is_err());
    }
}
