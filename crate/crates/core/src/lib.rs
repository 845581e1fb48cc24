//! Distributed attestation of design files.
//!
//! Players evaluate a design, vote through a commit-reveal contract, and are
//! paid for agreeing with the reputation-weighted majority. A second,
//! reputation-only feedback round from buyers acts as a fail-safe.
//!
//! - [`trust`]: reputation, weights, final score, payments and settlement.
//! - [`contract`]: the design-voting state machine.
//! - [`chain`]: deterministic simulated ledger and message scheduler.
//! - [`agents`]: manager, identity provider and strategic players.

pub mod agents;
pub mod chain;
pub mod contract;
pub mod crypto;
pub mod money;
pub mod trust;

pub use chain::{AccountId, Ledger, LedgerEvent, Simulation, Tick};
pub use contract::{ContractCall, ContractConstants, DesignPhase, VotingContract};
pub use money::Money;
pub use trust::{PaymentSchedule, PaymentVariant, Phase, ResultCode, Score, Vote};
