//! JSON-lines trace: a header with the genesis state, every executed message
//! followed by the events it produced, and a footer with the final balances.

use std::collections::BTreeMap;

use attest_core::chain::{AccountId, LedgerEvent, Simulation, Tick};
use attest_core::contract::{ContractCall, ContractConstants, VotingContract};
use attest_core::money::Money;
use serde::{Deserialize, Serialize};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub trace_version: u32,
    pub constants: ContractConstants,
    pub accounts: BTreeMap<AccountId, Money>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub tick: Tick,
    pub sender: AccountId,
    pub nonce: u64,
    pub call: ContractCall,
    pub error: Option<String>,
}

impl Message {
    pub fn key(&self) -> (Tick, &AccountId, u64) {
        (self.tick, &self.sender, self.nonce)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub balances: BTreeMap<AccountId, Money>,
    pub total_supply: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceLine {
    Header(Header),
    Message(Message),
    Event(LedgerEvent),
    Final(Footer),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace lines serialize")
    }
}

pub fn footer(balances: &BTreeMap<AccountId, Money>) -> TraceLine {
    TraceLine::Final(Footer { balances: balances.clone(), total_supply: balances.values().copied().sum() })
}

/// Serializes a finished simulation.
pub fn render(sim: &Simulation<VotingContract>, genesis: &BTreeMap<AccountId, Money>) -> Vec<String> {
    let mut lines = vec![TraceLine::Header(Header {
        trace_version: TRACE_VERSION,
        constants: sim.machine().constants().clone(),
        accounts: genesis.clone(),
    })
    .to_json()];
    let events = sim.ledger().events();
    let mut cursor = 0;
    for ex in sim.journal() {
        lines.push(
            TraceLine::Message(Message {
                tick: ex.ticket.at,
                sender: ex.ticket.sender.clone(),
                nonce: ex.ticket.nonce,
                call: ex.call.clone(),
                error: ex.error.clone(),
            })
            .to_json(),
        );
        while let Some(ev) = events.get(cursor) {
            let ours = ev.origin.as_ref().is_some_and(|o| o.sender == ex.ticket.sender && o.nonce == ex.ticket.nonce);
            if !ours {
                break;
            }
            lines.push(TraceLine::Event(ev.clone()).to_json());
            cursor += 1;
        }
    }
    for ev in &events[cursor..] {
        lines.push(TraceLine::Event(ev.clone()).to_json());
    }
    lines.push(footer(sim.ledger().balances()).to_json());
    lines
}
