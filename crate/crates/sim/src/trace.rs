// SPDX-License-Identifier: Apache-2.0

//! What a run leaves behind: a line per event for diffing, a ledger of
//! everything the oracle needs, and snapshots of authority state.

use crate::config::SimConfig;
use quorumpay_core::messages::RecipientAddress;
use quorumpay_core::{Address, Error};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

/// Index into [`Trace::orders`].
pub type OrderId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderRecord {
    pub sender: Address,
    pub sequence: u64,
    pub amount: u64,
    pub recipient: RecipientAddress,
    pub digest: [u8; 32],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Shard { authority: usize, shard: u32 },
    User(usize),
    /// The client that signs two orders per sequence number.
    Rogue,
    Primary,
    Network,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Shard { authority, shard } => write!(f, "a{authority}.s{shard}"),
            Actor::User(u) => write!(f, "u{u}"),
            Actor::Rogue => f.write_str("rogue"),
            Actor::Primary => f.write_str("primary"),
            Actor::Network => f.write_str("net"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub index: u64,
    pub time_us: u64,
    pub actor: Actor,
    pub tag: &'static str,
    /// Digest of the state the event touched.
    pub state_hash: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LedgerEntry {
    Funding {
        event: u64,
        index: u64,
        recipient: Address,
        amount: u64,
    },
    /// A signature returned by an authority. `balance` is the sender's
    /// balance at that authority when it signed; `None` for Byzantine signers.
    Vote {
        event: u64,
        authority: usize,
        order: OrderId,
        balance: Option<i128>,
    },
    Redemption {
        event: u64,
        order: OrderId,
        accepted: bool,
        error: Option<Error>,
    },
    /// Primary total balance after a funding or redemption.
    PrimaryBalance { event: u64, total_balance: i128 },
}

impl LedgerEntry {
    pub fn event(&self) -> u64 {
        match self {
            LedgerEntry::Funding { event, .. }
            | LedgerEntry::Vote { event, .. }
            | LedgerEntry::Redemption { event, .. }
            | LedgerEntry::PrimaryBalance { event, .. } => *event,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccountView {
    pub balance: i128,
    pub next_sequence: u64,
    pub pending: Option<OrderId>,
    pub confirmed: Vec<OrderId>,
    pub received: Vec<OrderId>,
    /// `(transaction index, amount)` of each Primary credit.
    pub synchronized: Vec<(u64, u64)>,
}

/// One authority's accounts, merged across its shards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthorityView {
    pub authority: usize,
    /// Counted by the per-authority invariants.
    pub honest: bool,
    /// Receives traffic.
    pub live: bool,
    pub last_transaction: Vec<u64>,
    pub accounts: BTreeMap<Address, AccountView>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub event: u64,
    /// No message was in flight.
    pub quiescent: bool,
    pub authorities: Vec<AuthorityView>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Fund,
    Transfer,
    Redeem,
    ReplayRedeem,
    Equivocate,
    Query,
    Relay,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpResult {
    Done,
    /// The client had nothing to spend; no message was sent.
    Skipped,
    /// An equivocation in which neither order reached a quorum.
    Locked,
    Failed(Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpOutcome {
    pub event: u64,
    pub actor: Actor,
    pub kind: OpKind,
    pub result: OpResult,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub messages: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub cross_shard: u64,
    pub end_time_us: u64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub config: SimConfig,
    pub quorum: usize,
    pub orders: Vec<OrderRecord>,
    pub events: Vec<TraceEvent>,
    pub ledger: Vec<LedgerEntry>,
    pub checkpoints: Vec<Checkpoint>,
    pub outcomes: Vec<OpOutcome>,
    pub stats: SimStats,
}

impl Trace {
    /// One line per event: index, virtual time, actor, tag, state hash.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(
                out,
                "{} {} {} {} {:016x}",
                e.index, e.time_us, e.actor, e.tag, e.state_hash
            );
        }
        out
    }

    pub fn count(&self, kind: OpKind, pred: impl Fn(&OpResult) -> bool) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.kind == kind && pred(&o.result))
            .count()
    }

    /// Operations that reached the network.
    pub fn operations(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.result != OpResult::Skipped)
            .count()
    }

    pub fn failures(&self) -> Vec<&OpOutcome> {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.result, OpResult::Failed(_)))
            .collect()
    }

    pub fn quiescent_points(&self) -> usize {
        self.checkpoints.iter().filter(|c| c.quiescent).count()
    }
}
