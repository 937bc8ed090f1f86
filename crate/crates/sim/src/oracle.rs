// SPDX-License-Identifier: Apache-2.0

//! Trace checker. Works only from the recorded ledger and snapshots and
//! recomputes every sum itself, so it shares no code path with the
//! handlers it judges.
//!
//! A certificate "exists" as soon as a quorum of distinct authorities has
//! signed the same order, whether or not any client assembled it.

use crate::trace::{Checkpoint, LedgerEntry, OrderId, Trace};
use quorumpay_core::messages::RecipientAddress;
use quorumpay_core::{Address, Error};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Invariant {
    /// At most one order per `(sender, sequence)` gathers a quorum or is
    /// settled anywhere.
    CertificateUniqueness,
    /// Certified amounts to Primary addresses never exceed total funding.
    Solvency,
    /// Certified spending of an account never exceeds its funding plus
    /// certified income.
    AccountSafety,
    /// An honest authority only signs what the sender's balance covers,
    /// and its pending order stays covered.
    BalanceAtSigning,
    /// Primary balance equals funding minus redemptions.
    PrimaryBalance,
    /// Each certificate is paid out at most once.
    RedeemOnce,
    /// Per honest authority and account: balance plus confirmed spending is
    /// at most funding plus incoming transfers it has confirmed, with
    /// equality once nothing is in flight. Confirmations are contiguous.
    AccountLedger,
    /// An authority never holds more Primary credit for an account than
    /// the Primary issued.
    FundingBound,
    /// Honest authorities settle only certified orders.
    Consistency,
    /// At quiescence, an honest authority's balances sum to the funding it
    /// has applied minus what it settled to Primary addresses.
    Conservation,
}

impl Invariant {
    pub const ALL: [Invariant; 10] = [
        Invariant::CertificateUniqueness,
        Invariant::Solvency,
        Invariant::AccountSafety,
        Invariant::BalanceAtSigning,
        Invariant::PrimaryBalance,
        Invariant::RedeemOnce,
        Invariant::AccountLedger,
        Invariant::FundingBound,
        Invariant::Consistency,
        Invariant::Conservation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::CertificateUniqueness => "certificate_uniqueness",
            Invariant::Solvency => "solvency",
            Invariant::AccountSafety => "account_safety",
            Invariant::BalanceAtSigning => "balance_at_signing",
            Invariant::PrimaryBalance => "primary_balance",
            Invariant::RedeemOnce => "redeem_once",
            Invariant::AccountLedger => "account_ledger",
            Invariant::FundingBound => "funding_bound",
            Invariant::Consistency => "consistency",
            Invariant::Conservation => "conservation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub event: u64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantResult {
    pub invariant: Invariant,
    pub checks: u64,
    /// The first violation found.
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantReport {
    pub results: Vec<InvariantResult>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.violation.is_none())
    }

    pub fn get(&self, invariant: Invariant) -> &InvariantResult {
        self.results
            .iter()
            .find(|r| r.invariant == invariant)
            .expect("every invariant is reported")
    }

    /// Earliest violation over all invariants.
    pub fn first_violation(&self) -> Option<(Invariant, &Violation)> {
        self.results
            .iter()
            .filter_map(|r| r.violation.as_ref().map(|v| (r.invariant, v)))
            .min_by_key(|(_, v)| v.event)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            match &r.violation {
                None => writeln!(f, "PASS {} ({} checks)", r.invariant.name(), r.checks)?,
                Some(v) => writeln!(
                    f,
                    "FAIL {} at event {}: {}",
                    r.invariant.name(),
                    v.event,
                    v.detail
                )?,
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Oracle {
    results: BTreeMap<Invariant, (u64, Option<Violation>)>,
    quorum: usize,
    honest: Vec<bool>,
    funded: HashMap<Address, u128>,
    total_funded: u128,
    funding: HashMap<u64, (Address, u64)>,
    last_funding: u64,
    signers: HashMap<OrderId, BTreeSet<usize>>,
    honest_votes: HashMap<(usize, Address, u64), OrderId>,
    certified: HashSet<OrderId>,
    slots: HashMap<(Address, u64), OrderId>,
    spent: HashMap<Address, u128>,
    earned: HashMap<Address, u128>,
    to_primary: u128,
    redeemed: HashSet<(Address, u64)>,
    redeemed_total: u128,
    settled: HashMap<(Address, u64), OrderId>,
}

impl Oracle {
    fn check(&mut self, invariant: Invariant, event: u64, ok: bool, detail: impl FnOnce() -> String) {
        let (checks, violation) = self.results.entry(invariant).or_default();
        *checks += 1;
        if !ok && violation.is_none() {
            *violation = Some(Violation {
                event,
                detail: detail(),
            });
        }
    }

    fn entry(&mut self, trace: &Trace, entry: &LedgerEntry) {
        match *entry {
            LedgerEntry::Funding {
                event,
                index,
                recipient,
                amount,
            } => {
                let expected = self.last_funding + 1;
                self.check(Invariant::PrimaryBalance, event, index == expected, || {
                    format!("funding index {index}, expected {expected}")
                });
                self.last_funding = index;
                self.funding.insert(index, (recipient, amount));
                *self.funded.entry(recipient).or_default() += u128::from(amount);
                self.total_funded += u128::from(amount);
            }
            LedgerEntry::Vote {
                event,
                authority,
                order,
                balance,
            } => self.vote(trace, event, authority, order, balance),
            LedgerEntry::Redemption {
                event,
                order,
                accepted,
                ref error,
            } => {
                let o = &trace.orders[order as usize];
                self.check(
                    Invariant::Solvency,
                    event,
                    *error != Some(Error::InsolvencyDetected),
                    || "Primary refused a redemption as insolvent".into(),
                );
                if accepted {
                    let fresh = self.redeemed.insert((o.sender, o.sequence));
                    let valid = self.certified.contains(&order) && o.recipient.is_primary();
                    self.check(Invariant::RedeemOnce, event, fresh && valid, || {
                        format!(
                            "paid {}#{}: fresh={fresh} certified-to-primary={valid}",
                            o.sender.to_hex(),
                            o.sequence
                        )
                    });
                    self.redeemed_total += u128::from(o.amount);
                }
            }
            LedgerEntry::PrimaryBalance {
                event,
                total_balance,
            } => {
                let expected = self.total_funded as i128 - self.redeemed_total as i128;
                self.check(Invariant::PrimaryBalance, event, total_balance == expected, || {
                    format!("Primary balance {total_balance}, expected {expected}")
                });
                self.check(Invariant::Solvency, event, total_balance >= 0, || {
                    format!("Primary balance {total_balance} is negative")
                });
            }
        }
    }

    fn vote(&mut self, trace: &Trace, event: u64, authority: usize, order: OrderId, balance: Option<i128>) {
        let o = &trace.orders[order as usize];
        if self.honest.get(authority).copied().unwrap_or(true) {
            let covered = balance.is_some_and(|b| b >= i128::from(o.amount));
            self.check(Invariant::BalanceAtSigning, event, covered, || {
                format!(
                    "authority {authority} signed {}#{} for {} against balance {balance:?}",
                    o.sender.to_hex(),
                    o.sequence,
                    o.amount
                )
            });
            let first = *self
                .honest_votes
                .entry((authority, o.sender, o.sequence))
                .or_insert(order);
            self.check(Invariant::CertificateUniqueness, event, first == order, || {
                format!(
                    "honest authority {authority} signed two orders at {}#{}",
                    o.sender.to_hex(),
                    o.sequence
                )
            });
        }
        let signers = self.signers.entry(order).or_default();
        signers.insert(authority);
        if signers.len() < self.quorum || !self.certified.insert(order) {
            return;
        }
        let existing = *self.slots.entry((o.sender, o.sequence)).or_insert(order);
        self.check(Invariant::CertificateUniqueness, event, existing == order, || {
            format!(
                "two orders certified at {}#{}",
                o.sender.to_hex(),
                o.sequence
            )
        });
        let amount = u128::from(o.amount);
        *self.spent.entry(o.sender).or_default() += amount;
        match o.recipient {
            RecipientAddress::Offchain(to) => *self.earned.entry(to).or_default() += amount,
            RecipientAddress::Primary(_) => {
                self.to_primary += amount;
                let (to_primary, funded) = (self.to_primary, self.total_funded);
                self.check(Invariant::Solvency, event, to_primary <= funded, || {
                    format!("{to_primary} certified to Primary addresses, {funded} funded")
                });
            }
        }
        let spent = self.spent[&o.sender];
        let limit = self.funded.get(&o.sender).copied().unwrap_or(0)
            + self.earned.get(&o.sender).copied().unwrap_or(0);
        self.check(Invariant::AccountSafety, event, spent <= limit, || {
            format!(
                "{} has {spent} certified outgoing against {limit} funding and income",
                o.sender.to_hex()
            )
        });
    }

    fn checkpoint(&mut self, trace: &Trace, cp: &Checkpoint) {
        let event = cp.event;
        for view in cp.authorities.iter().filter(|v| v.honest) {
            let a = view.authority;
            // Incoming transfers this authority has confirmed, per recipient.
            let mut incoming: HashMap<Address, (u128, HashSet<OrderId>)> = HashMap::new();
            let mut primary_out = 0u128;
            for account in view.accounts.values() {
                for &id in &account.confirmed {
                    let o = &trace.orders[id as usize];
                    match o.recipient {
                        RecipientAddress::Offchain(to) => {
                            let e = incoming.entry(to).or_default();
                            e.0 += u128::from(o.amount);
                            e.1.insert(id);
                        }
                        RecipientAddress::Primary(_) => primary_out += u128::from(o.amount),
                    }
                }
            }
            let (mut balances, mut applied) = (0i128, 0u128);
            for (address, account) in &view.accounts {
                let x = address.to_hex();
                let mut contiguous = account.next_sequence == account.confirmed.len() as u64;
                let mut spent = 0u128;
                for (k, &id) in account.confirmed.iter().enumerate() {
                    let o = &trace.orders[id as usize];
                    contiguous &= o.sender == *address && o.sequence == k as u64;
                    spent += u128::from(o.amount);
                    let settled = *self.settled.entry((o.sender, o.sequence)).or_insert(id);
                    self.check(Invariant::CertificateUniqueness, event, settled == id, || {
                        format!("authority {a} settled a second order at {x}#{k}")
                    });
                    let certified = self.certified.contains(&id);
                    self.check(Invariant::Consistency, event, certified, || {
                        format!("authority {a} settled {x}#{k} without a quorum of signatures")
                    });
                }
                let (income, sources) = incoming.get(address).cloned().unwrap_or_default();
                let credited = account.received.iter().all(|id| sources.contains(id))
                    && account.received.len()
                        == account.received.iter().collect::<HashSet<_>>().len();
                let funding: u128 = account.synchronized.iter().map(|&(_, m)| u128::from(m)).sum();
                let lhs = account.balance + spent as i128;
                let rhs = (funding + income) as i128;
                let holds = if cp.quiescent { lhs == rhs } else { lhs <= rhs };
                self.check(
                    Invariant::AccountLedger,
                    event,
                    contiguous && credited && holds,
                    || {
                        format!(
                            "authority {a}, {x}: balance + spent = {lhs}, funding + income = {rhs}, \
                             contiguous={contiguous} credited={credited}"
                        )
                    },
                );

                let known = account.synchronized.iter().all(|&(i, m)| {
                    self.funding.get(&i) == Some(&(*address, m))
                });
                let issued = self.funded.get(address).copied().unwrap_or(0);
                self.check(Invariant::FundingBound, event, known && funding <= issued, || {
                    format!("authority {a}, {x}: holds {funding} Primary credit, {issued} issued")
                });

                if let Some(p) = account.pending {
                    let o = &trace.orders[p as usize];
                    let ok = o.sender == *address
                        && o.sequence == account.next_sequence
                        && i128::from(o.amount) <= account.balance;
                    self.check(Invariant::BalanceAtSigning, event, ok, || {
                        format!(
                            "authority {a}, {x}: pending #{} for {} against balance {}",
                            o.sequence, o.amount, account.balance
                        )
                    });
                }
                balances += account.balance;
                applied += funding;
            }
            if cp.quiescent && view.live {
                let expected = applied as i128 - primary_out as i128;
                let caught_up = view.last_transaction.iter().all(|&t| t == self.last_funding);
                let total_funded = self.total_funded;
                let complete = !caught_up || applied == total_funded;
                self.check(Invariant::Conservation, event, balances == expected && complete, || {
                    format!(
                        "authority {a}: balances sum to {balances}, expected {expected}; \
                         applied {applied} of {total_funded} funded"
                    )
                });
            }
        }
    }
}

/// Checks every invariant over a trace. Each invariant reports the first
/// event at which it failed.
pub fn check_invariants(trace: &Trace) -> InvariantReport {
    let mut oracle = Oracle {
        quorum: trace.quorum,
        honest: (0..trace.config.committee_size)
            .map(|i| trace.config.behavior(i).is_honest())
            .collect(),
        ..Oracle::default()
    };
    let mut checkpoints = trace.checkpoints.iter().peekable();
    for entry in &trace.ledger {
        while let Some(cp) = checkpoints.next_if(|cp| cp.event < entry.event()) {
            oracle.checkpoint(trace, cp);
        }
        oracle.entry(trace, entry);
    }
    for cp in checkpoints {
        oracle.checkpoint(trace, cp);
    }
    InvariantReport {
        results: Invariant::ALL
            .iter()
            .map(|&invariant| {
                let (checks, violation) = oracle.results.remove(&invariant).unwrap_or_default();
                InvariantResult {
                    invariant,
                    checks,
                    violation,
                }
            })
            .collect(),
    }
}
