// SPDX-License-Identifier: Apache-2.0

//! Exhaustive check of a client that signs two orders for one sequence
//! number. For every assignment of which order reaches each authority
//! first, and every choice of at most one Byzantine authority that signs
//! both, at most one order may ever gather a quorum.

use crate::authority::{Request, Response, SimAuthority};
use crate::config::{Behavior, ByzantineStrategy};
use quorumpay_core::committee::{Committee, ShardAssignment};
use quorumpay_core::messages::{
    aggregate_certificate, PrimarySynchronizationOrder, RecipientAddress, SignedSyncOrder,
    TransferOrder,
};
use quorumpay_core::{Amount, KeyPair, SequenceNumber, UserData};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitOutcome {
    pub byzantine: Option<usize>,
    pub quorum: usize,
    /// Per authority, which order (0 or 1) arrived first.
    pub first: Vec<usize>,
    /// Distinct signers per order after every authority saw both.
    pub votes: [usize; 2],
    /// The order that reached a quorum, if any.
    pub certified: Option<usize>,
    /// After the certified order was confirmed everywhere, the other order
    /// still gathered a quorum.
    pub other_certified_later: bool,
    /// Neither order certified, and neither a third order at the same
    /// sequence nor any order at the next one can.
    pub locked: bool,
}

impl SplitOutcome {
    /// At most one order ever certifies.
    pub fn safe(&self) -> bool {
        !(self.votes[0] >= self.quorum && self.votes[1] >= self.quorum)
            && !self.other_certified_later
    }
}

struct Bench {
    committee: Committee,
    authorities: Vec<SimAuthority>,
    sender: KeyPair,
    recipients: [KeyPair; 3],
}

impl Bench {
    fn new(size: usize, byzantine: Option<usize>) -> Self {
        let keys: Vec<KeyPair> = (0..size)
            .map(|i| KeyPair::from_secret_bytes(&[i as u8 + 1; 32]))
            .collect();
        let committee = Committee::new(keys.iter().map(|k| k.public()).collect())
            .expect("valid committee");
        let primary = KeyPair::from_secret_bytes(&[200; 32]);
        let sender = KeyPair::from_secret_bytes(&[201; 32]);
        let mut authorities: Vec<SimAuthority> = keys
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                let behavior = if byzantine == Some(i) {
                    Behavior::Byzantine(ByzantineStrategy::Equivocate)
                } else {
                    Behavior::Honest
                };
                SimAuthority::new(
                    i,
                    behavior,
                    k,
                    &committee,
                    ShardAssignment::single(),
                    primary.public(),
                )
            })
            .collect();
        let funding = SignedSyncOrder::new(
            PrimarySynchronizationOrder {
                transaction_index: 1,
                recipient: sender.address(),
                amount: Amount(100),
            },
            &primary,
        );
        for a in &mut authorities {
            a.deliver_sync(&funding);
        }
        Bench {
            committee,
            authorities,
            sender,
            recipients: [202, 203, 204].map(|b| KeyPair::from_secret_bytes(&[b; 32])),
        }
    }

    fn order(&self, recipient: usize, sequence: u64) -> TransferOrder {
        TransferOrder::new(
            &self.sender,
            self.sender.address(),
            RecipientAddress::Offchain(self.recipients[recipient].address()),
            Amount(10),
            SequenceNumber(sequence),
            UserData::default(),
        )
        .expect("valid order")
    }

    /// Signers of `order` after showing it to `to`.
    fn show(&mut self, order: &TransferOrder, to: impl Iterator<Item = usize>) -> Vec<usize> {
        to.filter(|&i| {
            matches!(
                self.authorities[i].handle(&Request::Transfer(order.clone())).0,
                Ok(Response::Vote(_))
            )
        })
        .collect()
    }
}

/// Runs one split. `first[i]` names the order authority `i` sees first.
pub fn run_split(first: &[usize], byzantine: Option<usize>) -> SplitOutcome {
    let n = first.len();
    let mut bench = Bench::new(n, byzantine);
    let quorum = bench.committee.quorum_threshold();
    let orders = [bench.order(0, 0), bench.order(1, 0)];
    let mut signers: [BTreeSet<usize>; 2] = Default::default();
    for i in 0..n {
        for which in [first[i], 1 - first[i]] {
            signers[which].extend(bench.show(&orders[which], std::iter::once(i)));
        }
    }
    let votes = [signers[0].len(), signers[1].len()];
    let certified = (0..2).find(|&w| votes[w] >= quorum);
    let mut other_certified_later = false;
    let mut locked = false;
    match certified {
        Some(w) => {
            let vote_messages: Vec<_> = signers[w]
                .iter()
                .map(|&i| {
                    match bench.authorities[i].handle(&Request::Transfer(orders[w].clone())).0 {
                        Ok(Response::Vote(v)) => v,
                        other => panic!("authority {i} no longer votes: {other:?}"),
                    }
                })
                .collect();
            let certificate = aggregate_certificate(&bench.committee, &orders[w], &vote_messages)
                .expect("quorum of votes");
            for a in &mut bench.authorities {
                let _ = a.handle(&Request::Confirm(certificate.clone()));
            }
            let other = 1 - w;
            signers[other].extend(bench.show(&orders[other], 0..n));
            other_certified_later = signers[other].len() >= quorum;
        }
        None => {
            let third = bench.order(2, 0);
            let next = bench.order(2, 1);
            let third_votes = bench.show(&third, 0..n).len();
            let next_votes = bench.show(&next, 0..n).len();
            locked = third_votes < quorum && next_votes < quorum;
        }
    }
    SplitOutcome {
        byzantine,
        quorum,
        first: first.to_vec(),
        votes,
        certified,
        other_certified_later,
        locked,
    }
}

/// Every first-arrival assignment for `size` authorities, with no
/// Byzantine authority and with each one in turn.
pub fn enumerate_splits(size: usize) -> Vec<SplitOutcome> {
    let mut out = Vec::new();
    for byzantine in std::iter::once(None).chain((0..size).map(Some)) {
        for mask in 0..(1u32 << size) {
            let first: Vec<usize> = (0..size).map(|i| ((mask >> i) & 1) as usize).collect();
            out.push(run_split(&first, byzantine));
        }
    }
    out
}
