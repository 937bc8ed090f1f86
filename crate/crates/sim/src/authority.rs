// SPDX-License-Identifier: Apache-2.0

use crate::config::{Behavior, ByzantineStrategy};
use quorumpay_core::authority::{AuthorityState, SyncInbox};
use quorumpay_core::committee::{Committee, ShardAssignment};
use quorumpay_core::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, CrossShardUpdate, SignedSyncOrder,
    SignedTransferOrder, TransferOrder,
};
use quorumpay_core::{Address, Error, KeyPair, PublicKeyBytes, Result, ShardId};

#[derive(Clone, Debug)]
pub enum Request {
    Transfer(TransferOrder),
    Confirm(CertifiedTransfer),
    Query(AccountInfoQuery),
    /// Sync order relayed by a client to the shard owning the address.
    Sync(Address, SignedSyncOrder),
}

impl Request {
    pub fn tag(&self) -> &'static str {
        match self {
            Request::Transfer(_) => "transfer",
            Request::Confirm(_) => "confirm",
            Request::Query(_) => "query",
            Request::Sync(..) => "sync",
        }
    }

    /// The account the request is routed by.
    pub fn address(&self) -> Address {
        match self {
            Request::Transfer(o) => o.sender,
            Request::Confirm(c) => c.sender(),
            Request::Query(q) => q.address,
            Request::Sync(a, _) => *a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Vote(SignedTransferOrder),
    Info(AccountInfoResponse),
    Done,
}

/// Every shard of one authority, with its fault behaviour.
#[derive(Clone)]
pub struct SimAuthority {
    pub index: usize,
    pub behavior: Behavior,
    keypair: KeyPair,
    pub shards: Vec<AuthorityState>,
    pub inboxes: Vec<SyncInbox>,
    assignment: ShardAssignment,
}

impl SimAuthority {
    pub fn new(
        index: usize,
        behavior: Behavior,
        keypair: KeyPair,
        committee: &Committee,
        assignment: ShardAssignment,
        primary: PublicKeyBytes,
    ) -> Self {
        SimAuthority {
            index,
            behavior,
            shards: assignment
                .shards()
                .map(|s| AuthorityState::new(keypair.clone(), committee.clone(), assignment, s))
                .collect(),
            inboxes: assignment.shards().map(|_| SyncInbox::new(primary)).collect(),
            keypair,
            assignment,
        }
    }

    pub fn shard_of(&self, address: &Address) -> ShardId {
        self.assignment.which_shard(address)
    }

    /// Receives traffic at all.
    pub fn is_live(&self) -> bool {
        !matches!(
            self.behavior,
            Behavior::Crashed | Behavior::Byzantine(ByzantineStrategy::Stonewall)
        )
    }

    fn strategy(&self) -> Option<ByzantineStrategy> {
        match self.behavior {
            Behavior::Byzantine(s) => Some(s),
            _ => None,
        }
    }

    pub fn handle(&mut self, request: &Request) -> (Result<Response>, Option<CrossShardUpdate>) {
        let shard = self.shard_of(&request.address()) as usize;
        match request {
            Request::Transfer(order) => (self.vote(shard, order).map(Response::Vote), None),
            Request::Confirm(certificate) => {
                match self.shards[shard].handle_confirmation_order(certificate.clone()) {
                    Ok((info, update)) => (Ok(Response::Info(info)), update),
                    Err(e) => (Err(e), None),
                }
            }
            Request::Query(query) => {
                let mut result = self.shards[shard].handle_account_info_query(query);
                if self.strategy() == Some(ByzantineStrategy::ReportZeroSequence) {
                    if let Ok(info) = &mut result {
                        info.next_sequence = quorumpay_core::SequenceNumber(0);
                        info.pending = None;
                        info.confirmed.clear();
                    }
                }
                (result.map(Response::Info), None)
            }
            Request::Sync(_, signed) => {
                let result = self.inboxes[shard].offer(&mut self.shards[shard], signed);
                (result.map(|()| Response::Done), None)
            }
        }
    }

    fn vote(&mut self, shard: usize, order: &TransferOrder) -> Result<SignedTransferOrder> {
        match self.strategy() {
            Some(ByzantineStrategy::SignAnything) => {
                order.verify_signature()?;
                Ok(SignedTransferOrder::new(order.clone(), &self.keypair))
            }
            Some(ByzantineStrategy::Equivocate) => {
                match self.shards[shard].handle_transfer_order(order.clone()) {
                    Err(Error::PreviousTransferPending) => {
                        let account = self.shards[shard]
                            .account(&order.sender)
                            .expect("a pending order implies an account");
                        let locked = account.pending.as_ref().map(|p| p.order.sequence);
                        if locked == Some(order.sequence) && account.balance.covers(order.amount) {
                            Ok(SignedTransferOrder::new(order.clone(), &self.keypair))
                        } else {
                            Err(Error::PreviousTransferPending)
                        }
                    }
                    other => other,
                }
            }
            _ => self.shards[shard].handle_transfer_order(order.clone()),
        }
    }

    /// Applies a Primary order from the feed to every shard.
    pub fn deliver_sync(&mut self, signed: &SignedSyncOrder) {
        for (state, inbox) in self.shards.iter_mut().zip(&mut self.inboxes) {
            let _ = inbox.offer(state, signed);
        }
    }

    pub fn cross_shard_commit(&mut self, shard: ShardId, certificate: CertifiedTransfer) -> Result<()> {
        self.shards[shard as usize].handle_cross_shard_commit(certificate)
    }
}
