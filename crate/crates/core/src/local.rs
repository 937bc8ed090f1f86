// SPDX-License-Identifier: Apache-2.0

//! Synchronous in-process committee for tests and tooling: every request is
//! handled immediately and cross-shard credits land before the reply.

use crate::authority::{AuthorityState, SyncInbox};
use crate::base::{Address, Amount, KeyPair, ShardId};
use crate::client::{AuthorityClient, ClientConfig, CommitteeDriver, NoDelay};
use crate::committee::{Committee, ShardAssignment};
use crate::error::{Error, Result};
use crate::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, FundingTransaction, SignedSyncOrder,
    SignedTransferOrder, TransferOrder,
};
use crate::primary::PrimaryState;
use futures::future::{ready, LocalBoxFuture};
use rand::SeedableRng;
use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

/// All shards of one authority in one thread.
pub struct InProcessAuthority {
    shards: Vec<RefCell<AuthorityState>>,
    inboxes: Vec<RefCell<SyncInbox>>,
    assignment: ShardAssignment,
    crashed: Cell<bool>,
}

impl InProcessAuthority {
    pub fn new(
        keypair: KeyPair,
        committee: Committee,
        assignment: ShardAssignment,
        primary: crate::base::PublicKeyBytes,
    ) -> Self {
        InProcessAuthority {
            shards: assignment
                .shards()
                .map(|s| {
                    RefCell::new(AuthorityState::new(
                        keypair.clone(),
                        committee.clone(),
                        assignment,
                        s,
                    ))
                })
                .collect(),
            inboxes: assignment
                .shards()
                .map(|_| RefCell::new(SyncInbox::new(primary)))
                .collect(),
            assignment,
            crashed: Cell::new(false),
        }
    }

    /// A crashed authority answers every request with `Timeout`.
    pub fn set_crashed(&self, crashed: bool) {
        self.crashed.set(crashed);
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed.get()
    }

    pub fn num_shards(&self) -> u32 {
        self.assignment.num_shards()
    }

    pub fn shard(&self, shard: ShardId) -> Ref<'_, AuthorityState> {
        self.shards[shard as usize].borrow()
    }

    pub fn shard_mut(&self, shard: ShardId) -> RefMut<'_, AuthorityState> {
        self.shards[shard as usize].borrow_mut()
    }

    pub fn shard_of(&self, address: &Address) -> ShardId {
        self.assignment.which_shard(address)
    }

    fn alive(&self) -> Result<()> {
        if self.crashed.get() {
            Err(Error::Timeout)
        } else {
            Ok(())
        }
    }

    /// Delivers a Primary order to every shard, as the Primary feed would.
    pub fn deliver_sync_order(&self, signed: &SignedSyncOrder) {
        if self.crashed.get() {
            return;
        }
        for (shard, inbox) in self.shards.iter().zip(&self.inboxes) {
            let _ = inbox.borrow_mut().offer(&mut shard.borrow_mut(), signed);
        }
    }

    pub fn transfer_order(&self, order: TransferOrder) -> Result<SignedTransferOrder> {
        self.alive()?;
        self.shard_mut(self.shard_of(&order.sender))
            .handle_transfer_order(order)
    }

    pub fn confirmation_order(&self, certificate: CertifiedTransfer) -> Result<AccountInfoResponse> {
        self.alive()?;
        let shard = self.shard_of(&certificate.sender());
        let (info, update) = self.shard_mut(shard).handle_confirmation_order(certificate)?;
        if let Some(update) = update {
            self.shard_mut(update.shard_id)
                .handle_cross_shard_commit(update.certificate)?;
        }
        Ok(info)
    }

    pub fn account_info(&self, query: &AccountInfoQuery) -> Result<AccountInfoResponse> {
        self.alive()?;
        self.shard(self.shard_of(&query.address))
            .handle_account_info_query(query)
    }

    pub fn sync_order(&self, route: &Address, signed: &SignedSyncOrder) -> Result<()> {
        self.alive()?;
        let shard = self.shard_of(route) as usize;
        self.inboxes[shard]
            .borrow_mut()
            .offer(&mut self.shards[shard].borrow_mut(), signed)
    }
}

impl AuthorityClient for InProcessAuthority {
    fn handle_transfer_order(
        &self,
        order: TransferOrder,
    ) -> LocalBoxFuture<'static, Result<SignedTransferOrder>> {
        Box::pin(ready(self.transfer_order(order)))
    }

    fn handle_confirmation_order(
        &self,
        certificate: CertifiedTransfer,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        Box::pin(ready(self.confirmation_order(certificate)))
    }

    fn handle_account_info_query(
        &self,
        query: AccountInfoQuery,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        Box::pin(ready(self.account_info(&query)))
    }

    fn handle_primary_sync_order(
        &self,
        route: Address,
        order: SignedSyncOrder,
    ) -> LocalBoxFuture<'static, Result<()>> {
        Box::pin(ready(self.sync_order(&route, &order)))
    }
}

/// A committee, its authorities and the Primary, all in one thread.
pub struct LocalCommittee {
    pub committee: Committee,
    pub authority_keys: Vec<KeyPair>,
    pub authorities: Vec<Rc<InProcessAuthority>>,
    pub primary: Rc<RefCell<PrimaryState>>,
}

impl LocalCommittee {
    pub fn new(size: usize, num_shards: u32, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let authority_keys: Vec<_> = (0..size).map(|_| KeyPair::generate(&mut rng)).collect();
        let committee = Committee::new(authority_keys.iter().map(|k| k.public()).collect())?;
        let primary = PrimaryState::new(committee.clone(), KeyPair::generate(&mut rng));
        let assignment = ShardAssignment::new(num_shards)?;
        let authorities = authority_keys
            .iter()
            .map(|k| {
                Rc::new(InProcessAuthority::new(
                    k.clone(),
                    committee.clone(),
                    assignment,
                    primary.public_key(),
                ))
            })
            .collect();
        Ok(LocalCommittee {
            committee,
            authority_keys,
            authorities,
            primary: Rc::new(RefCell::new(primary)),
        })
    }

    pub fn driver(&self, config: ClientConfig) -> CommitteeDriver {
        CommitteeDriver::new(
            self.committee.clone(),
            self.committee
                .authorities()
                .iter()
                .zip(&self.authorities)
                .map(|(n, a)| (*n, a.clone() as Rc<dyn AuthorityClient>))
                .collect(),
            Rc::new(NoDelay),
            config,
        )
    }

    /// Funds `recipient` on the Primary and feeds the order to every live
    /// authority.
    pub fn fund(&self, recipient: Address, amount: u64) -> Result<SignedSyncOrder> {
        let signed = self
            .primary
            .borrow_mut()
            .handle_funding_transaction(FundingTransaction {
                recipient,
                amount: Amount(amount),
            })?;
        for a in &self.authorities {
            a.deliver_sync_order(&signed);
        }
        Ok(signed)
    }
}
