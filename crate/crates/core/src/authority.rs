// SPDX-License-Identifier: Apache-2.0

//! One shard of one authority: a deterministic state machine over orders,
//! certificates, cross-shard credits and Primary synchronization orders.

use crate::base::{
    Address, AuthorityName, Balance, KeyPair, PublicKeyBytes, SequenceNumber, ShardId,
};
use crate::committee::{Committee, ShardAssignment};
use crate::error::{ensure, Error, Result};
use crate::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, CrossShardUpdate,
    PrimarySynchronizationOrder, RecipientAddress, SignedSyncOrder, SignedTransferOrder,
    TransferOrder,
};
use crate::wire::{Reader, Wire};
use sha2::{Digest as _, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};

/// An account as seen by one authority.
///
/// Invariants: `confirmed[k].sequence() == k` for every `k < next_sequence`
/// and `confirmed.len() == next_sequence`; a pending order always carries
/// `next_sequence`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccountOffchainState {
    /// Learned from the first order or certificate the account sends.
    pub owner_key: Option<PublicKeyBytes>,
    pub balance: Balance,
    pub next_sequence: SequenceNumber,
    pub pending: Option<SignedTransferOrder>,
    pub confirmed: Vec<CertifiedTransfer>,
    pub received: Vec<CertifiedTransfer>,
    pub synchronized: Vec<PrimarySynchronizationOrder>,
}

impl Wire for AccountOffchainState {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.owner_key.encode_into(out);
        self.balance.encode_into(out);
        self.next_sequence.encode_into(out);
        self.pending.encode_into(out);
        self.confirmed.encode_into(out);
        self.received.encode_into(out);
        self.synchronized.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(AccountOffchainState {
            owner_key: Wire::decode_from(r)?,
            balance: Wire::decode_from(r)?,
            next_sequence: Wire::decode_from(r)?,
            pending: Wire::decode_from(r)?,
            confirmed: Wire::decode_from(r)?,
            received: Wire::decode_from(r)?,
            synchronized: Wire::decode_from(r)?,
        })
    }
}

#[derive(Clone)]
pub struct AuthorityState {
    name: AuthorityName,
    keypair: KeyPair,
    committee: Committee,
    shards: ShardAssignment,
    shard_id: ShardId,
    accounts: HashMap<Address, AccountOffchainState>,
    /// Index of the last Primary synchronization order applied. Every shard
    /// sees every order so the index stays contiguous.
    last_transaction: u64,
    /// `(sender, sequence)` of every certificate credited here.
    credited: HashSet<(Address, SequenceNumber)>,
}

impl AuthorityState {
    pub fn new(
        keypair: KeyPair,
        committee: Committee,
        shards: ShardAssignment,
        shard_id: ShardId,
    ) -> Self {
        assert!(shard_id < shards.num_shards(), "shard id out of range");
        AuthorityState {
            name: keypair.public(),
            keypair,
            committee,
            shards,
            shard_id,
            accounts: HashMap::new(),
            last_transaction: 0,
            credited: HashSet::new(),
        }
    }

    pub fn name(&self) -> AuthorityName {
        self.name
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn shard_id(&self) -> ShardId {
        self.shard_id
    }

    pub fn shards(&self) -> ShardAssignment {
        self.shards
    }

    pub fn last_transaction(&self) -> u64 {
        self.last_transaction
    }

    pub fn account(&self, address: &Address) -> Option<&AccountOffchainState> {
        self.accounts.get(address)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&Address, &AccountOffchainState)> {
        self.accounts.iter()
    }

    pub fn in_shard(&self, address: &Address) -> bool {
        self.shards.which_shard(address) == self.shard_id
    }

    fn check_shard(&self, address: &Address) -> Result<()> {
        let expected = self.shards.which_shard(address);
        ensure!(
            expected == self.shard_id,
            Error::WrongShard {
                expected,
                actual: self.shard_id
            }
        );
        Ok(())
    }

    /// Votes for an order, locking the sender's next sequence number on it.
    pub fn handle_transfer_order(&mut self, order: TransferOrder) -> Result<SignedTransferOrder> {
        self.check_shard(&order.sender)?;
        order.verify_signature()?;
        ensure!(order.amount.0 > 0, Error::InvalidAmount);
        let account = self
            .accounts
            .get_mut(&order.sender)
            .ok_or(Error::UnknownSenderAccount)?;
        if let Some(pending) = &account.pending {
            ensure!(pending.order == order, Error::PreviousTransferPending);
            return Ok(pending.clone());
        }
        ensure!(
            order.sequence == account.next_sequence,
            Error::UnexpectedSequence {
                expected: account.next_sequence,
                received: order.sequence
            }
        );
        ensure!(
            account.balance.covers(order.amount),
            Error::InsufficientFunds {
                balance: account.balance.0,
                amount: order.amount.0
            }
        );
        debug_assert!(account.balance.covers(order.amount));
        account.owner_key = Some(order.sender_key);
        let signed = SignedTransferOrder::new(order, &self.keypair);
        account.pending = Some(signed.clone());
        Ok(signed)
    }

    /// Settles a certificate. The sender is debited even into a negative
    /// balance: the certificate is proof that a quorum checked funds.
    pub fn handle_confirmation_order(
        &mut self,
        certificate: CertifiedTransfer,
    ) -> Result<(AccountInfoResponse, Option<CrossShardUpdate>)> {
        let sender = certificate.sender();
        self.check_shard(&sender)?;
        // A byte-identical replay of a settled certificate was verified
        // when it was first applied.
        if let Some(account) = self.accounts.get(&sender) {
            let settled = usize::try_from(certificate.sequence().0)
                .ok()
                .and_then(|i| account.confirmed.get(i));
            if certificate.sequence() < account.next_sequence && settled == Some(&certificate) {
                return Ok((self.summary(&sender), None));
            }
        }
        certificate.verify(&self.committee)?;
        let next = self
            .accounts
            .get(&sender)
            .map_or(SequenceNumber(0), |a| a.next_sequence);
        if certificate.sequence() < next {
            return Ok((self.summary(&sender), None));
        }
        ensure!(
            certificate.sequence() == next,
            Error::MissingEarlierConfirmations { expected: next }
        );

        let account = self.accounts.entry(sender).or_default();
        account.owner_key = Some(certificate.order.sender_key);
        account.balance = account.balance.debit(certificate.amount());
        account.next_sequence = next.next();
        account.pending = None;
        account.confirmed.push(certificate.clone());

        let update = match certificate.order.recipient {
            RecipientAddress::Primary(_) => None,
            RecipientAddress::Offchain(recipient) if self.in_shard(&recipient) => {
                self.credit(recipient, certificate);
                None
            }
            RecipientAddress::Offchain(recipient) => Some(CrossShardUpdate {
                shard_id: self.shards.which_shard(&recipient),
                certificate,
            }),
        };
        Ok((self.summary(&sender), update))
    }

    fn credit(&mut self, recipient: Address, certificate: CertifiedTransfer) {
        if !self
            .credited
            .insert((certificate.sender(), certificate.sequence()))
        {
            return;
        }
        let account = self.accounts.entry(recipient).or_default();
        account.balance = account.balance.credit(certificate.amount());
        account.received.push(certificate);
    }

    /// Credit arriving from another shard of this authority over the
    /// authenticated channel; the sending shard already checked it.
    pub fn handle_cross_shard_commit(&mut self, certificate: CertifiedTransfer) -> Result<()> {
        let recipient = certificate
            .order
            .recipient
            .offchain()
            .ok_or(Error::PrimaryRecipient)?;
        self.check_shard(&recipient)?;
        self.credit(recipient, certificate);
        Ok(())
    }

    /// Applies the next Primary synchronization order. The caller has
    /// authenticated it. Orders for accounts of other shards only advance
    /// `last_transaction`.
    pub fn handle_primary_synchronization_order(
        &mut self,
        order: PrimarySynchronizationOrder,
    ) -> Result<()> {
        if order.transaction_index <= self.last_transaction {
            return Ok(());
        }
        ensure!(
            order.transaction_index == self.last_transaction + 1,
            Error::SyncOrderGap {
                expected: self.last_transaction + 1,
                received: order.transaction_index
            }
        );
        self.last_transaction += 1;
        if self.in_shard(&order.recipient) {
            let account = self.accounts.entry(order.recipient).or_default();
            account.balance = account.balance.credit(order.amount);
            account.synchronized.push(order);
        }
        Ok(())
    }

    pub fn handle_account_info_query(&self, query: &AccountInfoQuery) -> Result<AccountInfoResponse> {
        self.check_shard(&query.address)?;
        let account = self
            .accounts
            .get(&query.address)
            .ok_or(Error::UnknownAccount(query.address))?;
        let confirmed = match query.confirmed_range {
            Some((lo, hi)) if lo <= hi => {
                let len = account.confirmed.len() as u64;
                let (lo, hi) = (lo.0.min(len), hi.0.saturating_add(1).min(len));
                account.confirmed[lo as usize..hi as usize].to_vec()
            }
            _ => Vec::new(),
        };
        let received = match query.received_from {
            Some(from) => {
                let from = from.min(account.received.len() as u64) as usize;
                account.received[from..].to_vec()
            }
            None => Vec::new(),
        };
        let synchronized = if query.include_synchronized {
            account.synchronized.clone()
        } else {
            Vec::new()
        };
        Ok(AccountInfoResponse {
            address: query.address,
            balance: account.balance,
            next_sequence: account.next_sequence,
            pending: account.pending.clone(),
            confirmed,
            received,
            synchronized,
        })
    }

    fn summary(&self, address: &Address) -> AccountInfoResponse {
        let account = &self.accounts[address];
        AccountInfoResponse {
            address: *address,
            balance: account.balance,
            next_sequence: account.next_sequence,
            pending: account.pending.clone(),
            confirmed: Vec::new(),
            received: Vec::new(),
            synchronized: Vec::new(),
        }
    }

    /// Canonical encoding of the whole shard, accounts in address order.
    pub fn dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.name.encode_into(&mut out);
        self.shard_id.encode_into(&mut out);
        self.shards.num_shards().encode_into(&mut out);
        self.last_transaction.encode_into(&mut out);
        let accounts: BTreeMap<_, _> = self.accounts.iter().collect();
        (accounts.len() as u32).encode_into(&mut out);
        for (address, account) in accounts {
            address.encode_into(&mut out);
            account.encode_into(&mut out);
        }
        out
    }

    pub fn state_hash(&self) -> [u8; 32] {
        Sha256::digest(self.dump_bytes()).into()
    }

    /// Hash of the account table only, comparable across authorities.
    pub fn accounts_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.last_transaction.to_le_bytes());
        let accounts: BTreeMap<_, _> = self.accounts.iter().collect();
        for (address, account) in accounts {
            hasher.update(address.0);
            hasher.update(account.balance.0.to_le_bytes());
            hasher.update(account.next_sequence.0.to_le_bytes());
            for c in &account.confirmed {
                hasher.update(c.order.digest());
            }
            let mut received: Vec<_> = account.received.iter().map(|c| c.order.digest()).collect();
            received.sort_unstable();
            for d in received {
                hasher.update(d);
            }
            for s in &account.synchronized {
                hasher.update(s.to_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Applies authenticated Primary synchronization orders in index order,
/// holding back early arrivals until the gap before them fills.
#[derive(Clone)]
pub struct SyncInbox {
    primary: PublicKeyBytes,
    held: BTreeMap<u64, PrimarySynchronizationOrder>,
    limit: usize,
}

impl SyncInbox {
    pub fn new(primary: PublicKeyBytes) -> Self {
        SyncInbox {
            primary,
            held: BTreeMap::new(),
            limit: 1 << 16,
        }
    }

    pub fn primary_key(&self) -> PublicKeyBytes {
        self.primary
    }

    /// Returns `SyncOrderGap` when the order was held back.
    pub fn offer(&mut self, state: &mut AuthorityState, signed: &SignedSyncOrder) -> Result<()> {
        signed.verify(&self.primary)?;
        let index = signed.order.transaction_index;
        let expected = state.last_transaction() + 1;
        if index > expected {
            if self.held.len() < self.limit {
                self.held.insert(index, signed.order);
            }
            return Err(Error::SyncOrderGap {
                expected,
                received: index,
            });
        }
        state.handle_primary_synchronization_order(signed.order)?;
        while let Some(order) = self.held.remove(&(state.last_transaction() + 1)) {
            state.handle_primary_synchronization_order(order)?;
        }
        let last = state.last_transaction();
        self.held.retain(|&i, _| i > last);
        Ok(())
    }
}
