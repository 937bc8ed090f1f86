// SPDX-License-Identifier: Apache-2.0

//! Client side: driving orders and certificates through the committee,
//! repairing lagging authorities, and a single-account wallet.

use crate::base::{Address, Amount, AuthorityName, Balance, KeyPair, SequenceNumber, UserData};
use crate::committee::Committee;
use crate::error::{ensure, Error, Result};
use crate::messages::{
    aggregate_certificate, AccountInfoQuery, AccountInfoResponse, CertifiedTransfer,
    RecipientAddress, RedeemTransaction, SignedSyncOrder, SignedTransferOrder, TransferOrder,
};
use crate::primary::PrimaryState;
use crate::wire::Wire;
use futures::future::LocalBoxFuture;
use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Duration;

/// Request/response access to one authority, routed to the right shard by
/// the implementation. Transports report lost requests as `Error::Timeout`.
pub trait AuthorityClient {
    fn handle_transfer_order(
        &self,
        order: TransferOrder,
    ) -> LocalBoxFuture<'static, Result<SignedTransferOrder>>;

    fn handle_confirmation_order(
        &self,
        certificate: CertifiedTransfer,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>>;

    fn handle_account_info_query(
        &self,
        query: AccountInfoQuery,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>>;

    /// Relays a Primary synchronization order to the shard owning `route`.
    fn handle_primary_sync_order(
        &self,
        route: Address,
        order: SignedSyncOrder,
    ) -> LocalBoxFuture<'static, Result<()>>;
}

pub trait Timer {
    fn sleep(&self, duration: Duration) -> LocalBoxFuture<'static, ()>;
}

/// A timer that never waits; for transports that settle synchronously.
pub struct NoDelay;

impl Timer for NoDelay {
    fn sleep(&self, _: Duration) -> LocalBoxFuture<'static, ()> {
        Box::pin(futures::future::ready(()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaitMode {
    /// Return once `2f + 1` authorities answered.
    FirstQuorum,
    /// Wait for every authority to answer or fail.
    All,
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    /// Pause before retrying an authority that reported missing funds.
    pub retry_interval: Duration,
    /// Attempts per authority while collecting votes.
    pub max_attempts: usize,
    pub wait_mode: WaitMode,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            retry_interval: Duration::from_millis(500),
            max_attempts: 4,
            wait_mode: WaitMode::FirstQuorum,
        }
    }
}

/// Certificates downloaded per repair query.
const REPAIR_CHUNK: u64 = 32;

#[derive(Default)]
struct Knowledge {
    certificates: RefCell<HashMap<(Address, SequenceNumber), CertifiedTransfer>>,
    sync_orders: RefCell<BTreeMap<u64, SignedSyncOrder>>,
}

#[derive(Clone, Debug, Default)]
pub struct ConfirmationOutcome {
    pub settled: Vec<AuthorityName>,
    pub failed: Vec<(AuthorityName, Error)>,
}

/// Drives orders and certificates through a committee. Holds no account
/// secrets, so any party can use it to finish a protocol run it was handed.
#[derive(Clone)]
pub struct CommitteeDriver {
    committee: Committee,
    authorities: Rc<Vec<(AuthorityName, Rc<dyn AuthorityClient>)>>,
    timer: Rc<dyn Timer>,
    config: ClientConfig,
    knowledge: Rc<Knowledge>,
}

impl CommitteeDriver {
    pub fn new(
        committee: Committee,
        authorities: Vec<(AuthorityName, Rc<dyn AuthorityClient>)>,
        timer: Rc<dyn Timer>,
        config: ClientConfig,
    ) -> Self {
        assert_eq!(
            authorities.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
            committee.authorities(),
            "authority clients must follow committee order"
        );
        CommitteeDriver {
            committee,
            authorities: Rc::new(authorities),
            timer,
            config,
            knowledge: Rc::default(),
        }
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn authority(&self, index: usize) -> &Rc<dyn AuthorityClient> {
        &self.authorities[index].1
    }

    pub fn remember_certificate(&self, certificate: &CertifiedTransfer) {
        self.knowledge
            .certificates
            .borrow_mut()
            .entry((certificate.sender(), certificate.sequence()))
            .or_insert_with(|| certificate.clone());
    }

    pub fn known_certificate(
        &self,
        sender: &Address,
        sequence: SequenceNumber,
    ) -> Option<CertifiedTransfer> {
        self.knowledge
            .certificates
            .borrow()
            .get(&(*sender, sequence))
            .cloned()
    }

    pub fn observe_sync_orders<'a>(&self, orders: impl IntoIterator<Item = &'a SignedSyncOrder>) {
        let mut known = self.knowledge.sync_orders.borrow_mut();
        for s in orders {
            known.insert(s.order.transaction_index, *s);
        }
    }

    /// Collects `2f + 1` votes for `order` and returns the certificate.
    /// Authorities that report a stale view of the sender are repaired and
    /// retried; `incoming` lists certificates that credit the sender.
    pub async fn certify(
        &self,
        order: &TransferOrder,
        incoming: &[CertifiedTransfer],
    ) -> Result<CertifiedTransfer> {
        order.verify_signature()?;
        let mut requests: FuturesUnordered<_> = (0..self.authorities.len())
            .map(|i| async move { (i, self.request_vote(i, order, incoming).await) })
            .collect();
        let mut votes: Vec<SignedTransferOrder> = Vec::new();
        while let Some((i, result)) = requests.next().await {
            match result {
                Ok(vote) if vote.order == *order && vote.authority == self.authorities[i].0 => {
                    votes.push(vote)
                }
                Ok(_) => continue,
                Err(e) => {
                    log::debug!("authority {i} refused order: {e}");
                    continue;
                }
            }
            if votes.len() >= self.committee.quorum_threshold() {
                let certificate = aggregate_certificate(&self.committee, order, &votes)?;
                if certificate.verify(&self.committee).is_ok() {
                    self.remember_certificate(&certificate);
                    return Ok(certificate);
                }
                votes.retain(|v| v.verify(&self.committee).is_ok());
            }
        }
        Err(Error::QuorumUnreachable)
    }

    async fn request_vote(
        &self,
        index: usize,
        order: &TransferOrder,
        incoming: &[CertifiedTransfer],
    ) -> Result<SignedTransferOrder> {
        let authority = self.authority(index).clone();
        let mut last_error = Error::QuorumUnreachable;
        for attempt in 0..self.config.max_attempts {
            match authority.handle_transfer_order(order.clone()).await {
                Ok(vote) => return Ok(vote),
                Err(Error::UnexpectedSequence { expected, received }) if expected < received => {
                    self.repair_authority(index, order.sender, received).await?;
                    last_error = Error::UnexpectedSequence { expected, received };
                }
                // Either a conflicting order at this sequence, or a stale lock
                // on an earlier one that confirmation will clear.
                Err(Error::PreviousTransferPending) if order.sequence.0 > 0 && attempt == 0 => {
                    self.repair_authority(index, order.sender, order.sequence)
                        .await?;
                    last_error = Error::PreviousTransferPending;
                }
                Err(e @ (Error::InsufficientFunds { .. } | Error::UnknownSenderAccount)) => {
                    if attempt > 0 {
                        self.timer.sleep(self.config.retry_interval).await;
                    }
                    self.forward_sync_orders(index, order.sender).await;
                    for certificate in incoming {
                        if let Err(e) = self.confirm_at(index, certificate).await {
                            log::debug!("authority {index}: credit repair failed: {e}");
                        }
                    }
                    last_error = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_error)
    }

    /// Relays every known Primary credit of `recipient` to one authority,
    /// filling index gaps it reports from the orders observed so far.
    async fn forward_sync_orders(&self, index: usize, recipient: Address) {
        let authority = self.authority(index).clone();
        let own: Vec<SignedSyncOrder> = self
            .knowledge
            .sync_orders
            .borrow()
            .values()
            .filter(|s| s.order.recipient == recipient)
            .copied()
            .collect();
        for signed in own {
            if let Err(Error::SyncOrderGap { expected, received }) =
                authority.handle_primary_sync_order(recipient, signed).await
            {
                let gap: Vec<SignedSyncOrder> = self
                    .knowledge
                    .sync_orders
                    .borrow()
                    .range(expected..received)
                    .map(|(_, s)| *s)
                    .collect();
                for filler in gap {
                    let _ = authority.handle_primary_sync_order(recipient, filler).await;
                }
            }
        }
    }

    /// Submits one certificate to one authority, first replaying the
    /// sender's earlier certificates if the authority lags behind.
    pub async fn confirm_at(
        &self,
        index: usize,
        certificate: &CertifiedTransfer,
    ) -> Result<AccountInfoResponse> {
        let authority = self.authority(index).clone();
        match authority.handle_confirmation_order(certificate.clone()).await {
            Err(Error::MissingEarlierConfirmations { .. }) => {
                self.repair_authority(index, certificate.sender(), certificate.sequence())
                    .await?;
                authority.handle_confirmation_order(certificate.clone()).await
            }
            other => other,
        }
    }

    /// Brings authority `index` to `next_sequence >= target` for `sender` by
    /// replaying certificates it is missing, downloaded newest first.
    pub async fn repair_authority(
        &self,
        index: usize,
        sender: Address,
        target: SequenceNumber,
    ) -> Result<()> {
        let authority = self.authority(index).clone();
        let k = match authority
            .handle_account_info_query(AccountInfoQuery::summary(sender))
            .await
        {
            Ok(info) => info.next_sequence.0,
            Err(Error::UnknownAccount(_)) => 0,
            Err(e) => return Err(e),
        };
        if k >= target.0 {
            return Ok(());
        }
        let mut hi = target.0;
        while hi > k {
            let lo = hi.saturating_sub(REPAIR_CHUNK).max(k);
            if (lo..hi).any(|s| self.known_certificate(&sender, SequenceNumber(s)).is_none()) {
                self.fetch_certificates(index, sender, lo, hi - 1).await;
            }
            hi = lo;
        }
        let mut missing = Vec::new();
        for s in k..target.0 {
            match self.known_certificate(&sender, SequenceNumber(s)) {
                Some(c) => missing.push(c),
                None => {
                    return Err(Error::Unrepairable {
                        sender,
                        sequence: SequenceNumber(s),
                    })
                }
            }
        }
        for certificate in missing {
            authority.handle_confirmation_order(certificate).await?;
        }
        Ok(())
    }

    /// Repairs every authority in parallel; succeeds once a quorum is at
    /// `target`.
    pub async fn repair_all(&self, sender: Address, target: SequenceNumber) -> Result<()> {
        let mut repairs: FuturesUnordered<_> = (0..self.authorities.len())
            .map(|i| self.repair_authority(i, sender, target))
            .collect();
        let mut ok = 0;
        while let Some(result) = repairs.next().await {
            if result.is_ok() {
                ok += 1;
                if ok >= self.committee.quorum_threshold()
                    && self.config.wait_mode == WaitMode::FirstQuorum
                {
                    return Ok(());
                }
            }
        }
        ensure!(
            ok >= self.committee.quorum_threshold(),
            Error::QuorumUnreachable
        );
        Ok(())
    }

    /// Downloads `sender`'s certificates `lo..=hi` from authorities other
    /// than `exclude`, keeping those that verify.
    async fn fetch_certificates(&self, exclude: usize, sender: Address, lo: u64, hi: u64) {
        let query = AccountInfoQuery {
            address: sender,
            confirmed_range: Some((SequenceNumber(lo), SequenceNumber(hi))),
            ..Default::default()
        };
        let mut responses: FuturesUnordered<_> = (0..self.authorities.len())
            .filter(|&j| j != exclude)
            .map(|j| self.authority(j).handle_account_info_query(query.clone()))
            .collect();
        while let Some(response) = responses.next().await {
            let Ok(info) = response else { continue };
            for certificate in info.confirmed {
                let s = certificate.sequence().0;
                if certificate.sender() == sender
                    && (lo..=hi).contains(&s)
                    && self.known_certificate(&sender, certificate.sequence()).is_none()
                    && certificate.verify(&self.committee).is_ok()
                {
                    self.remember_certificate(&certificate);
                }
            }
            if (lo..=hi).all(|s| self.known_certificate(&sender, SequenceNumber(s)).is_some()) {
                return;
            }
        }
    }

    /// Broadcasts a confirmation order. Anyone holding the certificate may
    /// call this.
    pub async fn confirm_certificate(
        &self,
        certificate: &CertifiedTransfer,
    ) -> Result<ConfirmationOutcome> {
        self.remember_certificate(certificate);
        let mut confirmations: FuturesUnordered<_> = (0..self.authorities.len())
            .map(|i| async move { (i, self.confirm_at(i, certificate).await) })
            .collect();
        let mut outcome = ConfirmationOutcome::default();
        let quorum = self.committee.quorum_threshold();
        while let Some((i, result)) = confirmations.next().await {
            let name = self.authorities[i].0;
            match result {
                Ok(_) => outcome.settled.push(name),
                Err(e) => outcome.failed.push((name, e)),
            }
            if outcome.settled.len() >= quorum && self.config.wait_mode == WaitMode::FirstQuorum {
                return Ok(outcome);
            }
        }
        ensure!(outcome.settled.len() >= quorum, Error::QuorumUnreachable);
        Ok(outcome)
    }

    /// Account info from every authority that answers, in committee order.
    pub async fn query_account(
        &self,
        query: AccountInfoQuery,
    ) -> Vec<(AuthorityName, Result<AccountInfoResponse>)> {
        let mut queries: FuturesUnordered<_> = self
            .authorities
            .iter()
            .enumerate()
            .map(|(i, (_, a))| {
                let f = a.handle_account_info_query(query.clone());
                async move { (i, f.await) }
            })
            .collect();
        let mut out = Vec::new();
        while let Some(r) = queries.next().await {
            out.push(r);
        }
        out.sort_by_key(|(i, _)| *i);
        out.into_iter()
            .map(|(i, r)| (self.authorities[i].0, r))
            .collect()
    }
}

/// Persistent state of a correct client.
///
/// Invariants: at most one order is ever signed per sequence number, and a
/// pending order always carries `next_sequence`.
pub struct ClientState {
    pub address: Address,
    keypair: KeyPair,
    pub next_sequence: SequenceNumber,
    pub pending_order: Option<TransferOrder>,
    /// Outgoing certificates by sequence number.
    pub sent: BTreeMap<SequenceNumber, CertifiedTransfer>,
    /// Incoming certificates by `(sender, sequence)`.
    pub received: BTreeMap<(Address, SequenceNumber), CertifiedTransfer>,
    /// Primary credits to this account, by transaction index.
    pub funding: BTreeMap<u64, SignedSyncOrder>,
}

impl ClientState {
    pub fn new(keypair: KeyPair) -> Self {
        ClientState {
            address: keypair.address(),
            keypair,
            next_sequence: SequenceNumber(0),
            pending_order: None,
            sent: BTreeMap::new(),
            received: BTreeMap::new(),
            funding: BTreeMap::new(),
        }
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn known_funding(&self) -> u128 {
        self.funding.values().map(|s| u128::from(s.order.amount.0)).sum()
    }

    /// Funding plus incoming minus outgoing and pending, floored at zero.
    pub fn spendable_balance(&self) -> Amount {
        let incoming: i128 = self.received.values().map(|c| i128::from(c.amount().0)).sum();
        let outgoing: i128 = self
            .sent
            .range(..self.next_sequence)
            .map(|(_, c)| i128::from(c.amount().0))
            .sum();
        let pending = self
            .pending_order
            .as_ref()
            .map_or(0, |o| i128::from(o.amount.0));
        let total = self.known_funding() as i128 + incoming - outgoing - pending;
        Amount(total.clamp(0, i128::from(u64::MAX)) as u64)
    }

    pub fn snapshot(&self) -> ClientSnapshot {
        ClientSnapshot {
            secret_key: hex::encode(self.keypair.secret_bytes()),
            next_sequence: self.next_sequence.0,
            pending_order: self.pending_order.as_ref().map(|o| hex::encode(o.to_bytes())),
            sent: self.sent.values().map(|c| hex::encode(c.to_bytes())).collect(),
            received: self
                .received
                .values()
                .map(|c| hex::encode(c.to_bytes()))
                .collect(),
            funding: self
                .funding
                .values()
                .map(|s| hex::encode(s.to_bytes()))
                .collect(),
        }
    }

    pub fn from_snapshot(snapshot: &ClientSnapshot) -> Result<Self> {
        fn decode<T: Wire>(h: &str) -> Result<T> {
            T::from_bytes(&hex::decode(h).map_err(|e| Error::Storage(e.to_string()))?)
        }
        let secret: [u8; 32] = hex::decode(&snapshot.secret_key)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Storage("bad secret key".into()))?;
        let mut state = ClientState::new(KeyPair::from_secret_bytes(&secret));
        state.next_sequence = SequenceNumber(snapshot.next_sequence);
        state.pending_order = snapshot.pending_order.as_deref().map(decode).transpose()?;
        for h in &snapshot.sent {
            let c: CertifiedTransfer = decode(h)?;
            state.sent.insert(c.sequence(), c);
        }
        for h in &snapshot.received {
            let c: CertifiedTransfer = decode(h)?;
            state.received.insert((c.sender(), c.sequence()), c);
        }
        for h in &snapshot.funding {
            let s: SignedSyncOrder = decode(h)?;
            state.funding.insert(s.order.transaction_index, s);
        }
        Ok(state)
    }
}

/// On-disk wallet: JSON with hex-encoded canonical records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSnapshot {
    pub secret_key: String,
    pub next_sequence: u64,
    pub pending_order: Option<String>,
    pub sent: Vec<String>,
    pub received: Vec<String>,
    pub funding: Vec<String>,
}

impl ClientSnapshot {
    /// Replaces `path` atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let storage = |e: std::io::Error| Error::Storage(e.to_string());
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut file = tempfile::NamedTempFile::new_in(dir).map_err(storage)?;
        file.write_all(serde_json::to_string_pretty(self).expect("serializes").as_bytes())
            .map_err(storage)?;
        file.as_file().sync_all().map_err(storage)?;
        file.persist(path).map_err(|e| storage(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Storage(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Storage(e.to_string()))
    }
}

/// A correct single-account wallet.
pub struct AccountClient {
    state: ClientState,
    driver: CommitteeDriver,
    persist_path: Option<PathBuf>,
    received_cursors: Vec<u64>,
}

impl AccountClient {
    pub fn new(keypair: KeyPair, driver: CommitteeDriver) -> Self {
        Self::from_state(ClientState::new(keypair), driver)
    }

    pub fn from_state(state: ClientState, driver: CommitteeDriver) -> Self {
        for c in state.sent.values().chain(state.received.values()) {
            driver.remember_certificate(c);
        }
        driver.observe_sync_orders(state.funding.values());
        let n = driver.committee().size();
        AccountClient {
            state,
            driver,
            persist_path: None,
            received_cursors: vec![0; n],
        }
    }

    /// Persist the wallet to `path` after every state change.
    pub fn with_persistence(mut self, path: PathBuf) -> Self {
        self.persist_path = Some(path);
        self
    }

    fn persist(&self) -> Result<()> {
        match &self.persist_path {
            Some(path) => self.state.snapshot().save(path),
            None => Ok(()),
        }
    }

    pub fn address(&self) -> Address {
        self.state.address
    }

    pub fn state(&self) -> &ClientState {
        &self.state
    }

    pub fn driver(&self) -> &CommitteeDriver {
        &self.driver
    }

    pub fn spendable_balance(&self) -> Amount {
        self.state.spendable_balance()
    }

    /// Records Primary synchronization orders observed on the ledger.
    pub fn receive_from_primary(&mut self, orders: &[SignedSyncOrder]) -> Result<()> {
        self.driver.observe_sync_orders(orders);
        for s in orders {
            if s.order.recipient == self.state.address {
                self.state.funding.insert(s.order.transaction_index, *s);
            }
        }
        self.persist()
    }

    /// Accepts a certificate shown by its sender.
    pub fn receive_certificate(&mut self, certificate: CertifiedTransfer) -> Result<()> {
        ensure!(
            certificate.order.recipient == RecipientAddress::Offchain(self.state.address),
            Error::CertificateMismatch
        );
        certificate.verify(self.driver.committee())?;
        self.driver.remember_certificate(&certificate);
        self.state
            .received
            .insert((certificate.sender(), certificate.sequence()), certificate);
        self.persist()
    }

    /// Signs the next order and certifies it. The order stays pending until
    /// a certificate exists, so a failed attempt can only be resumed with
    /// the same order.
    pub async fn certify_transfer(
        &mut self,
        recipient: RecipientAddress,
        amount: Amount,
        user_data: UserData,
    ) -> Result<CertifiedTransfer> {
        let order = match &self.state.pending_order {
            Some(pending) => {
                ensure!(
                    pending.recipient == recipient
                        && pending.amount == amount
                        && pending.user_data == user_data,
                    Error::PendingOrderExists
                );
                pending.clone()
            }
            None => {
                let spendable = self.state.spendable_balance();
                ensure!(
                    amount.0 <= spendable.0,
                    Error::InsufficientFunds {
                        balance: i128::from(spendable.0),
                        amount: amount.0
                    }
                );
                let order = TransferOrder::new(
                    &self.state.keypair,
                    self.state.address,
                    recipient,
                    amount,
                    self.state.next_sequence,
                    user_data,
                )?;
                self.state.pending_order = Some(order.clone());
                self.persist()?;
                order
            }
        };
        self.certify_pending(order).await
    }

    /// Retries certification of the pending order, if any.
    pub async fn retry_pending(&mut self) -> Result<Option<CertifiedTransfer>> {
        match self.state.pending_order.clone() {
            Some(order) => self.certify_pending(order).await.map(Some),
            None => Ok(None),
        }
    }

    async fn certify_pending(&mut self, order: TransferOrder) -> Result<CertifiedTransfer> {
        let incoming: Vec<CertifiedTransfer> = self.state.received.values().cloned().collect();
        let certificate = self.driver.certify(&order, &incoming).await?;
        self.state.sent.insert(certificate.sequence(), certificate.clone());
        self.state.next_sequence = self.state.next_sequence.next();
        self.state.pending_order = None;
        self.persist()?;
        Ok(certificate)
    }

    /// Certifies, then confirms at the committee.
    pub async fn initiate_transfer(
        &mut self,
        recipient: RecipientAddress,
        amount: Amount,
        user_data: UserData,
    ) -> Result<CertifiedTransfer> {
        let certificate = self.certify_transfer(recipient, amount, user_data).await?;
        self.driver.confirm_certificate(&certificate).await?;
        Ok(certificate)
    }

    pub async fn confirm(&self, certificate: &CertifiedTransfer) -> Result<ConfirmationOutcome> {
        self.driver.confirm_certificate(certificate).await
    }

    /// Pulls new incoming certificates from the authorities' received logs.
    pub async fn sync_received(&mut self) -> Result<usize> {
        let address = self.state.address;
        let mut polls: FuturesUnordered<_> = (0..self.driver.committee().size())
            .map(|i| {
                let query = AccountInfoQuery {
                    address,
                    received_from: Some(self.received_cursors[i]),
                    ..Default::default()
                };
                let f = self.driver.authority(i).handle_account_info_query(query);
                async move { (i, f.await) }
            })
            .collect();
        let mut found = 0;
        let mut answered = 0;
        while let Some((i, response)) = polls.next().await {
            let Ok(info) = response else { continue };
            answered += 1;
            self.received_cursors[i] += info.received.len() as u64;
            for certificate in info.received {
                let key = (certificate.sender(), certificate.sequence());
                if self.state.received.contains_key(&key)
                    || certificate.order.recipient != RecipientAddress::Offchain(address)
                    || certificate.verify(self.driver.committee()).is_err()
                {
                    continue;
                }
                self.driver.remember_certificate(&certificate);
                self.state.received.insert(key, certificate);
                found += 1;
            }
        }
        ensure!(
            answered >= self.driver.committee().validity_threshold(),
            Error::QuorumUnreachable
        );
        self.persist()?;
        Ok(found)
    }

    /// Balance and sequence number reported by a quorum of authorities:
    /// the `f + 1`-th highest balance is vouched for by an honest authority.
    pub async fn query_balance(&self) -> Result<(Balance, SequenceNumber)> {
        let responses = self
            .driver
            .query_account(AccountInfoQuery::summary(self.state.address))
            .await;
        let mut infos: Vec<_> = responses.into_iter().filter_map(|(_, r)| r.ok()).collect();
        ensure!(
            infos.len() >= self.driver.committee().quorum_threshold(),
            Error::QuorumUnreachable
        );
        infos.sort_by_key(|i| std::cmp::Reverse((i.next_sequence, i.balance)));
        let pick = &infos[self.driver.committee().validity_threshold() - 1];
        Ok((pick.balance, pick.next_sequence))
    }
}

/// Pays out a certificate addressed to a Primary account.
pub fn redeem_to_primary(certificate: &CertifiedTransfer, primary: &mut PrimaryState) -> Result<()> {
    ensure!(
        certificate.order.recipient.is_primary(),
        Error::NotPrimaryRecipient
    );
    primary.handle_redeem_transaction(&RedeemTransaction {
        certificate: certificate.clone(),
    })
}
