// SPDX-License-Identifier: Apache-2.0

//! Virtual-time scheduler. Client code runs unmodified on a single-threaded
//! executor; every request, reply, cross-shard update, feed delivery and
//! timer is an event on one heap ordered by `(time, insertion)`.

use crate::authority::{Request, Response, SimAuthority};
use crate::config::{Behavior, ConfigError, SimConfig};
use crate::idempotency::Probe;
use crate::trace::{
    AccountView, Actor, AuthorityView, Checkpoint, LedgerEntry, OpKind, OpOutcome, OpResult,
    OrderId, OrderRecord, SimStats, Trace, TraceEvent,
};
use futures::channel::oneshot;
use futures::executor::{LocalPool, LocalSpawner};
use futures::future::LocalBoxFuture;
use futures::task::LocalSpawnExt;
use quorumpay_core::authority::AuthorityState;
use quorumpay_core::client::{
    AccountClient, AuthorityClient, ClientConfig, CommitteeDriver, Timer, WaitMode,
};
use quorumpay_core::committee::{Committee, ShardAssignment};
use quorumpay_core::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, CrossShardUpdate, FundingTransaction,
    RedeemTransaction, SignedSyncOrder, SignedTransferOrder, TransferOrder,
};
use quorumpay_core::primary::PrimaryState;
use quorumpay_core::{Address, Amount, Error, KeyPair, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::cell::{Ref, RefCell};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::future::Future;
use std::rc::Rc;
use std::time::Duration;

/// Runaway guard.
const MAX_EVENTS: u64 = 200_000_000;

enum Event {
    Deliver {
        id: u64,
        authority: usize,
        request: Request,
    },
    Reply {
        id: u64,
        response: Result<Response>,
    },
    Retransmit {
        id: u64,
    },
    CrossShard {
        authority: usize,
        update: CrossShardUpdate,
    },
    Feed {
        authority: usize,
        order: SignedSyncOrder,
    },
    Wake {
        timer: u64,
    },
}

impl Event {
    fn is_message(&self) -> bool {
        !matches!(self, Event::Retransmit { .. } | Event::Wake { .. })
    }
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed: the heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Pending {
    authority: usize,
    request: Request,
    reply: oneshot::Sender<Result<Response>>,
    transmissions: u32,
}

struct Net {
    now: u64,
    seq: u64,
    heap: BinaryHeap<Scheduled>,
    rng: ChaCha8Rng,
    in_flight: usize,
    next_id: u64,
    pending: BTreeMap<u64, Pending>,
    timers: BTreeMap<u64, oneshot::Sender<()>>,
    stats: SimStats,
    /// Authority state changed since the last checkpoint.
    dirty: bool,
    last_checkpoint: u64,
}

impl Net {
    fn push(&mut self, delay: u64, event: Event) {
        if event.is_message() {
            self.in_flight += 1;
        }
        self.seq += 1;
        self.heap.push(Scheduled {
            time: self.now + delay,
            seq: self.seq,
            event,
        });
    }

    fn delay(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.gen_range(lo..=hi)
    }
}

pub(crate) struct Recorder {
    record_events: bool,
    next_index: u64,
    events: Vec<TraceEvent>,
    orders: Vec<OrderRecord>,
    order_ids: HashMap<(Address, u64, [u8; 64]), OrderId>,
    ledger: Vec<LedgerEntry>,
    checkpoints: Vec<Checkpoint>,
    outcomes: Vec<OpOutcome>,
    /// Latest view per authority, extended incrementally since logs only
    /// grow.
    views: Vec<BTreeMap<Address, AccountView>>,
}

impl Recorder {
    fn event(&mut self, time_us: u64, actor: Actor, tag: &'static str, state_hash: u64) -> u64 {
        let index = self.next_index;
        self.next_index += 1;
        if self.record_events {
            self.events.push(TraceEvent {
                index,
                time_us,
                actor,
                tag,
                state_hash,
            });
        }
        index
    }

    /// Index of the latest event.
    pub(crate) fn current(&self) -> u64 {
        self.next_index.saturating_sub(1)
    }

    pub(crate) fn intern(&mut self, order: &TransferOrder) -> OrderId {
        let key = (order.sender, order.sequence.0, order.signature.0);
        if let Some(id) = self.order_ids.get(&key) {
            return *id;
        }
        let id = self.orders.len() as OrderId;
        self.orders.push(OrderRecord {
            sender: order.sender,
            sequence: order.sequence.0,
            amount: order.amount.0,
            recipient: order.recipient,
            digest: order.digest(),
        });
        self.order_ids.insert(key, id);
        id
    }

    fn update_view(&mut self, authority: usize, shard: &AuthorityState) {
        let mut views = std::mem::take(&mut self.views);
        let view = &mut views[authority];
        for (address, account) in shard.accounts() {
            let v = view.entry(*address).or_default();
            v.balance = account.balance.0;
            v.next_sequence = account.next_sequence.0;
            v.pending = account.pending.as_ref().map(|p| self.intern(&p.order));
            for c in &account.confirmed[v.confirmed.len()..] {
                let id = self.intern(&c.order);
                v.confirmed.push(id);
            }
            for c in &account.received[v.received.len()..] {
                let id = self.intern(&c.order);
                v.received.push(id);
            }
            for s in &account.synchronized[v.synchronized.len()..] {
                v.synchronized.push((s.transaction_index, s.amount.0));
            }
        }
        self.views = views;
    }
}

pub(crate) struct SimCore {
    pub(crate) config: SimConfig,
    pub(crate) committee: Committee,
    pub(crate) authorities: RefCell<Vec<SimAuthority>>,
    pub(crate) primary: RefCell<PrimaryState>,
    net: RefCell<Net>,
    pub(crate) recorder: RefCell<Recorder>,
    pub(crate) probe: RefCell<Option<Probe>>,
}

fn shard_hash(authority: usize, state: &AuthorityState, address: &Address) -> u64 {
    let mut h = Sha256::new();
    h.update((authority as u64).to_le_bytes());
    h.update(state.shard_id().to_le_bytes());
    h.update(state.last_transaction().to_le_bytes());
    h.update(address.0);
    if let Some(a) = state.account(address) {
        h.update(a.balance.0.to_le_bytes());
        h.update(a.next_sequence.0.to_le_bytes());
        h.update([u8::from(a.pending.is_some())]);
        for len in [a.confirmed.len(), a.received.len(), a.synchronized.len()] {
            h.update((len as u64).to_le_bytes());
        }
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl SimCore {
    fn now(&self) -> u64 {
        self.net.borrow().now
    }

    fn request(
        self: &Rc<Self>,
        authority: usize,
        request: Request,
    ) -> LocalBoxFuture<'static, Result<Response>> {
        let (tx, rx) = oneshot::channel();
        {
            let mut net = self.net.borrow_mut();
            net.next_id += 1;
            let id = net.next_id;
            net.pending.insert(
                id,
                Pending {
                    authority,
                    request,
                    reply: tx,
                    transmissions: 0,
                },
            );
            self.transmit(&mut net, id);
        }
        Box::pin(async move { rx.await.unwrap_or(Err(Error::Timeout)) })
    }

    fn transmit(&self, net: &mut Net, id: u64) {
        let p = net.pending.get_mut(&id).expect("pending request");
        p.transmissions += 1;
        let (authority, request) = (p.authority, p.request.clone());
        let retransmit = self.config.client.retransmit_us;
        net.push(retransmit, Event::Retransmit { id });
        self.send_lossy(net, false, Event::Deliver {
            id,
            authority,
            request,
        });
    }

    /// Schedules a datagram, subject to loss and duplication.
    fn send_lossy(&self, net: &mut Net, slowest: bool, event: Event) {
        let model = &self.config.network;
        net.stats.messages += 1;
        if net.rng.gen_bool(model.drop_probability) {
            net.stats.dropped += 1;
            return;
        }
        let duplicate = net.rng.gen_bool(model.duplicate_probability);
        let delay = if slowest {
            model.max_delay_us
        } else {
            net.delay(model.min_delay_us, model.max_delay_us)
        };
        if duplicate {
            net.stats.duplicated += 1;
            let copy = match &event {
                Event::Deliver {
                    id,
                    authority,
                    request,
                } => Event::Deliver {
                    id: *id,
                    authority: *authority,
                    request: request.clone(),
                },
                Event::Reply { id, response } => Event::Reply {
                    id: *id,
                    response: response.clone(),
                },
                _ => unreachable!("only requests and replies are lossy"),
            };
            let d = net.delay(model.min_delay_us, model.max_delay_us);
            net.push(d, copy);
        }
        net.push(delay, event);
    }

    fn sleep(&self, duration: Duration) -> oneshot::Receiver<()> {
        let (tx, rx) = oneshot::channel();
        let mut net = self.net.borrow_mut();
        net.next_id += 1;
        let timer = net.next_id;
        net.timers.insert(timer, tx);
        net.push(duration.as_micros() as u64, Event::Wake { timer });
        rx
    }

    /// Processes one event. Returns false once the heap is empty.
    fn step(&self) -> bool {
        let event = {
            let mut net = self.net.borrow_mut();
            let Some(s) = net.heap.pop() else {
                return false;
            };
            net.now = s.time;
            net.stats.events += 1;
            assert!(net.stats.events < MAX_EVENTS, "simulation ran away");
            if s.event.is_message() {
                net.in_flight -= 1;
            }
            s.event
        };
        match event {
            Event::Deliver {
                id,
                authority,
                request,
            } => self.deliver(id, authority, &request),
            Event::Reply { id, response } => {
                if let Some(p) = self.net.borrow_mut().pending.remove(&id) {
                    let _ = p.reply.send(response);
                }
            }
            Event::Retransmit { id } => {
                let mut net = self.net.borrow_mut();
                let Some(p) = net.pending.get(&id) else {
                    return true;
                };
                if p.reply.is_canceled() {
                    net.pending.remove(&id);
                } else if p.transmissions >= self.config.client.max_transmissions {
                    let p = net.pending.remove(&id).expect("checked above");
                    net.stats.timeouts += 1;
                    let _ = p.reply.send(Err(Error::Timeout));
                } else {
                    net.stats.retransmissions += 1;
                    self.transmit(&mut net, id);
                }
            }
            Event::CrossShard { authority, update } => self.cross_shard(authority, update),
            Event::Feed { authority, order } => self.feed(authority, &order),
            Event::Wake { timer } => {
                if let Some(tx) = self.net.borrow_mut().timers.remove(&timer) {
                    let _ = tx.send(());
                }
            }
        }
        self.maybe_checkpoint();
        true
    }

    fn deliver(&self, id: u64, index: usize, request: &Request) {
        let mut authorities = self.authorities.borrow_mut();
        let authority = &mut authorities[index];
        if !authority.is_live() {
            return;
        }
        let shard = authority.shard_of(&request.address());
        if authority.behavior == Behavior::Honest {
            if let Some(probe) = self.probe.borrow_mut().as_mut() {
                probe.request(authority, request);
            }
        }
        let (result, update) = authority.handle(request);
        let state = &authority.shards[shard as usize];
        let hash = shard_hash(index, state, &request.address());
        let now = self.now();
        let mut recorder = self.recorder.borrow_mut();
        let event = recorder.event(
            now,
            Actor::Shard {
                authority: index,
                shard,
            },
            request.tag(),
            hash,
        );
        if let Ok(Response::Vote(vote)) = &result {
            let order = recorder.intern(&vote.order);
            let balance = authority
                .behavior
                .is_honest()
                .then(|| state.account(&vote.order.sender).map(|a| a.balance.0))
                .flatten();
            recorder.ledger.push(LedgerEntry::Vote {
                event,
                authority: index,
                order,
                balance,
            });
        }
        drop(recorder);
        let slowest = matches!(
            authority.behavior,
            Behavior::Byzantine(crate::config::ByzantineStrategy::DelayMax)
        );
        let mut net = self.net.borrow_mut();
        net.dirty = true;
        if let Some(update) = update {
            self.send_cross_shard(&mut net, index, update);
        }
        self.send_lossy(&mut net, slowest, Event::Reply { id, response: result });
    }

    fn send_cross_shard(&self, net: &mut Net, authority: usize, update: CrossShardUpdate) {
        let model = &self.config.network;
        let copies = if net.rng.gen_bool(model.duplicate_probability) { 2 } else { 1 };
        for _ in 0..copies {
            net.stats.cross_shard += 1;
            let d = net.delay(model.cross_shard_min_delay_us, model.cross_shard_max_delay_us);
            net.push(
                d,
                Event::CrossShard {
                    authority,
                    update: update.clone(),
                },
            );
        }
    }

    fn cross_shard(&self, index: usize, update: CrossShardUpdate) {
        let mut authorities = self.authorities.borrow_mut();
        let authority = &mut authorities[index];
        if !authority.is_live() {
            return;
        }
        let shard = update.shard_id;
        let recipient = update.certificate.order.recipient.address();
        if authority.behavior == Behavior::Honest {
            if let Some(probe) = self.probe.borrow_mut().as_mut() {
                probe.cross_shard(authority, &update);
            }
        }
        if let Err(e) = authority.cross_shard_commit(shard, update.certificate) {
            log::warn!("authority {index}: cross-shard commit failed: {e}");
        }
        let hash = shard_hash(index, &authority.shards[shard as usize], &recipient);
        let now = self.now();
        self.recorder.borrow_mut().event(
            now,
            Actor::Shard {
                authority: index,
                shard,
            },
            "cross_shard",
            hash,
        );
        self.net.borrow_mut().dirty = true;
    }

    fn feed(&self, index: usize, order: &SignedSyncOrder) {
        let mut authorities = self.authorities.borrow_mut();
        let authority = &mut authorities[index];
        if !authority.is_live() {
            return;
        }
        if authority.behavior == Behavior::Honest {
            if let Some(probe) = self.probe.borrow_mut().as_mut() {
                probe.feed(authority, order);
            }
        }
        authority.deliver_sync(order);
        let shard = authority.shard_of(&order.order.recipient);
        let hash = shard_hash(index, &authority.shards[shard as usize], &order.order.recipient);
        let now = self.now();
        self.recorder.borrow_mut().event(
            now,
            Actor::Shard {
                authority: index,
                shard,
            },
            "feed",
            hash,
        );
        self.net.borrow_mut().dirty = true;
    }

    fn maybe_checkpoint(&self) {
        let (quiescent, due) = {
            let net = self.net.borrow();
            let current = self.recorder.borrow().current();
            let quiescent = net.in_flight == 0;
            let due = (quiescent && net.dirty)
                || current >= net.last_checkpoint + self.config.checkpoint_every;
            (quiescent, due)
        };
        if due {
            self.checkpoint(quiescent);
        }
    }

    fn checkpoint(&self, quiescent: bool) {
        let authorities = self.authorities.borrow();
        let mut recorder = self.recorder.borrow_mut();
        for a in authorities.iter() {
            for shard in &a.shards {
                recorder.update_view(a.index, shard);
            }
        }
        let event = recorder.current();
        let views = authorities
            .iter()
            .map(|a| AuthorityView {
                authority: a.index,
                honest: a.behavior.is_honest(),
                live: a.is_live(),
                last_transaction: a.shards.iter().map(|s| s.last_transaction()).collect(),
                accounts: recorder.views[a.index].clone(),
            })
            .collect();
        recorder.checkpoints.push(Checkpoint {
            event,
            quiescent,
            authorities: views,
        });
        let mut net = self.net.borrow_mut();
        net.dirty = false;
        net.last_checkpoint = event;
    }
}

/// Client-side access to one simulated authority.
struct SimEndpoint {
    core: Rc<SimCore>,
    authority: usize,
}

fn unexpected<T>() -> Result<T> {
    Err(Error::MalformedMessage("unexpected response type".into()))
}

impl AuthorityClient for SimEndpoint {
    fn handle_transfer_order(
        &self,
        order: TransferOrder,
    ) -> LocalBoxFuture<'static, Result<SignedTransferOrder>> {
        let f = self.core.request(self.authority, Request::Transfer(order));
        Box::pin(async move {
            match f.await? {
                Response::Vote(v) => Ok(v),
                _ => unexpected(),
            }
        })
    }

    fn handle_confirmation_order(
        &self,
        certificate: CertifiedTransfer,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        let f = self.core.request(self.authority, Request::Confirm(certificate));
        Box::pin(async move {
            match f.await? {
                Response::Info(i) => Ok(i),
                _ => unexpected(),
            }
        })
    }

    fn handle_account_info_query(
        &self,
        query: AccountInfoQuery,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        let f = self.core.request(self.authority, Request::Query(query));
        Box::pin(async move {
            match f.await? {
                Response::Info(i) => Ok(i),
                _ => unexpected(),
            }
        })
    }

    fn handle_primary_sync_order(
        &self,
        route: Address,
        order: SignedSyncOrder,
    ) -> LocalBoxFuture<'static, Result<()>> {
        let f = self.core.request(self.authority, Request::Sync(route, order));
        Box::pin(async move {
            match f.await? {
                Response::Done => Ok(()),
                _ => unexpected(),
            }
        })
    }
}

struct SimTimer(Rc<SimCore>);

impl Timer for SimTimer {
    fn sleep(&self, duration: Duration) -> LocalBoxFuture<'static, ()> {
        let rx = self.0.sleep(duration);
        Box::pin(async move {
            let _ = rx.await;
        })
    }
}

/// Cloneable access to the simulation from inside tasks.
#[derive(Clone)]
pub struct SimHandle {
    core: Rc<SimCore>,
    user_keys: Rc<Vec<KeyPair>>,
    rogue_key: KeyPair,
}

impl SimHandle {
    pub fn config(&self) -> &SimConfig {
        &self.core.config
    }

    pub fn committee(&self) -> &Committee {
        &self.core.committee
    }

    pub fn now_us(&self) -> u64 {
        self.core.now()
    }

    pub async fn sleep(&self, duration: Duration) {
        let _ = self.core.sleep(duration).await;
    }

    pub fn user_key(&self, user: usize) -> &KeyPair {
        &self.user_keys[user]
    }

    pub fn rogue_key(&self) -> &KeyPair {
        &self.rogue_key
    }

    pub fn client_config(&self) -> ClientConfig {
        let c = &self.core.config.client;
        ClientConfig {
            retry_interval: Duration::from_micros(c.retry_interval_us),
            max_attempts: c.max_attempts,
            wait_mode: if c.wait_for_all {
                WaitMode::All
            } else {
                WaitMode::FirstQuorum
            },
        }
    }

    pub fn driver(&self, config: ClientConfig) -> CommitteeDriver {
        let authorities = self
            .core
            .committee
            .authorities()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let endpoint = SimEndpoint {
                    core: self.core.clone(),
                    authority: i,
                };
                (*name, Rc::new(endpoint) as Rc<dyn AuthorityClient>)
            })
            .collect();
        CommitteeDriver::new(
            self.core.committee.clone(),
            authorities,
            Rc::new(SimTimer(self.core.clone())),
            config,
        )
    }

    pub fn client(&self, user: usize) -> AccountClient {
        AccountClient::new(self.user_keys[user].clone(), self.driver(self.client_config()))
    }

    /// Executes a funding transaction and sends the resulting order down
    /// the feed of every authority.
    pub fn fund(&self, recipient: Address, amount: u64) -> SignedSyncOrder {
        let (signed, total) = {
            let mut primary = self.core.primary.borrow_mut();
            let signed = primary
                .handle_funding_transaction(FundingTransaction {
                    recipient,
                    amount: Amount(amount),
                })
                .expect("funding within range");
            (signed, primary.total_balance().0)
        };
        let now = self.now_us();
        {
            let mut r = self.core.recorder.borrow_mut();
            let event = r.event(now, Actor::Primary, "fund", signed.order.transaction_index);
            r.ledger.push(LedgerEntry::Funding {
                event,
                index: signed.order.transaction_index,
                recipient,
                amount,
            });
            r.ledger.push(LedgerEntry::PrimaryBalance {
                event,
                total_balance: total,
            });
        }
        self.replay_feed_order(&signed, 0..self.core.committee.size());
        signed
    }

    fn replay_feed_order(&self, signed: &SignedSyncOrder, to: std::ops::Range<usize>) {
        let mut net = self.core.net.borrow_mut();
        let model = &self.core.config.network;
        for authority in to {
            let d = net.delay(model.min_delay_us, model.max_delay_us);
            net.push(
                d,
                Event::Feed {
                    authority,
                    order: *signed,
                },
            );
        }
    }

    /// Resends the whole Primary log to one authority, as it would read it
    /// on recovery.
    pub fn replay_feed(&self, authority: usize) {
        let orders = self.core.primary.borrow().sync_orders_after(0).to_vec();
        for s in &orders {
            self.replay_feed_order(s, authority..authority + 1);
        }
    }

    /// Submits a redemption to the Primary and records the outcome.
    pub fn redeem(&self, actor: Actor, certificate: &CertifiedTransfer) -> Result<()> {
        let (result, total) = {
            let mut primary = self.core.primary.borrow_mut();
            let result = primary.handle_redeem_transaction(&RedeemTransaction {
                certificate: certificate.clone(),
            });
            (result, primary.total_balance().0)
        };
        let now = self.now_us();
        let mut r = self.core.recorder.borrow_mut();
        let event = r.event(now, actor, "redeem", u64::from(result.is_ok()));
        let order = r.intern(&certificate.order);
        r.ledger.push(LedgerEntry::Redemption {
            event,
            order,
            accepted: result.is_ok(),
            error: result.clone().err(),
        });
        r.ledger.push(LedgerEntry::PrimaryBalance {
            event,
            total_balance: total,
        });
        result
    }

    pub fn record_outcome(&self, actor: Actor, kind: OpKind, result: OpResult) {
        let mut r = self.core.recorder.borrow_mut();
        let event = r.current();
        r.outcomes.push(OpOutcome {
            event,
            actor,
            kind,
            result,
        });
    }

    /// Changes an authority's behaviour mid-run, e.g. to take it offline.
    pub fn set_behavior(&self, authority: usize, behavior: Behavior) {
        self.core.authorities.borrow_mut()[authority].behavior = behavior;
    }

    pub fn authority(&self, index: usize) -> Ref<'_, SimAuthority> {
        Ref::map(self.core.authorities.borrow(), |a| &a[index])
    }

    pub fn primary(&self) -> Ref<'_, PrimaryState> {
        self.core.primary.borrow()
    }
}

/// A simulation: the executor plus the scheduler.
pub struct Sim {
    handle: SimHandle,
    pool: LocalPool,
    spawner: LocalSpawner,
}

impl Sim {
    pub fn new(config: SimConfig) -> std::result::Result<Self, ConfigError> {
        Self::with_probe(config, None)
    }

    pub(crate) fn with_probe(
        config: SimConfig,
        probe: Option<Probe>,
    ) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let authority_keys: Vec<KeyPair> = (0..config.committee_size)
            .map(|_| KeyPair::generate(&mut rng))
            .collect();
        let committee = Committee::new(authority_keys.iter().map(|k| k.public()).collect())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let primary = PrimaryState::new(committee.clone(), KeyPair::generate(&mut rng));
        let assignment =
            ShardAssignment::new(config.shards).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let authorities: Vec<SimAuthority> = authority_keys
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                SimAuthority::new(
                    i,
                    config.behavior(i),
                    k,
                    &committee,
                    assignment,
                    primary.public_key(),
                )
            })
            .collect();
        let user_keys = (0..config.workload.users)
            .map(|_| KeyPair::generate(&mut rng))
            .collect();
        let rogue_key = KeyPair::generate(&mut rng);
        let net = Net {
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
            in_flight: 0,
            next_id: 0,
            pending: BTreeMap::new(),
            timers: BTreeMap::new(),
            stats: SimStats::default(),
            dirty: false,
            last_checkpoint: 0,
        };
        let recorder = Recorder {
            record_events: config.record_events,
            next_index: 0,
            events: Vec::new(),
            orders: Vec::new(),
            order_ids: HashMap::new(),
            ledger: Vec::new(),
            checkpoints: Vec::new(),
            outcomes: Vec::new(),
            views: vec![BTreeMap::new(); authorities.len()],
        };
        let core = Rc::new(SimCore {
            config,
            committee,
            authorities: RefCell::new(authorities),
            primary: RefCell::new(primary),
            net: RefCell::new(net),
            recorder: RefCell::new(recorder),
            probe: RefCell::new(probe),
        });
        let pool = LocalPool::new();
        let spawner = pool.spawner();
        Ok(Sim {
            handle: SimHandle {
                core,
                user_keys: Rc::new(user_keys),
                rogue_key,
            },
            pool,
            spawner,
        })
    }

    pub fn handle(&self) -> SimHandle {
        self.handle.clone()
    }

    pub fn spawn(&self, task: impl Future<Output = ()> + 'static) {
        self.spawner.spawn_local(task).expect("executor is running");
    }

    /// Runs the scheduler until `task` completes.
    pub fn block_on<T: 'static>(&mut self, task: impl Future<Output = T> + 'static) -> T {
        let (tx, mut rx) = oneshot::channel();
        self.spawn(async move {
            let _ = tx.send(task.await);
        });
        loop {
            self.pool.run_until_stalled();
            if let Ok(Some(value)) = rx.try_recv() {
                return value;
            }
            assert!(self.handle.core.step(), "simulation stalled before the task finished");
        }
    }

    /// Runs until no event is left and every task is blocked or done.
    pub fn settle(&mut self) {
        loop {
            self.pool.run_until_stalled();
            if !self.handle.core.step() {
                break;
            }
        }
    }

    pub fn stats(&self) -> SimStats {
        let net = self.handle.core.net.borrow();
        SimStats {
            end_time_us: net.now,
            ..net.stats.clone()
        }
    }

    /// Settles, takes a final checkpoint and returns the trace.
    pub fn into_trace(mut self) -> Trace {
        self.settle();
        let core = &self.handle.core;
        core.checkpoint(true);
        let stats = self.stats();
        let mut r = core.recorder.borrow_mut();
        Trace {
            config: core.config.clone(),
            quorum: core.committee.quorum_threshold(),
            orders: std::mem::take(&mut r.orders),
            events: std::mem::take(&mut r.events),
            ledger: std::mem::take(&mut r.ledger),
            checkpoints: std::mem::take(&mut r.checkpoints),
            outcomes: std::mem::take(&mut r.outcomes),
            stats,
        }
    }

    pub(crate) fn take_probe(&self) -> Option<Probe> {
        self.handle.core.probe.borrow_mut().take()
    }
}
