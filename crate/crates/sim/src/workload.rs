// SPDX-License-Identifier: Apache-2.0

//! Users as tasks. A dispatcher issues operations at random gaps; each user
//! runs its own commands in order through an unmodified [`AccountClient`].

use crate::config::{ScriptedOp, SimConfig};
use crate::engine::{Sim, SimHandle};
use crate::trace::{Actor, OpKind, OpResult, Trace};
use futures::channel::mpsc;
use futures::future::join_all;
use futures::StreamExt;
use quorumpay_core::client::{AccountClient, ClientConfig, WaitMode};
use quorumpay_core::messages::{
    aggregate_certificate, CertifiedTransfer, RecipientAddress, SignedSyncOrder, TransferOrder,
};
use quorumpay_core::{Address, Amount, Error, Result, SequenceNumber, UserData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::time::Duration;

enum Command {
    Funding(SignedSyncOrder),
    Certificate(CertifiedTransfer),
    Transfer { to: usize, amount: u64 },
    Redeem { amount: u64 },
    ReplayRedeem,
    Equivocate { amount: u64 },
    Query,
    Relay,
}

type Outboxes = Rc<Vec<mpsc::UnboundedSender<Command>>>;

/// Runs the configured workload to completion and returns its trace.
pub fn run_simulation(config: &SimConfig) -> Trace {
    let sim = Sim::new(config.clone()).expect("valid config");
    spawn_workload(&sim);
    sim.into_trace()
}

pub(crate) fn spawn_workload(sim: &Sim) {
    let h = sim.handle();
    let w = h.config().workload.clone();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..w.users).map(|_| mpsc::unbounded()).unzip();
    let outboxes: Outboxes = Rc::new(senders);
    let directory: Rc<BTreeMap<Address, usize>> =
        Rc::new((0..w.users).map(|u| (h.user_key(u).address(), u)).collect());
    for (user, rx) in receivers.into_iter().enumerate() {
        sim.spawn(user_task(h.clone(), user, rx, outboxes.clone(), directory.clone()));
    }
    let rogue = (w.equivocate_weight > 0).then(|| {
        let (tx, rx) = mpsc::unbounded();
        sim.spawn(rogue_task(h.clone(), rx, outboxes.clone()));
        tx
    });
    sim.spawn(dispatcher(h, outboxes, rogue));
}

async fn dispatcher(h: SimHandle, users: Outboxes, rogue: Option<mpsc::UnboundedSender<Command>>) {
    let w = h.config().workload.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(h.config().seed ^ 0x005e_ed0f_d15a_7c4e);
    let send = |user: usize, c: Command| {
        let _ = users[user].unbounded_send(c);
    };
    let fund = |user: usize, amount: u64| {
        let signed = h.fund(h.user_key(user).address(), amount);
        h.record_outcome(Actor::Primary, OpKind::Fund, OpResult::Done);
        send(user, Command::Funding(signed));
    };
    for user in 0..w.users {
        fund(user, w.initial_funding);
    }
    if let Some(rogue) = &rogue {
        let signed = h.fund(h.rogue_key().address(), w.initial_funding);
        let _ = rogue.unbounded_send(Command::Funding(signed));
    }
    let gap = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        Duration::from_micros((-(1.0 - u).ln() * w.mean_gap_us as f64) as u64)
    };
    if !w.script.is_empty() {
        for op in &w.script {
            h.sleep(gap(&mut rng)).await;
            match *op {
                ScriptedOp::Fund { user, amount } => fund(user, amount),
                ScriptedOp::Transfer { from, to, amount } => {
                    send(from, Command::Transfer { to, amount })
                }
                ScriptedOp::Redeem { from, amount } => send(from, Command::Redeem { amount }),
            }
        }
        return;
    }
    let weights = [
        w.fund_weight,
        w.transfer_weight,
        w.redeem_weight,
        w.replay_redeem_weight,
        w.equivocate_weight,
        w.query_weight,
        w.relay_weight,
    ];
    let total: u32 = weights.iter().sum();
    if total == 0 {
        return;
    }
    for _ in 0..w.operations {
        h.sleep(gap(&mut rng)).await;
        let mut pick = rng.gen_range(0..total);
        let kind = weights
            .iter()
            .position(|&wt| {
                if pick < wt {
                    true
                } else {
                    pick -= wt;
                    false
                }
            })
            .expect("pick below total");
        let user = rng.gen_range(0..w.users);
        let amount = rng.gen_range(1..=w.max_amount.max(1));
        match kind {
            0 => fund(user, amount),
            1 => {
                let to = (user + rng.gen_range(1..w.users)) % w.users;
                send(user, Command::Transfer { to, amount });
            }
            2 => send(user, Command::Redeem { amount }),
            3 => send(user, Command::ReplayRedeem),
            5 => send(user, Command::Query),
            6 => send(user, Command::Relay),
            _ => {
                if let Some(rogue) = &rogue {
                    let _ = rogue.unbounded_send(Command::Equivocate { amount });
                }
            }
        }
    }
}

/// Finishes an order left pending by a failed attempt, then certifies and
/// confirms a new one. `None` when there was nothing to spend.
async fn pay(
    h: &SimHandle,
    client: &mut AccountClient,
    recipient: RecipientAddress,
    amount: u64,
    users: &Outboxes,
    directory: &BTreeMap<Address, usize>,
    actor: Actor,
) -> Result<Option<CertifiedTransfer>> {
    if let Some(earlier) = client.retry_pending().await? {
        client.confirm(&earlier).await?;
        deliver(h, &earlier, users, directory, actor);
    }
    let amount = amount.min(client.spendable_balance().0);
    if amount == 0 {
        return Ok(None);
    }
    client
        .initiate_transfer(recipient, Amount(amount), UserData::default())
        .await
        .map(Some)
}

/// Hands a certificate to its recipient, or redeems it at the Primary.
fn deliver(
    h: &SimHandle,
    certificate: &CertifiedTransfer,
    users: &Outboxes,
    directory: &BTreeMap<Address, usize>,
    actor: Actor,
) {
    match certificate.order.recipient {
        RecipientAddress::Offchain(to) => {
            if let Some(&u) = directory.get(&to) {
                let _ = users[u].unbounded_send(Command::Certificate(certificate.clone()));
            }
        }
        RecipientAddress::Primary(_) => {
            let _ = h.redeem(actor, certificate);
        }
    }
}

fn result_of(r: Result<Option<CertifiedTransfer>>) -> OpResult {
    match r {
        Ok(Some(_)) => OpResult::Done,
        Ok(None) => OpResult::Skipped,
        Err(e) => OpResult::Failed(e),
    }
}

async fn user_task(
    h: SimHandle,
    user: usize,
    mut commands: mpsc::UnboundedReceiver<Command>,
    users: Outboxes,
    directory: Rc<BTreeMap<Address, usize>>,
) {
    let actor = Actor::User(user);
    let mut client = h.client(user);
    let mut redeemed: Option<CertifiedTransfer> = None;
    while let Some(command) = commands.next().await {
        match command {
            Command::Funding(s) => {
                if let Err(e) = client.receive_from_primary(&[s]) {
                    log::warn!("u{user}: funding rejected: {e}");
                }
            }
            Command::Certificate(c) => {
                if let Err(e) = client.receive_certificate(c) {
                    log::warn!("u{user}: certificate rejected: {e}");
                }
            }
            Command::Transfer { to, amount } => {
                let recipient = RecipientAddress::Offchain(h.user_key(to).address());
                let r = pay(&h, &mut client, recipient, amount, &users, &directory, actor).await;
                if let Ok(Some(c)) = &r {
                    deliver(&h, c, &users, &directory, actor);
                }
                h.record_outcome(actor, OpKind::Transfer, result_of(r));
            }
            Command::Redeem { amount } => {
                let recipient = RecipientAddress::Primary(client.address());
                let r = pay(&h, &mut client, recipient, amount, &users, &directory, actor).await;
                let r = match r {
                    Ok(Some(c)) => h.redeem(actor, &c).map(|()| {
                        redeemed = Some(c.clone());
                        Some(c)
                    }),
                    other => other,
                };
                h.record_outcome(actor, OpKind::Redeem, result_of(r));
            }
            Command::ReplayRedeem => {
                let result = match &redeemed {
                    None => OpResult::Skipped,
                    Some(c) => match h.redeem(actor, c) {
                        Err(Error::AlreadyRedeemed) => OpResult::Done,
                        Ok(()) => OpResult::Failed(Error::CertificateMismatch),
                        Err(e) => OpResult::Failed(e),
                    },
                };
                h.record_outcome(actor, OpKind::ReplayRedeem, result);
            }
            Command::Query => {
                let result = match client.query_balance().await {
                    Ok(_) => OpResult::Done,
                    Err(e) => OpResult::Failed(e),
                };
                h.record_outcome(actor, OpKind::Query, result);
            }
            Command::Relay => {
                let own: Vec<SignedSyncOrder> = client.state().funding.values().copied().collect();
                let driver = client.driver();
                for i in 0..h.committee().size() {
                    for s in &own {
                        // Gaps and duplicates are expected answers here.
                        let _ = driver
                            .authority(i)
                            .handle_primary_sync_order(client.address(), *s)
                            .await;
                    }
                }
                h.record_outcome(actor, OpKind::Relay, OpResult::Done);
            }
            Command::Equivocate { .. } => unreachable!("only the rogue equivocates"),
        }
    }
}

/// Signs two orders per sequence number and shows each to part of the
/// committee. Stops after the first attempt in which neither certifies.
async fn rogue_task(h: SimHandle, mut commands: mpsc::UnboundedReceiver<Command>, users: Outboxes) {
    let key = h.rogue_key().clone();
    let address = key.address();
    // Confirm everywhere so honest authorities never lag on this account.
    let driver = h.driver(ClientConfig {
        wait_mode: WaitMode::All,
        ..h.client_config()
    });
    let n = h.committee().size();
    let quorum = h.committee().quorum_threshold();
    let mut rng = ChaCha8Rng::seed_from_u64(h.config().seed ^ 0x0dd_ba11);
    let mut funding: Vec<SignedSyncOrder> = Vec::new();
    let (mut balance, mut sequence, mut locked) = (0u64, 0u64, false);
    while let Some(command) = commands.next().await {
        let amount = match command {
            Command::Funding(s) => {
                balance += s.order.amount.0;
                funding.push(s);
                driver.observe_sync_orders(&funding);
                continue;
            }
            Command::Equivocate { amount } => amount,
            _ => continue,
        };
        let cap = balance.min(amount);
        if locked || cap == 0 {
            h.record_outcome(Actor::Rogue, OpKind::Equivocate, OpResult::Skipped);
            continue;
        }
        // Make sure every authority has seen the funding first.
        for i in 0..n {
            for s in &funding {
                let _ = driver.authority(i).handle_primary_sync_order(address, *s).await;
            }
        }
        let a = rng.gen_range(1..=cap);
        let b = rng.gen_range(1..=cap);
        let p = rng.gen_range(0..users.len());
        // Distinct recipients keep the two orders distinct.
        let q = (p + rng.gen_range(1..users.len())) % users.len();
        let order = |to: usize, amt: u64| {
            TransferOrder::new(
                &key,
                address,
                RecipientAddress::Offchain(h.user_key(to).address()),
                Amount(amt),
                SequenceNumber(sequence),
                UserData::default(),
            )
            .expect("valid order")
        };
        let orders = [order(p, a), order(q, b)];
        let split: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let votes = join_all((0..n).map(|i| {
            let (which, o) = (split[i], orders[split[i]].clone());
            let authority = driver.authority(i).clone();
            async move { (which, authority.handle_transfer_order(o).await) }
        }))
        .await;
        let mut certified = None;
        for (which, order) in orders.iter().enumerate() {
            let mine: Vec<_> = votes
                .iter()
                .filter(|(w, _)| *w == which)
                .filter_map(|(_, v)| v.as_ref().ok().cloned())
                .collect();
            if mine.len() >= quorum {
                certified = aggregate_certificate(h.committee(), order, &mine).ok();
                break;
            }
        }
        let result = match certified {
            Some(c) => {
                let to = if c.order == orders[0] { p } else { q };
                match driver.confirm_certificate(&c).await {
                    Ok(_) => {
                        balance -= c.amount().0;
                        sequence += 1;
                        let _ = users[to].unbounded_send(Command::Certificate(c));
                        OpResult::Done
                    }
                    Err(e) => OpResult::Failed(e),
                }
            }
            None => {
                locked = true;
                OpResult::Locked
            }
        };
        h.record_outcome(Actor::Rogue, OpKind::Equivocate, result);
    }
}
