// SPDX-License-Identifier: Apache-2.0

//! Scripted runs for behaviour the random workload reaches only by luck.

use crate::config::{Behavior, ByzantineStrategy, SimConfig};
use crate::engine::{Sim, SimHandle};
use crate::trace::{Actor, OpKind, OpResult, Trace};
use futures::future::join_all;
use quorumpay_core::client::{AccountClient, ClientConfig, WaitMode};
use quorumpay_core::messages::{
    aggregate_certificate, CertifiedTransfer, RecipientAddress, TransferOrder,
};
use quorumpay_core::{Amount, Result, SequenceNumber, UserData};
use std::collections::BTreeSet;

async fn pay(client: &mut AccountClient, h: &SimHandle, to: usize, amount: u64) -> Result<CertifiedTransfer> {
    let recipient = RecipientAddress::Offchain(h.user_key(to).address());
    client
        .initiate_transfer(recipient, Amount(amount), UserData::default())
        .await
}

/// Funds users and hands each its funding order.
fn funded_clients(h: &SimHandle, users: usize, amount: u64) -> Vec<AccountClient> {
    (0..users)
        .map(|u| {
            let signed = h.fund(h.user_key(u).address(), amount);
            let mut client = h.client(u);
            client.receive_from_primary(&[signed]).expect("own funding");
            client
        })
        .collect()
}

#[derive(Debug)]
pub struct EquivocationOutcome {
    /// `Done` if one order certified, `Locked` if neither did.
    pub result: OpResult,
    /// Which order certified.
    pub certified: Option<usize>,
    /// A later order from the same account certified.
    pub account_usable: bool,
    pub trace: Trace,
}

/// A client signs two orders for sequence 0; authority `i` is shown order
/// `first[i]` first and the other one after. The client then tries an
/// order at sequence 1.
pub fn equivocation_scenario(config: &SimConfig, first: &[usize]) -> EquivocationOutcome {
    assert_eq!(first.len(), config.committee_size, "one entry per authority");
    let mut sim = Sim::new(config.clone()).expect("valid config");
    let h = sim.handle();
    let first = first.to_vec();
    let (result, certified, account_usable) = sim.block_on(async move {
        let key = h.rogue_key().clone();
        let address = key.address();
        let signed = h.fund(address, 100);
        let driver = h.driver(ClientConfig {
            wait_mode: WaitMode::All,
            ..h.client_config()
        });
        driver.observe_sync_orders(&[signed]);
        let n = h.committee().size();
        for i in 0..n {
            let _ = driver.authority(i).handle_primary_sync_order(address, signed).await;
        }
        let order = |to: usize, sequence: u64| {
            TransferOrder::new(
                &key,
                address,
                RecipientAddress::Offchain(h.user_key(to).address()),
                Amount(10),
                SequenceNumber(sequence),
                UserData::default(),
            )
            .expect("valid order")
        };
        let orders = [order(0, 0), order(1, 0)];
        let shown = join_all((0..n).map(|i| {
            let authority = driver.authority(i).clone();
            let (a, b) = (orders[first[i]].clone(), orders[1 - first[i]].clone());
            let which = first[i];
            async move {
                let x = authority.handle_transfer_order(a).await;
                let y = authority.handle_transfer_order(b).await;
                [(which, x), (1 - which, y)]
            }
        }))
        .await;
        let mut votes = [Vec::new(), Vec::new()];
        for (which, vote) in shown.into_iter().flatten() {
            if let Ok(v) = vote {
                votes[which].push(v);
            }
        }
        let quorum = h.committee().quorum_threshold();
        let certified = (0..2).find(|&w| votes[w].len() >= quorum);
        let result = match certified {
            Some(w) => {
                let c = aggregate_certificate(h.committee(), &orders[w], &votes[w]).expect("quorum");
                match driver.confirm_certificate(&c).await {
                    Ok(_) => OpResult::Done,
                    Err(e) => OpResult::Failed(e),
                }
            }
            None => OpResult::Locked,
        };
        h.record_outcome(Actor::Rogue, OpKind::Equivocate, result.clone());
        let next = order(2, u64::from(certified.is_some()));
        let account_usable = driver.certify(&next, &[]).await.is_ok();
        (result, certified, account_usable)
    });
    EquivocationOutcome {
        result,
        certified,
        account_usable,
        trace: sim.into_trace(),
    }
}

#[derive(Debug)]
pub struct RecoveryOutcome {
    /// Transfers certified while the authority was away.
    pub certified_while_away: usize,
    /// The returning authority's accounts differed from the others'.
    pub lagging_before: bool,
    /// After repair, every shard of every authority has the same accounts.
    pub parity: bool,
    /// A new transfer certified and the recovered authority settled it.
    pub fresh_transfer: bool,
    pub trace: Trace,
}

fn shard_hashes(h: &SimHandle, authority: usize) -> Vec<[u8; 32]> {
    h.authority(authority)
        .shards
        .iter()
        .map(|s| s.accounts_hash())
        .collect()
}

fn in_parity(h: &SimHandle) -> bool {
    let reference = shard_hashes(h, 0);
    (1..h.committee().size()).all(|i| shard_hashes(h, i) == reference)
}

/// Authority `away` misses every message for `transfers` transfers, then
/// rejoins, replays the Primary log and is repaired by the clients.
pub fn recovery_scenario(seed: u64, transfers: usize) -> RecoveryOutcome {
    let mut config = SimConfig {
        seed,
        ..SimConfig::default()
    };
    config.workload.users = 4;
    config.client.wait_for_all = true;
    let away = config.committee_size - 1;
    let mut sim = Sim::new(config).expect("valid config");
    let h = sim.handle();
    h.set_behavior(away, Behavior::Crashed);
    let (h2, users) = (h.clone(), 4);
    let mut clients = sim.block_on(async move {
        let h = h2;
        let mut clients = funded_clients(&h, users, 1_000);
        for t in 0..transfers {
            let from = t % users;
            let certificate = pay(&mut clients[from], &h, (from + 1) % users, 7).await;
            if let Ok(c) = certificate {
                clients[(from + 1) % users]
                    .receive_certificate(c)
                    .expect("valid certificate");
            }
        }
        clients
    });
    sim.settle();
    let certified_while_away = clients.iter().map(|c| c.state().sent.len()).sum();
    let lagging_before = shard_hashes(&h, away) != shard_hashes(&h, 0);

    h.set_behavior(away, Behavior::Honest);
    h.replay_feed(away);
    sim.settle();
    clients = sim.block_on(async move {
        for client in &clients {
            let target = client.state().next_sequence;
            if let Err(e) = client.driver().repair_authority(away, client.address(), target).await {
                log::warn!("repair failed: {e}");
            }
        }
        clients
    });
    sim.settle();
    let parity = in_parity(&h);

    let h2 = h.clone();
    let (fresh, clients) = sim.block_on(async move {
        let fresh = pay(&mut clients[0], &h2, 1, 3).await;
        (fresh, clients)
    });
    sim.settle();
    let sender = clients[0].address();
    let settled_by_away = {
        let a = h.authority(away);
        let shard = a.shard_of(&sender) as usize;
        a.shards[shard]
            .account(&sender)
            .is_some_and(|acc| acc.next_sequence == clients[0].state().next_sequence)
    };
    let fresh_transfer = fresh.is_ok() && settled_by_away && in_parity(&h);
    RecoveryOutcome {
        certified_while_away,
        lagging_before,
        parity,
        fresh_transfer,
        trace: sim.into_trace(),
    }
}

#[derive(Debug)]
pub struct ZeroSequenceOutcome {
    pub certified: usize,
    pub attempted: usize,
    /// Repairing the lying authority succeeded.
    pub repaired: bool,
    /// Replaying its whole history a second time left it unchanged.
    pub replay_is_noop: bool,
    pub trace: Trace,
}

/// One authority claims every account is fresh. Transfers still certify,
/// and the full replays it provokes change nothing.
pub fn zero_sequence_scenario(seed: u64, transfers: usize) -> ZeroSequenceOutcome {
    let liar = 1;
    let mut config = SimConfig {
        seed,
        faults: vec![Behavior::Honest, Behavior::Byzantine(ByzantineStrategy::ReportZeroSequence)],
        ..SimConfig::default()
    };
    config.workload.users = 2;
    let mut sim = Sim::new(config).expect("valid config");
    let h = sim.handle();
    let h2 = h.clone();
    let (certified, client) = sim.block_on(async move {
        let mut clients = funded_clients(&h2, 2, 10_000);
        let mut certified = 0;
        for _ in 0..transfers {
            if pay(&mut clients[0], &h2, 1, 5).await.is_ok() {
                certified += 1;
            }
        }
        (certified, clients.swap_remove(0))
    });
    sim.settle();
    let address = client.address();
    let target = client.state().next_sequence;
    let client = std::rc::Rc::new(client);
    let c = client.clone();
    let repaired = sim.block_on(async move { c.driver().repair_authority(liar, address, target).await.is_ok() });
    sim.settle();
    let before: BTreeSet<[u8; 32]> = h.authority(liar).shards.iter().map(|s| s.state_hash()).collect();
    let c = client.clone();
    let again = sim.block_on(async move { c.driver().repair_authority(liar, address, target).await.is_ok() });
    sim.settle();
    let after: BTreeSet<[u8; 32]> = h.authority(liar).shards.iter().map(|s| s.state_hash()).collect();
    ZeroSequenceOutcome {
        certified,
        attempted: transfers,
        repaired: repaired && again,
        replay_is_noop: before == after,
        trace: sim.into_trace(),
    }
}
