// SPDX-License-Identifier: Apache-2.0

use quorumpay_core::protocol::{InterShardAck, InterShardEnvelope};
use quorumpay_net::channel::{ChannelKey, Inbox, Outbox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

const SHARDS: u32 = 3;
const MESSAGES: usize = 10;

#[derive(Clone)]
enum Packet {
    Envelope(usize, InterShardEnvelope),
    Ack(usize, InterShardAck),
}

impl Packet {
    fn key(&self) -> u64 {
        match self {
            Packet::Envelope(l, e) => (*l as u64) << 32 | e.sequence,
            Packet::Ack(l, a) => 1 << 40 | (*l as u64) << 32 | a.sequence,
        }
    }
}

/// Three shards exchanging messages over an adversarial network with
/// bounded drops, duplications and retransmission rounds.
#[derive(Clone)]
struct World {
    outboxes: Vec<Outbox>,
    inboxes: Vec<Inbox>,
    network: Vec<Packet>,
    sent: usize,
    delivered: Vec<Vec<u8>>,
    drops: u8,
    duplicates: u8,
    retransmits: u8,
}

struct Budget {
    drops: u8,
    duplicates: u8,
    retransmits: u8,
    in_flight: usize,
}

fn links() -> Vec<(u32, u32)> {
    (0..SHARDS)
        .flat_map(|s| (0..SHARDS).filter(move |d| *d != s).map(move |d| (s, d)))
        .collect()
}

/// Message `k` travels on link `k % links` and carries payload `k`.
fn link_of(k: usize) -> usize {
    k % links().len()
}

impl World {
    fn new() -> Self {
        let key = ChannelKey::new([3; 32]);
        World {
            outboxes: links()
                .iter()
                .map(|&(s, d)| Outbox::new(key.clone(), s, d))
                .collect(),
            inboxes: links()
                .iter()
                .map(|&(s, d)| Inbox::new(key.clone(), s, d))
                .collect(),
            network: Vec::new(),
            sent: 0,
            delivered: vec![Vec::new(); links().len()],
            drops: 0,
            duplicates: 0,
            retransmits: 0,
        }
    }

    fn key(&self) -> Vec<u64> {
        let mut k = vec![
            self.sent as u64,
            u64::from(self.drops),
            u64::from(self.duplicates),
            u64::from(self.retransmits),
        ];
        for (o, i) in self.outboxes.iter().zip(&self.inboxes) {
            k.push(u64::MAX);
            k.extend(o.unacknowledged().map(|e| e.sequence));
            k.push(u64::MAX - 1);
            k.push(i.delivered());
            k.extend(i.buffered());
        }
        let mut net: Vec<u64> = self.network.iter().map(Packet::key).collect();
        net.sort_unstable();
        k.push(u64::MAX - 2);
        k.extend(net);
        k
    }

    fn send_next(&mut self) {
        let link = link_of(self.sent);
        let e = self.outboxes[link].send(vec![self.sent as u8]);
        self.network.push(Packet::Envelope(link, e));
        self.sent += 1;
    }

    fn deliver(&mut self, i: usize) {
        match self.network.remove(i) {
            Packet::Envelope(link, e) => {
                let (payloads, ack) = self.inboxes[link].receive(&e);
                self.delivered[link].extend(payloads.into_iter().map(|p| p[0]));
                if let Some(a) = ack {
                    self.network.push(Packet::Ack(link, a));
                }
            }
            Packet::Ack(link, a) => {
                self.outboxes[link].acknowledge(&a);
            }
        }
    }

    fn retransmit(&mut self, link: usize) {
        let again: Vec<_> = self.outboxes[link].unacknowledged().cloned().collect();
        self.network
            .extend(again.into_iter().map(|e| Packet::Envelope(link, e)));
    }

    /// Per link, what was delivered is exactly the in-order prefix of what
    /// was sent on it.
    fn check_safety(&self) {
        for (link, got) in self.delivered.iter().enumerate() {
            let expected: Vec<u8> = (0..self.sent)
                .filter(|k| link_of(*k) == link)
                .map(|k| k as u8)
                .take(got.len())
                .collect();
            assert_eq!(got, &expected, "link {link} delivered out of order or twice");
        }
    }

    /// With loss stopped, retransmission completes every link.
    fn check_liveness(&self) {
        let mut w = self.clone();
        for _ in 0..1000 {
            while w.sent < MESSAGES {
                w.send_next();
            }
            while !w.network.is_empty() {
                w.deliver(0);
            }
            if w.outboxes.iter().all(Outbox::is_idle) {
                let total: usize = w.delivered.iter().map(Vec::len).sum();
                assert_eq!(total, MESSAGES);
                return;
            }
            for link in 0..w.outboxes.len() {
                w.retransmit(link);
            }
        }
        panic!("channel did not complete after loss stopped");
    }
}

fn explore(budget: Budget) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut stack = vec![World::new()];
    while let Some(w) = stack.pop() {
        if !seen.insert(w.key()) {
            continue;
        }
        w.check_safety();
        w.check_liveness();
        if w.sent < MESSAGES && w.network.len() < budget.in_flight {
            let mut next = w.clone();
            next.send_next();
            stack.push(next);
        }
        for i in 0..w.network.len() {
            let mut next = w.clone();
            next.deliver(i);
            stack.push(next);
            if w.drops < budget.drops {
                let mut next = w.clone();
                next.network.remove(i);
                next.drops += 1;
                stack.push(next);
            }
            if w.duplicates < budget.duplicates && w.network.len() < budget.in_flight {
                let mut next = w.clone();
                next.network.push(next.network[i].clone());
                next.duplicates += 1;
                stack.push(next);
            }
        }
        if w.retransmits < budget.retransmits {
            for link in 0..w.outboxes.len() {
                if !w.outboxes[link].is_idle() && w.network.len() < budget.in_flight {
                    let mut next = w.clone();
                    next.retransmit(link);
                    next.retransmits += 1;
                    stack.push(next);
                }
            }
        }
    }
    seen.len()
}

#[test]
fn exactly_once_under_every_bounded_interleaving() {
    let states = explore(Budget {
        drops: 1,
        duplicates: 1,
        retransmits: 1,
        in_flight: 3,
    });
    assert!(states > 100_000, "explored only {states} states");
}

#[test]
fn thousand_commits_over_lossy_link() {
    let key = ChannelKey::new([9; 32]);
    let mut out = Outbox::new(key.clone(), 0, 1);
    let mut inb = Inbox::new(key, 0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut wire: Vec<InterShardEnvelope> = Vec::new();
    let mut acks: Vec<InterShardAck> = Vec::new();
    let mut delivered: Vec<u32> = Vec::new();
    let mut sent = 0u32;
    let lossy = |rng: &mut ChaCha8Rng| rng.gen_bool(0.2);
    for _round in 0..100_000 {
        if sent < 1000 {
            for _ in 0..rng.gen_range(1..8) {
                if sent < 1000 {
                    wire.push(out.send(sent.to_le_bytes().to_vec()));
                    sent += 1;
                }
            }
        }
        // Deliver a random subset in random order, with loss and duplication.
        let mut next_wire = Vec::new();
        while !wire.is_empty() {
            let e = wire.swap_remove(rng.gen_range(0..wire.len()));
            if rng.gen_bool(0.05) {
                next_wire.push(e.clone());
            }
            if lossy(&mut rng) {
                continue;
            }
            let (payloads, ack) = inb.receive(&e);
            delivered.extend(payloads.iter().map(|p| u32::from_le_bytes(p[..4].try_into().unwrap())));
            acks.extend(ack);
        }
        wire = next_wire;
        for a in acks.drain(..) {
            if !lossy(&mut rng) {
                out.acknowledge(&a);
            }
        }
        if sent == 1000 && out.is_idle() {
            break;
        }
        wire.extend(out.unacknowledged().cloned());
    }
    assert!(out.is_idle());
    assert_eq!(delivered, (0..1000).collect::<Vec<_>>());
    assert_eq!(inb.rejected, 0);
}
