// SPDX-License-Identifier: Apache-2.0

//! Authenticated deliver-once channel between two shards of one authority.
//!
//! Sans-IO: the owner moves envelopes and acks over any lossy transport and
//! calls [`Outbox::unacknowledged`] on a timer to retransmit.

use hmac::{Hmac, Mac};
use quorumpay_core::base::ShardId;
use quorumpay_core::protocol::{InterShardAck, InterShardEnvelope};
use sha2::Sha256;
use std::collections::BTreeMap;

/// Envelopes buffered ahead of the next expected sequence number.
const REORDER_WINDOW: u64 = 4096;

/// Key shared by every shard of one authority.
#[derive(Clone)]
pub struct ChannelKey([u8; 32]);

impl ChannelKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        ChannelKey(bytes)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        Some(ChannelKey(bytes.try_into().ok()?))
    }

    fn mac(&self, domain: &[u8], source: ShardId, destination: ShardId, sequence: u64, payload: &[u8]) -> [u8; 32] {
        let mut mac = <Hmac<Sha256>>::new_from_slice(&self.0).expect("any key length");
        mac.update(domain);
        mac.update(&source.to_le_bytes());
        mac.update(&destination.to_le_bytes());
        mac.update(&sequence.to_le_bytes());
        mac.update(payload);
        mac.finalize().into_bytes().into()
    }

    fn envelope_mac(&self, e: &InterShardEnvelope) -> [u8; 32] {
        self.mac(b"envelope", e.source, e.destination, e.sequence, &e.payload)
    }

    fn ack_mac(&self, a: &InterShardAck) -> [u8; 32] {
        self.mac(b"ack", a.source, a.destination, a.sequence, &[])
    }
}

/// Constant-time tag comparison.
fn tags_equal(a: &[u8; 32], b: &[u8; 32]) -> bool {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Sending half for one (source, destination) pair.
#[derive(Clone)]
pub struct Outbox {
    key: ChannelKey,
    source: ShardId,
    destination: ShardId,
    next: u64,
    unacked: BTreeMap<u64, InterShardEnvelope>,
    pub rejected_acks: u64,
}

impl Outbox {
    pub fn new(key: ChannelKey, source: ShardId, destination: ShardId) -> Self {
        Outbox {
            key,
            source,
            destination,
            next: 1,
            unacked: BTreeMap::new(),
            rejected_acks: 0,
        }
    }

    pub fn destination(&self) -> ShardId {
        self.destination
    }

    pub fn send(&mut self, payload: Vec<u8>) -> InterShardEnvelope {
        let mut envelope = InterShardEnvelope {
            source: self.source,
            destination: self.destination,
            sequence: self.next,
            payload,
            mac: [0; 32],
        };
        envelope.mac = self.key.envelope_mac(&envelope);
        self.next += 1;
        self.unacked.insert(envelope.sequence, envelope.clone());
        envelope
    }

    /// Releases every envelope covered by a cumulative ack. Returns how many
    /// were released; forged acks release nothing.
    pub fn acknowledge(&mut self, ack: &InterShardAck) -> usize {
        if ack.source != self.source
            || ack.destination != self.destination
            || !tags_equal(&ack.mac, &self.key.ack_mac(ack))
        {
            self.rejected_acks += 1;
            return 0;
        }
        let before = self.unacked.len();
        self.unacked = self.unacked.split_off(&(ack.sequence + 1));
        before - self.unacked.len()
    }

    pub fn unacknowledged(&self) -> impl Iterator<Item = &InterShardEnvelope> {
        self.unacked.values()
    }

    pub fn is_idle(&self) -> bool {
        self.unacked.is_empty()
    }
}

/// Receiving half for one (source, destination) pair.
#[derive(Clone)]
pub struct Inbox {
    key: ChannelKey,
    source: ShardId,
    destination: ShardId,
    delivered: u64,
    buffer: BTreeMap<u64, Vec<u8>>,
    /// Envelopes dropped for a bad tag or wrong endpoints.
    pub rejected: u64,
}

impl Inbox {
    pub fn new(key: ChannelKey, source: ShardId, destination: ShardId) -> Self {
        Inbox {
            key,
            source,
            destination,
            delivered: 0,
            buffer: BTreeMap::new(),
            rejected: 0,
        }
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Sequence numbers received ahead of a gap.
    pub fn buffered(&self) -> impl Iterator<Item = u64> + '_ {
        self.buffer.keys().copied()
    }

    /// Returns the payloads that became deliverable, in order, and the ack to
    /// send back. Rejected envelopes get no ack.
    pub fn receive(&mut self, envelope: &InterShardEnvelope) -> (Vec<Vec<u8>>, Option<InterShardAck>) {
        if envelope.source != self.source
            || envelope.destination != self.destination
            || !tags_equal(&envelope.mac, &self.key.envelope_mac(envelope))
        {
            self.rejected += 1;
            return (Vec::new(), None);
        }
        let mut ready = Vec::new();
        if envelope.sequence > self.delivered && envelope.sequence <= self.delivered + REORDER_WINDOW {
            self.buffer
                .entry(envelope.sequence)
                .or_insert_with(|| envelope.payload.clone());
            while let Some(payload) = self.buffer.remove(&(self.delivered + 1)) {
                self.delivered += 1;
                ready.push(payload);
            }
        }
        (ready, Some(self.ack()))
    }

    fn ack(&self) -> InterShardAck {
        let mut ack = InterShardAck {
            source: self.source,
            destination: self.destination,
            sequence: self.delivered,
            mac: [0; 32],
        };
        ack.mac = self.key.ack_mac(&ack);
        ack
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (Outbox, Inbox) {
        let key = ChannelKey::new([7; 32]);
        (Outbox::new(key.clone(), 0, 1), Inbox::new(key, 0, 1))
    }

    #[test]
    fn in_order_delivery_and_cumulative_ack() {
        let (mut out, mut inb) = pair();
        let e1 = out.send(b"a".to_vec());
        let e2 = out.send(b"b".to_vec());
        let (got, ack) = inb.receive(&e2);
        assert!(got.is_empty());
        assert_eq!(ack.as_ref().unwrap().sequence, 0);
        let (got, ack) = inb.receive(&e1);
        assert_eq!(got, vec![b"a".to_vec(), b"b".to_vec()]);
        assert_eq!(out.acknowledge(&ack.unwrap()), 2);
        assert!(out.is_idle());
    }

    #[test]
    fn replay_is_acked_but_not_redelivered() {
        let (mut out, mut inb) = pair();
        let e = out.send(b"x".to_vec());
        assert_eq!(inb.receive(&e).0.len(), 1);
        let (got, ack) = inb.receive(&e);
        assert!(got.is_empty());
        assert_eq!(ack.unwrap().sequence, 1);
    }

    #[test]
    fn tampered_payload_is_dropped_and_counted() {
        let (mut out, mut inb) = pair();
        let mut e = out.send(b"pay 10".to_vec());
        e.payload = b"pay 99".to_vec();
        assert_eq!(inb.receive(&e), (Vec::new(), None));
        assert_eq!(inb.rejected, 1);
        let mut foreign = Inbox::new(ChannelKey::new([8; 32]), 0, 1);
        let e = out.send(b"y".to_vec());
        assert_eq!(foreign.receive(&e).1, None);
        assert_eq!(foreign.rejected, 1);
    }

    #[test]
    fn forged_ack_releases_nothing() {
        let (mut out, _) = pair();
        out.send(b"x".to_vec());
        let forged = InterShardAck {
            source: 0,
            destination: 1,
            sequence: 1,
            mac: [0; 32],
        };
        assert_eq!(out.acknowledge(&forged), 0);
        assert_eq!(out.rejected_acks, 1);
        assert_eq!(out.unacknowledged().count(), 1);
    }
}
