// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use quorumpay_core::protocol::{decode_frame, Chunk, WireMessage};
use quorumpay_core::wire::MAX_DATAGRAM_SIZE;
use quorumpay_net::framing::{datagrams, Reassembly};

fn chunks(nonce: u64, frame: Vec<u8>) -> Vec<Chunk> {
    datagrams(nonce, frame)
        .iter()
        .map(|d| match decode_frame(d).unwrap() {
            (n, WireMessage::Chunk(c)) if n == nonce => c,
            other => panic!("unexpected {other:?}"),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Completion happens exactly once, when the last distinct chunk lands,
    /// whatever the arrival order and duplication.
    #[test]
    fn reassembly_completes_once(
        len in 1500usize..20_000,
        seed in any::<u64>(),
        dups in proptest::collection::vec(any::<prop::sample::Index>(), 0..6),
    ) {
        let frame: Vec<u8> = (0..len).map(|i| (i as u64 ^ seed) as u8).collect();
        let mut parts = chunks(7, frame.clone());
        prop_assert!(parts.len() > 1);
        for d in &dups {
            let p = parts[d.index(parts.len())].clone();
            parts.push(p);
        }
        let mut order: Vec<usize> = (0..parts.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut r = Reassembly::default();
        let mut done = Vec::new();
        for i in order {
            if let Some(f) = r.add(parts[i].clone()).unwrap() {
                done.push(f);
            }
        }
        prop_assert_eq!(done, vec![frame]);
    }

    #[test]
    fn every_datagram_fits(len in 0usize..30_000) {
        let frame = vec![0xA5; len];
        for d in datagrams(1, frame) {
            prop_assert!(d.len() <= MAX_DATAGRAM_SIZE);
        }
    }

    #[test]
    fn arbitrary_chunks_never_panic(
        input in proptest::collection::vec((0u32..70_000, 0u32..70_000, proptest::collection::vec(any::<u8>(), 0..64)), 0..32)
    ) {
        let mut r = Reassembly::default();
        for (total, index, data) in input {
            let _ = r.add(Chunk { total, index, data });
        }
    }
}
