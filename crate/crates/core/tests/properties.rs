// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use quorumpay_core::authority::AuthorityState;
use quorumpay_core::committee::{Committee, ShardAssignment};
use quorumpay_core::messages::{
    aggregate_certificate, PrimarySynchronizationOrder, RecipientAddress, SignedTransferOrder,
    TransferOrder,
};
use quorumpay_core::protocol::{decode_frame, encode_frame, WireMessage};
use quorumpay_core::wire::Wire;
use quorumpay_core::{Amount, KeyPair, SequenceNumber, UserData};

fn keys() -> Vec<KeyPair> {
    (1..=4u8).map(|i| KeyPair::from_secret_bytes(&[i; 32])).collect()
}

fn user(i: u8) -> KeyPair {
    KeyPair::from_secret_bytes(&[100 + i; 32])
}

prop_compose! {
    fn order()(
        from in 0u8..4,
        to in 0u8..4,
        to_primary in any::<bool>(),
        amount in 1u64..u64::MAX,
        seq in any::<u64>(),
        data in proptest::collection::vec(any::<u8>(), 0..=128),
    ) -> TransferOrder {
        let key = user(from);
        let to = user(to).address();
        let recipient = if to_primary {
            RecipientAddress::Primary(to)
        } else {
            RecipientAddress::Offchain(to)
        };
        TransferOrder::new(
            &key,
            key.address(),
            recipient,
            Amount(amount),
            SequenceNumber(seq),
            UserData::new(data).unwrap(),
        )
        .unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_roundtrip(o in order(), nonce in any::<u64>(), signers in 3usize..=4) {
        let keys = keys();
        let committee = Committee::new(keys.iter().map(|k| k.public()).collect()).unwrap();
        let votes: Vec<_> = keys[..signers]
            .iter()
            .map(|k| SignedTransferOrder::new(o.clone(), k))
            .collect();
        let cert = aggregate_certificate(&committee, &o, &votes).unwrap();
        prop_assert!(cert.verify(&committee).is_ok());
        for m in [
            WireMessage::TransferOrderRequest(o.clone()),
            WireMessage::SignedOrderResponse(votes[0].clone()),
            WireMessage::ConfirmationRequest(cert),
        ] {
            let bytes = encode_frame(nonce, &m);
            prop_assert_eq!(decode_frame(&bytes).unwrap(), (nonce, m));
        }
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_frame(&bytes);
        let _ = TransferOrder::from_bytes(&bytes);
    }

    #[test]
    fn any_bit_flip_breaks_the_order_signature(o in order(), bit in 0usize..(8 * 200)) {
        let mut bytes = o.to_bytes();
        let bit = bit % (bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        if let Ok(flipped) = TransferOrder::from_bytes(&bytes) {
            prop_assert!(flipped.verify_signature().is_err());
        }
    }

    /// Same-shard transfers among funded accounts never change the total.
    #[test]
    fn local_conservation(script in proptest::collection::vec((0u8..4, 0u8..4, 1u64..60), 1..40)) {
        let keys = keys();
        let committee = Committee::new(keys.iter().map(|k| k.public()).collect()).unwrap();
        let mut shards: Vec<_> = keys
            .iter()
            .map(|k| AuthorityState::new(k.clone(), committee.clone(), ShardAssignment::single(), 0))
            .collect();
        for s in shards.iter_mut() {
            for u in 0..4u8 {
                s.handle_primary_synchronization_order(PrimarySynchronizationOrder {
                    transaction_index: u64::from(u) + 1,
                    recipient: user(u).address(),
                    amount: Amount(100),
                })
                .unwrap();
            }
        }
        let mut next = [0u64; 4];
        for (from, to, amount) in script {
            let key = user(from);
            let o = TransferOrder::new(
                &key,
                key.address(),
                RecipientAddress::Offchain(user(to).address()),
                Amount(amount),
                SequenceNumber(next[from as usize]),
                UserData::default(),
            )
            .unwrap();
            let votes: Vec<_> = shards
                .iter_mut()
                .filter_map(|s| s.handle_transfer_order(o.clone()).ok())
                .collect();
            if votes.len() < 3 {
                // Declined for lack of funds everywhere; nothing is locked.
                prop_assert!(votes.is_empty());
                continue;
            }
            let cert = aggregate_certificate(&committee, &o, &votes).unwrap();
            for s in shards.iter_mut() {
                let (_, update) = s.handle_confirmation_order(cert.clone()).unwrap();
                prop_assert!(update.is_none());
            }
            next[from as usize] += 1;
            for s in &shards {
                let total: i128 = s.accounts().map(|(_, a)| a.balance.0).sum();
                prop_assert_eq!(total, 400);
                prop_assert!(s.accounts().all(|(_, a)| a.balance.0 >= 0));
            }
        }
    }
}
