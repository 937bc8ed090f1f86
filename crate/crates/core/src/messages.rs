// SPDX-License-Identifier: Apache-2.0

//! Orders, authority votes, certificates and the Primary-side records.

use crate::base::{
    derive_address, Address, Amount, AuthorityName, Balance, KeyPair, PublicKeyBytes,
    SequenceNumber, ShardId, Signature, UserData,
};
use crate::committee::Committee;
use crate::error::{ensure, Error, Result};
use crate::wire::{Reader, Wire};
use sha2::{Digest as _, Sha256};
use std::collections::HashSet;

const ORDER_DOMAIN: &[u8] = b"quorumpay/transfer-order/v1";
const VOTE_DOMAIN: &[u8] = b"quorumpay/authority-vote/v1";
const SYNC_DOMAIN: &[u8] = b"quorumpay/primary-sync/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecipientAddress {
    /// An account held by the committee.
    Offchain(Address),
    /// An account on the Primary ledger; paid out by redemption.
    Primary(Address),
}

impl RecipientAddress {
    pub fn address(&self) -> Address {
        match self {
            RecipientAddress::Offchain(a) | RecipientAddress::Primary(a) => *a,
        }
    }

    pub fn offchain(&self) -> Option<Address> {
        match self {
            RecipientAddress::Offchain(a) => Some(*a),
            RecipientAddress::Primary(_) => None,
        }
    }

    pub fn is_primary(&self) -> bool {
        matches!(self, RecipientAddress::Primary(_))
    }
}

/// A sender-signed spend intent. `sender_key` travels with the order so that
/// any authority can check it hashes to `sender`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransferOrder {
    pub sender: Address,
    pub sender_key: PublicKeyBytes,
    pub recipient: RecipientAddress,
    pub amount: Amount,
    pub sequence: SequenceNumber,
    pub user_data: UserData,
    pub signature: Signature,
}

impl TransferOrder {
    pub fn new(
        key: &KeyPair,
        sender: Address,
        recipient: RecipientAddress,
        amount: Amount,
        sequence: SequenceNumber,
        user_data: UserData,
    ) -> Result<Self> {
        ensure!(key.address() == sender, Error::SenderMismatch);
        let mut order = TransferOrder {
            sender,
            sender_key: key.public(),
            recipient,
            amount,
            sequence,
            user_data,
            signature: Signature([0; 64]),
        };
        order.signature = key.sign(&order.signing_bytes());
        Ok(order)
    }

    /// Domain tag followed by every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ORDER_DOMAIN.len() + 160 + self.user_data.as_bytes().len());
        out.extend_from_slice(ORDER_DOMAIN);
        self.encode_fields(&mut out);
        out
    }

    fn encode_fields(&self, out: &mut Vec<u8>) {
        self.sender.encode_into(out);
        self.sender_key.encode_into(out);
        self.recipient.encode_into(out);
        self.amount.encode_into(out);
        self.sequence.encode_into(out);
        self.user_data.encode_into(out);
    }

    pub fn verify_signature(&self) -> Result<()> {
        ensure!(
            derive_address(&self.sender_key.0)? == self.sender,
            Error::InvalidSignature
        );
        self.signature
            .verify(&self.signing_bytes(), &self.sender_key)
    }

    /// SHA-256 of the canonical encoding, signature included.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    fn vote_bytes(&self) -> Vec<u8> {
        let mut out = VOTE_DOMAIN.to_vec();
        self.encode_into(&mut out);
        out
    }
}

/// One authority's vote for an order: a partial certificate.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignedTransferOrder {
    pub order: TransferOrder,
    pub authority: AuthorityName,
    pub signature: Signature,
}

impl SignedTransferOrder {
    pub fn new(order: TransferOrder, authority: &KeyPair) -> Self {
        let signature = authority.sign(&order.vote_bytes());
        SignedTransferOrder {
            order,
            authority: authority.public(),
            signature,
        }
    }

    /// Checks membership and the authority signature. The client signature
    /// inside the order is not re-checked.
    pub fn verify(&self, committee: &Committee) -> Result<()> {
        let key = committee
            .verifying_key(&self.authority)
            .ok_or(Error::UnknownAuthority)?;
        self.signature.verify_with(&self.order.vote_bytes(), key)
    }
}

/// An order together with votes from a quorum of distinct authorities.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CertifiedTransfer {
    pub order: TransferOrder,
    pub signatures: Vec<(AuthorityName, Signature)>,
}

impl CertifiedTransfer {
    pub fn sender(&self) -> Address {
        self.order.sender
    }

    pub fn sequence(&self) -> SequenceNumber {
        self.order.sequence
    }

    pub fn amount(&self) -> Amount {
        self.order.amount
    }

    pub fn signers(&self) -> impl Iterator<Item = &AuthorityName> {
        self.signatures.iter().map(|(name, _)| name)
    }

    /// Structural checks, then one batch verification covering the sender's
    /// signature and every vote.
    pub fn verify(&self, committee: &Committee) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.signatures.len());
        let mut keys = Vec::with_capacity(self.signatures.len() + 1);
        for (name, _) in &self.signatures {
            ensure!(seen.insert(*name), Error::DuplicateSigner);
            keys.push(*committee.verifying_key(name).ok_or(Error::UnknownAuthority)?);
        }
        ensure!(
            seen.len() >= committee.quorum_threshold(),
            Error::QuorumNotReached {
                got: seen.len(),
                needed: committee.quorum_threshold()
            }
        );
        ensure!(
            derive_address(&self.order.sender_key.0)? == self.order.sender,
            Error::InvalidSignature
        );
        keys.push(self.order.sender_key.verifying_key()?);

        let vote = self.order.vote_bytes();
        let order = self.order.signing_bytes();
        let mut messages: Vec<&[u8]> = vec![&vote; self.signatures.len()];
        messages.push(&order);
        let mut signatures: Vec<_> = self.signatures.iter().map(|(_, s)| s.as_dalek()).collect();
        signatures.push(self.order.signature.as_dalek());
        ed25519_dalek::verify_batch(&messages, &signatures, &keys)
            .map_err(|_| Error::InvalidSignature)
    }
}

/// Builds a certificate from partial votes, keeping one vote per authority.
/// Vote signatures are not checked here; see [`verify_certificate`].
pub fn aggregate_certificate(
    committee: &Committee,
    order: &TransferOrder,
    partials: &[SignedTransferOrder],
) -> Result<CertifiedTransfer> {
    let mut signatures: Vec<(usize, AuthorityName, Signature)> = Vec::new();
    for partial in partials {
        ensure!(&partial.order == order, Error::CertificateMismatch);
        let index = committee
            .index_of(&partial.authority)
            .ok_or(Error::UnknownAuthority)?;
        if signatures.iter().all(|(i, _, _)| *i != index) {
            signatures.push((index, partial.authority, partial.signature));
        }
    }
    ensure!(
        signatures.len() >= committee.quorum_threshold(),
        Error::QuorumNotReached {
            got: signatures.len(),
            needed: committee.quorum_threshold()
        }
    );
    signatures.sort_by_key(|(i, _, _)| *i);
    Ok(CertifiedTransfer {
        order: order.clone(),
        signatures: signatures.into_iter().map(|(_, n, s)| (n, s)).collect(),
    })
}

pub fn verify_certificate(committee: &Committee, certificate: &CertifiedTransfer) -> Result<()> {
    certificate.verify(committee)
}

/// Deposit into the settlement contract on the Primary ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FundingTransaction {
    pub recipient: Address,
    pub amount: Amount,
}

/// The Primary's instruction to credit an account, numbered contiguously
/// from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimarySynchronizationOrder {
    pub transaction_index: u64,
    pub recipient: Address,
    pub amount: Amount,
}

/// A synchronization order attested by the Primary's key, so that anyone can
/// relay it to authorities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignedSyncOrder {
    pub order: PrimarySynchronizationOrder,
    pub signature: Signature,
}

impl SignedSyncOrder {
    pub fn new(order: PrimarySynchronizationOrder, primary: &KeyPair) -> Self {
        let signature = primary.sign(&Self::signing_bytes(&order));
        SignedSyncOrder { order, signature }
    }

    fn signing_bytes(order: &PrimarySynchronizationOrder) -> Vec<u8> {
        let mut out = SYNC_DOMAIN.to_vec();
        order.encode_into(&mut out);
        out
    }

    pub fn verify(&self, primary: &PublicKeyBytes) -> Result<()> {
        self.signature
            .verify(&Self::signing_bytes(&self.order), primary)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RedeemTransaction {
    pub certificate: CertifiedTransfer,
}

/// Credit for a recipient held by another shard of the same authority.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CrossShardUpdate {
    pub shard_id: ShardId,
    pub certificate: CertifiedTransfer,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct AccountInfoQuery {
    pub address: Address,
    /// Inclusive range of outgoing certificates to return.
    pub confirmed_range: Option<(SequenceNumber, SequenceNumber)>,
    /// Return incoming certificates from this log position on.
    pub received_from: Option<u64>,
    pub include_synchronized: bool,
}

impl AccountInfoQuery {
    pub fn summary(address: Address) -> Self {
        AccountInfoQuery {
            address,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AccountInfoResponse {
    pub address: Address,
    pub balance: Balance,
    pub next_sequence: SequenceNumber,
    pub pending: Option<SignedTransferOrder>,
    pub confirmed: Vec<CertifiedTransfer>,
    pub received: Vec<CertifiedTransfer>,
    pub synchronized: Vec<PrimarySynchronizationOrder>,
}

impl Wire for RecipientAddress {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            RecipientAddress::Offchain(a) => {
                out.push(0);
                a.encode_into(out);
            }
            RecipientAddress::Primary(a) => {
                out.push(1);
                a.encode_into(out);
            }
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(RecipientAddress::Offchain(Address::decode_from(r)?)),
            1 => Ok(RecipientAddress::Primary(Address::decode_from(r)?)),
            t => Err(Error::MalformedMessage(format!("recipient tag {t}"))),
        }
    }
}

impl Wire for TransferOrder {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.encode_fields(out);
        self.signature.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(TransferOrder {
            sender: Wire::decode_from(r)?,
            sender_key: Wire::decode_from(r)?,
            recipient: Wire::decode_from(r)?,
            amount: Wire::decode_from(r)?,
            sequence: Wire::decode_from(r)?,
            user_data: Wire::decode_from(r)?,
            signature: Wire::decode_from(r)?,
        })
    }
}

impl Wire for SignedTransferOrder {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.order.encode_into(out);
        self.authority.encode_into(out);
        self.signature.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SignedTransferOrder {
            order: Wire::decode_from(r)?,
            authority: Wire::decode_from(r)?,
            signature: Wire::decode_from(r)?,
        })
    }
}

impl Wire for CertifiedTransfer {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.order.encode_into(out);
        self.signatures.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(CertifiedTransfer {
            order: Wire::decode_from(r)?,
            signatures: Wire::decode_from(r)?,
        })
    }
}

impl Wire for FundingTransaction {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.recipient.encode_into(out);
        self.amount.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(FundingTransaction {
            recipient: Wire::decode_from(r)?,
            amount: Wire::decode_from(r)?,
        })
    }
}

impl Wire for PrimarySynchronizationOrder {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.transaction_index.encode_into(out);
        self.recipient.encode_into(out);
        self.amount.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(PrimarySynchronizationOrder {
            transaction_index: Wire::decode_from(r)?,
            recipient: Wire::decode_from(r)?,
            amount: Wire::decode_from(r)?,
        })
    }
}

impl Wire for SignedSyncOrder {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.order.encode_into(out);
        self.signature.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SignedSyncOrder {
            order: Wire::decode_from(r)?,
            signature: Wire::decode_from(r)?,
        })
    }
}

impl Wire for RedeemTransaction {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.certificate.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(RedeemTransaction {
            certificate: Wire::decode_from(r)?,
        })
    }
}

impl Wire for CrossShardUpdate {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.shard_id.encode_into(out);
        self.certificate.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(CrossShardUpdate {
            shard_id: Wire::decode_from(r)?,
            certificate: Wire::decode_from(r)?,
        })
    }
}

impl Wire for AccountInfoQuery {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.address.encode_into(out);
        self.confirmed_range.encode_into(out);
        self.received_from.encode_into(out);
        self.include_synchronized.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(AccountInfoQuery {
            address: Wire::decode_from(r)?,
            confirmed_range: Wire::decode_from(r)?,
            received_from: Wire::decode_from(r)?,
            include_synchronized: Wire::decode_from(r)?,
        })
    }
}

impl Wire for AccountInfoResponse {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.address.encode_into(out);
        self.balance.encode_into(out);
        self.next_sequence.encode_into(out);
        self.pending.encode_into(out);
        self.confirmed.encode_into(out);
        self.received.encode_into(out);
        self.synchronized.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(AccountInfoResponse {
            address: Wire::decode_from(r)?,
            balance: Wire::decode_from(r)?,
            next_sequence: Wire::decode_from(r)?,
            pending: Wire::decode_from(r)?,
            confirmed: Wire::decode_from(r)?,
            received: Wire::decode_from(r)?,
            synchronized: Wire::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        committee: Committee,
        authorities: Vec<KeyPair>,
        sender: KeyPair,
        order: TransferOrder,
    }

    fn setup(n: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let authorities: Vec<_> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
        let committee = Committee::new(authorities.iter().map(|k| k.public()).collect()).unwrap();
        let sender = KeyPair::generate(&mut rng);
        let recipient = KeyPair::generate(&mut rng).address();
        let order = TransferOrder::new(
            &sender,
            sender.address(),
            RecipientAddress::Offchain(recipient),
            Amount(10),
            SequenceNumber(0),
            UserData::default(),
        )
        .unwrap();
        Setup {
            committee,
            authorities,
            sender,
            order,
        }
    }

    fn votes(s: &Setup, signers: &[usize]) -> Vec<SignedTransferOrder> {
        signers
            .iter()
            .map(|&i| SignedTransferOrder::new(s.order.clone(), &s.authorities[i]))
            .collect()
    }

    #[test]
    fn order_signing_is_deterministic_and_verifies() {
        let s = setup(4);
        s.order.verify_signature().unwrap();
        let again = TransferOrder::new(
            &s.sender,
            s.order.sender,
            s.order.recipient,
            s.order.amount,
            s.order.sequence,
            UserData::default(),
        )
        .unwrap();
        assert_eq!(again.to_bytes(), s.order.to_bytes());
    }

    #[test]
    fn order_rejects_mismatched_sender() {
        let s = setup(4);
        let other = KeyPair::from_secret_bytes(&[3; 32]);
        let result = TransferOrder::new(
            &other,
            s.order.sender,
            s.order.recipient,
            Amount(1),
            SequenceNumber(0),
            UserData::default(),
        );
        assert_eq!(result, Err(Error::SenderMismatch));
    }

    #[test]
    fn flipped_bits_invalidate_order() {
        let s = setup(4);
        let mut o = s.order.clone();
        o.amount.0 ^= 1;
        assert_eq!(o.verify_signature(), Err(Error::InvalidSignature));
        let mut o = s.order.clone();
        o.signature.0[5] ^= 0x10;
        assert_eq!(o.verify_signature(), Err(Error::InvalidSignature));
        let mut o = s.order.clone();
        o.sender_key = KeyPair::from_secret_bytes(&[4; 32]).public();
        assert_eq!(o.verify_signature(), Err(Error::InvalidSignature));
    }

    #[test]
    fn aggregate_and_verify() {
        let s = setup(4);
        let cert = aggregate_certificate(&s.committee, &s.order, &votes(&s, &[2, 0, 1])).unwrap();
        assert_eq!(cert.signatures.len(), 3);
        verify_certificate(&s.committee, &cert).unwrap();

        let short = aggregate_certificate(&s.committee, &s.order, &votes(&s, &[0, 1]));
        assert_eq!(short, Err(Error::QuorumNotReached { got: 2, needed: 3 }));

        let dup = aggregate_certificate(&s.committee, &s.order, &votes(&s, &[0, 1, 1, 2])).unwrap();
        assert_eq!(dup.signatures.len(), 3);
    }

    #[test]
    fn aggregate_rejects_foreign_and_mismatched_votes() {
        let s = setup(4);
        let outsider = KeyPair::from_secret_bytes(&[8; 32]);
        let mut partials = votes(&s, &[0, 1]);
        partials.push(SignedTransferOrder::new(s.order.clone(), &outsider));
        assert_eq!(
            aggregate_certificate(&s.committee, &s.order, &partials),
            Err(Error::UnknownAuthority)
        );

        let mut other = s.order.clone();
        other.amount = Amount(11);
        let mut partials = votes(&s, &[0, 1]);
        partials.push(SignedTransferOrder::new(other, &s.authorities[2]));
        assert_eq!(
            aggregate_certificate(&s.committee, &s.order, &partials),
            Err(Error::CertificateMismatch)
        );
    }

    #[test]
    fn verify_rejects_tampered_certificates() {
        let s = setup(4);
        let cert = aggregate_certificate(&s.committee, &s.order, &votes(&s, &[0, 1, 2])).unwrap();

        let mut c = cert.clone();
        c.signatures.pop();
        assert_eq!(
            c.verify(&s.committee),
            Err(Error::QuorumNotReached { got: 2, needed: 3 })
        );

        let outsider = KeyPair::from_secret_bytes(&[8; 32]);
        let mut c = cert.clone();
        c.signatures[1] = (
            outsider.public(),
            SignedTransferOrder::new(s.order.clone(), &outsider).signature,
        );
        assert_eq!(c.verify(&s.committee), Err(Error::UnknownAuthority));

        let mut c = cert.clone();
        c.signatures[2] = c.signatures[0];
        assert_eq!(c.verify(&s.committee), Err(Error::DuplicateSigner));

        let mut c = cert.clone();
        c.signatures[1].1 .0[0] ^= 1;
        assert_eq!(c.verify(&s.committee), Err(Error::InvalidSignature));

        let mut c = cert;
        c.order.amount = Amount(9);
        assert_eq!(c.verify(&s.committee), Err(Error::InvalidSignature));
    }

    /// For N = 4, a certificate verifies exactly when its signer set has at
    /// least three members.
    #[test]
    fn certificate_soundness_over_all_signer_subsets() {
        let s = setup(4);
        let all = votes(&s, &[0, 1, 2, 3]);
        for mask in 0u32..16 {
            let signatures: Vec<_> = (0..4)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| (all[i].authority, all[i].signature))
                .collect();
            let cert = CertifiedTransfer {
                order: s.order.clone(),
                signatures,
            };
            assert_eq!(
                cert.verify(&s.committee).is_ok(),
                mask.count_ones() >= 3,
                "mask {mask:04b}"
            );
        }
    }

    #[test]
    fn vote_is_bound_to_authority_and_order() {
        let s = setup(4);
        let v = &votes(&s, &[0])[0];
        v.verify(&s.committee).unwrap();
        let mut forged = v.clone();
        forged.authority = s.authorities[1].public();
        assert_eq!(forged.verify(&s.committee), Err(Error::InvalidSignature));
    }

    #[test]
    fn encodings_roundtrip() {
        let s = setup(10);
        let cert = aggregate_certificate(&s.committee, &s.order, &votes(&s, &[0, 1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!(CertifiedTransfer::from_bytes(&cert.to_bytes()).unwrap(), cert);
        let info = AccountInfoResponse {
            address: s.order.sender,
            balance: Balance(-5),
            next_sequence: SequenceNumber(1),
            pending: Some(votes(&s, &[3]).remove(0)),
            confirmed: vec![cert.clone()],
            received: vec![],
            synchronized: vec![PrimarySynchronizationOrder {
                transaction_index: 1,
                recipient: s.order.sender,
                amount: Amount(100),
            }],
        };
        assert_eq!(AccountInfoResponse::from_bytes(&info.to_bytes()).unwrap(), info);
        assert!(TransferOrder::from_bytes(&[]).is_err());
    }
}
