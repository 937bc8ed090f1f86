// SPDX-License-Identifier: Apache-2.0

//! In-process stand-in for the settlement contract on the Primary ledger.

use crate::base::{Address, Amount, Balance, KeyPair, PublicKeyBytes, SequenceNumber};
use crate::committee::Committee;
use crate::error::{ensure, Error, Result};
use crate::messages::{
    FundingTransaction, PrimarySynchronizationOrder, RecipientAddress, RedeemTransaction,
    SignedSyncOrder,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redemption {
    pub sender: Address,
    pub sequence: SequenceNumber,
    pub recipient: Address,
    pub amount: Amount,
}

/// Invariant: `total_balance == Σ funding − Σ redeemed >= 0`.
pub struct PrimaryState {
    committee: Committee,
    keypair: KeyPair,
    redeem_logs: BTreeMap<Address, BTreeSet<SequenceNumber>>,
    total_balance: Balance,
    last_transaction: u64,
    sync_log: Vec<SignedSyncOrder>,
    redemptions: Vec<Redemption>,
    /// Tally of amounts paid out to Primary-side accounts.
    payouts: BTreeMap<Address, u128>,
}

impl PrimaryState {
    pub fn new(committee: Committee, keypair: KeyPair) -> Self {
        PrimaryState {
            committee,
            keypair,
            redeem_logs: BTreeMap::new(),
            total_balance: Balance::ZERO,
            last_transaction: 0,
            sync_log: Vec::new(),
            redemptions: Vec::new(),
            payouts: BTreeMap::new(),
        }
    }

    pub fn public_key(&self) -> PublicKeyBytes {
        self.keypair.public()
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn total_balance(&self) -> Balance {
        self.total_balance
    }

    pub fn last_transaction(&self) -> u64 {
        self.last_transaction
    }

    /// Signed synchronization orders with index greater than `after`.
    pub fn sync_orders_after(&self, after: u64) -> &[SignedSyncOrder] {
        let start = (after as usize).min(self.sync_log.len());
        &self.sync_log[start..]
    }

    pub fn redemptions(&self) -> &[Redemption] {
        &self.redemptions
    }

    pub fn redeem_log(&self, sender: &Address) -> Option<&BTreeSet<SequenceNumber>> {
        self.redeem_logs.get(sender)
    }

    pub fn payout(&self, recipient: &Address) -> u128 {
        self.payouts.get(recipient).copied().unwrap_or(0)
    }

    pub fn total_funded(&self) -> u128 {
        self.sync_log.iter().map(|s| u128::from(s.order.amount.0)).sum()
    }

    pub fn total_redeemed(&self) -> u128 {
        self.redemptions.iter().map(|r| u128::from(r.amount.0)).sum()
    }

    /// Locks funds in the contract and emits the synchronization order that
    /// credits them to `tx.recipient`.
    pub fn handle_funding_transaction(&mut self, tx: FundingTransaction) -> Result<SignedSyncOrder> {
        ensure!(tx.amount.0 > 0, Error::InvalidAmount);
        let total = self
            .total_balance
            .0
            .checked_add(i128::from(tx.amount.0))
            .ok_or(Error::AmountOverflow)?;
        self.total_balance = Balance(total);
        self.last_transaction += 1;
        let signed = SignedSyncOrder::new(
            PrimarySynchronizationOrder {
                transaction_index: self.last_transaction,
                recipient: tx.recipient,
                amount: tx.amount,
            },
            &self.keypair,
        );
        self.sync_log.push(signed);
        Ok(signed)
    }

    /// Pays out a certificate addressed to a Primary account, at most once per
    /// `(sender, sequence)`.
    pub fn handle_redeem_transaction(&mut self, tx: &RedeemTransaction) -> Result<()> {
        let certificate = &tx.certificate;
        certificate.verify(&self.committee)?;
        let recipient = match certificate.order.recipient {
            RecipientAddress::Primary(a) => a,
            RecipientAddress::Offchain(_) => return Err(Error::NotPrimaryRecipient),
        };
        let (sender, sequence, amount) = (
            certificate.sender(),
            certificate.sequence(),
            certificate.amount(),
        );
        ensure!(
            !self
                .redeem_logs
                .get(&sender)
                .is_some_and(|log| log.contains(&sequence)),
            Error::AlreadyRedeemed
        );
        let remaining = self.total_balance.debit(amount);
        ensure!(remaining.0 >= 0, Error::InsolvencyDetected);
        self.total_balance = remaining;
        self.redeem_logs.entry(sender).or_default().insert(sequence);
        *self.payouts.entry(recipient).or_default() += u128::from(amount.0);
        self.redemptions.push(Redemption {
            sender,
            sequence,
            recipient,
            amount,
        });
        Ok(())
    }

    pub fn snapshot(&self) -> PrimarySnapshot {
        PrimarySnapshot {
            primary_key: self.keypair.public().to_hex(),
            committee: self
                .committee
                .authorities()
                .iter()
                .map(|n| n.to_hex())
                .collect(),
            total_balance: self.total_balance.0.to_string(),
            last_transaction: self.last_transaction,
            funding: self
                .sync_log
                .iter()
                .map(|s| FundingRecord {
                    index: s.order.transaction_index,
                    recipient: s.order.recipient.to_hex(),
                    amount: s.order.amount.0,
                    signature: hex::encode(s.signature.0),
                })
                .collect(),
            redemptions: self
                .redemptions
                .iter()
                .map(|r| RedemptionRecord {
                    sender: r.sender.to_hex(),
                    sequence: r.sequence.0,
                    recipient: r.recipient.to_hex(),
                    amount: r.amount.0,
                })
                .collect(),
        }
    }

    /// Rebuilds the ledger from a snapshot and the Primary's key.
    pub fn restore(snapshot: &PrimarySnapshot, keypair: KeyPair) -> Result<Self> {
        let parsed = snapshot.parse()?;
        ensure!(
            parsed.primary_key == keypair.public(),
            Error::Storage("snapshot belongs to a different Primary key".into())
        );
        let mut state = PrimaryState::new(parsed.committee, keypair);
        for s in parsed.funding {
            state.handle_funding_transaction(FundingTransaction {
                recipient: s.order.recipient,
                amount: s.order.amount,
            })?;
        }
        for r in parsed.redemptions {
            state.total_balance = state.total_balance.debit(r.amount);
            state.redeem_logs.entry(r.sender).or_default().insert(r.sequence);
            *state.payouts.entry(r.recipient).or_default() += u128::from(r.amount.0);
            state.redemptions.push(r);
        }
        ensure!(
            state.total_balance.0.to_string() == snapshot.total_balance,
            Error::Storage("snapshot total balance is inconsistent".into())
        );
        Ok(state)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundingRecord {
    pub index: u64,
    pub recipient: String,
    pub amount: u64,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionRecord {
    pub sender: String,
    pub sequence: u64,
    pub recipient: String,
    pub amount: u64,
}

/// Public Primary state, as JSON text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimarySnapshot {
    pub primary_key: String,
    pub committee: Vec<String>,
    /// Decimal, since JSON numbers cannot carry 128 bits.
    pub total_balance: String,
    pub last_transaction: u64,
    pub funding: Vec<FundingRecord>,
    pub redemptions: Vec<RedemptionRecord>,
}

/// Typed view of a snapshot.
pub struct ParsedSnapshot {
    pub primary_key: PublicKeyBytes,
    pub committee: Committee,
    pub total_balance: Balance,
    pub last_transaction: u64,
    pub funding: Vec<SignedSyncOrder>,
    pub redemptions: Vec<Redemption>,
}

impl PrimarySnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Storage(e.to_string()))
    }

    pub fn parse(&self) -> Result<ParsedSnapshot> {
        let committee = Committee::new(
            self.committee
                .iter()
                .map(|h| PublicKeyBytes::from_hex(h))
                .collect::<Result<_>>()?,
        )?;
        let funding = self
            .funding
            .iter()
            .map(|f| {
                let sig: [u8; 64] = hex::decode(&f.signature)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| Error::Storage("bad funding signature".into()))?;
                Ok(SignedSyncOrder {
                    order: PrimarySynchronizationOrder {
                        transaction_index: f.index,
                        recipient: Address::from_hex(&f.recipient)?,
                        amount: Amount(f.amount),
                    },
                    signature: crate::base::Signature(sig),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let redemptions = self
            .redemptions
            .iter()
            .map(|r| {
                Ok(Redemption {
                    sender: Address::from_hex(&r.sender)?,
                    sequence: SequenceNumber(r.sequence),
                    recipient: Address::from_hex(&r.recipient)?,
                    amount: Amount(r.amount),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParsedSnapshot {
            primary_key: PublicKeyBytes::from_hex(&self.primary_key)?,
            committee,
            total_balance: Balance(
                self.total_balance
                    .parse()
                    .map_err(|_| Error::Storage("bad total balance".into()))?,
            ),
            last_transaction: self.last_transaction,
            funding,
            redemptions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::UserData;
    use crate::messages::{aggregate_certificate, CertifiedTransfer, SignedTransferOrder, TransferOrder};

    fn setup() -> (Vec<KeyPair>, PrimaryState) {
        let keys: Vec<_> = (1..=4u8).map(|i| KeyPair::from_secret_bytes(&[i; 32])).collect();
        let committee = Committee::new(keys.iter().map(|k| k.public()).collect()).unwrap();
        let primary = PrimaryState::new(committee, KeyPair::from_secret_bytes(&[50; 32]));
        (keys, primary)
    }

    fn cert(keys: &[KeyPair], p: &PrimaryState, recipient: RecipientAddress, amount: u64, seq: u64) -> CertifiedTransfer {
        let x = KeyPair::from_secret_bytes(&[60; 32]);
        let o = TransferOrder::new(&x, x.address(), recipient, Amount(amount), SequenceNumber(seq), UserData::default()).unwrap();
        let votes: Vec<_> = keys[..3].iter().map(|k| SignedTransferOrder::new(o.clone(), k)).collect();
        aggregate_certificate(p.committee(), &o, &votes).unwrap()
    }

    #[test]
    fn funding_emits_contiguous_signed_orders() {
        let (_, mut p) = setup();
        let x = Address([1; 32]);
        let y = Address([2; 32]);
        let s1 = p.handle_funding_transaction(FundingTransaction { recipient: x, amount: Amount(100) }).unwrap();
        assert_eq!(s1.order, PrimarySynchronizationOrder { transaction_index: 1, recipient: x, amount: Amount(100) });
        s1.verify(&p.public_key()).unwrap();
        assert_eq!(p.total_balance(), Balance(100));
        let s2 = p.handle_funding_transaction(FundingTransaction { recipient: y, amount: Amount(50) }).unwrap();
        assert_eq!(s2.order.transaction_index, 2);
        assert_eq!(p.total_balance(), Balance(150));
        assert_eq!(
            p.handle_funding_transaction(FundingTransaction { recipient: x, amount: Amount(0) }),
            Err(Error::InvalidAmount)
        );
        assert_eq!(p.sync_orders_after(1), &[s2]);
    }

    #[test]
    fn redeem_exactly_once() {
        let (keys, mut p) = setup();
        p.handle_funding_transaction(FundingTransaction { recipient: Address([1; 32]), amount: Amount(100) }).unwrap();
        let c = cert(&keys, &p, RecipientAddress::Primary(Address([9; 32])), 40, 0);
        let tx = RedeemTransaction { certificate: c };
        p.handle_redeem_transaction(&tx).unwrap();
        assert_eq!(p.total_balance(), Balance(60));
        assert_eq!(p.redeem_log(&tx.certificate.sender()).unwrap().len(), 1);
        assert_eq!(p.payout(&Address([9; 32])), 40);
        assert_eq!(p.handle_redeem_transaction(&tx), Err(Error::AlreadyRedeemed));

        let offchain = cert(&keys, &p, RecipientAddress::Offchain(Address([9; 32])), 5, 1);
        assert_eq!(
            p.handle_redeem_transaction(&RedeemTransaction { certificate: offchain }),
            Err(Error::NotPrimaryRecipient)
        );
    }

    #[test]
    fn redeem_detects_insolvency() {
        let (keys, mut p) = setup();
        p.handle_funding_transaction(FundingTransaction { recipient: Address([1; 32]), amount: Amount(10) }).unwrap();
        let c = cert(&keys, &p, RecipientAddress::Primary(Address([9; 32])), 40, 0);
        assert_eq!(
            p.handle_redeem_transaction(&RedeemTransaction { certificate: c }),
            Err(Error::InsolvencyDetected)
        );
        assert_eq!(p.total_balance(), Balance(10));
    }

    #[test]
    fn snapshot_restores() {
        let (keys, mut p) = setup();
        p.handle_funding_transaction(FundingTransaction { recipient: Address([1; 32]), amount: Amount(100) }).unwrap();
        let c = cert(&keys, &p, RecipientAddress::Primary(Address([9; 32])), 40, 0);
        p.handle_redeem_transaction(&RedeemTransaction { certificate: c.clone() }).unwrap();
        let text = p.snapshot().to_json();
        let mut q = PrimaryState::restore(&PrimarySnapshot::from_json(&text).unwrap(), KeyPair::from_secret_bytes(&[50; 32])).unwrap();
        assert_eq!(q.snapshot(), p.snapshot());
        assert_eq!(q.handle_redeem_transaction(&RedeemTransaction { certificate: c }), Err(Error::AlreadyRedeemed));
    }
}
