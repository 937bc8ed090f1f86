// SPDX-License-Identifier: Apache-2.0

//! Identifiers, keys, signatures and the integer newtypes used everywhere.

use crate::error::{ensure, Error, Result};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;

pub type ShardId = u32;

/// Upper bound on `TransferOrder::user_data`.
pub const MAX_USER_DATA_LEN: usize = 128;

fn short_hex(bytes: &[u8]) -> String {
    hex::encode(&bytes[..4])
}

/// 32-byte account identifier: SHA-256 of the owner's verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 32]);

impl Address {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::MalformedMessage(e.to_string()))?;
        let array: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::MalformedKey(bytes.len()))?;
        Ok(Address(array))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", short_hex(&self.0))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

macro_rules! hex_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                <$t>::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(Address);

/// Hash a 32-byte verification key into an address.
pub fn derive_address(verification_key: &[u8]) -> Result<Address> {
    ensure!(
        verification_key.len() == 32,
        Error::MalformedKey(verification_key.len())
    );
    Ok(Address(Sha256::digest(verification_key).into()))
}

/// Raw ed25519 verification key. Authorities are named by theirs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKeyBytes(pub [u8; 32]);

pub type AuthorityName = PublicKeyBytes;

impl PublicKeyBytes {
    pub fn address(&self) -> Address {
        Address(Sha256::digest(self.0).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::MalformedMessage(e.to_string()))?;
        let array: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::MalformedKey(bytes.len()))?;
        Ok(PublicKeyBytes(array))
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).map_err(|_| Error::InvalidSignature)
    }
}

hex_serde!(PublicKeyBytes);

impl fmt::Debug for PublicKeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", short_hex(&self.0))
    }
}

impl fmt::Display for PublicKeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn verify(&self, message: &[u8], key: &PublicKeyBytes) -> Result<()> {
        let key = key.verifying_key()?;
        self.verify_with(message, &key)
    }

    pub fn verify_with(&self, message: &[u8], key: &VerifyingKey) -> Result<()> {
        let signature = ed25519_dalek::Signature::from_bytes(&self.0);
        key.verify_strict(message, &signature)
            .map_err(|_| Error::InvalidSignature)
    }

    pub(crate) fn as_dalek(&self) -> ed25519_dalek::Signature {
        ed25519_dalek::Signature::from_bytes(&self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig{}", short_hex(&self.0))
    }
}

/// An ed25519 key pair. Signatures are deterministic.
#[derive(Clone)]
pub struct KeyPair(SigningKey);

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        KeyPair(SigningKey::generate(rng))
    }

    pub fn from_secret_bytes(secret: &[u8; 32]) -> Self {
        KeyPair(SigningKey::from_bytes(secret))
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public(&self) -> PublicKeyBytes {
        PublicKeyBytes(self.0.verifying_key().to_bytes())
    }

    pub fn address(&self) -> Address {
        self.public().address()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.0.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?})", self.public())
    }
}

/// Transfer amount in minimal currency units.
#[derive(
    Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Debug, Serialize, Deserialize,
)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn checked_add(self, other: Amount) -> Result<Amount> {
        self.0
            .checked_add(other.0)
            .map(Amount)
            .ok_or(Error::AmountOverflow)
    }

    pub fn checked_sub(self, other: Amount) -> Result<Amount> {
        self.0
            .checked_sub(other.0)
            .map(Amount)
            .ok_or(Error::AmountOverflow)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Authority-side account balance. May go negative while credits are in
/// flight between shards.
#[derive(
    Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Debug, Serialize, Deserialize,
)]
pub struct Balance(pub i128);

impl Balance {
    pub const ZERO: Balance = Balance(0);

    pub fn credit(self, amount: Amount) -> Balance {
        Balance(self.0 + i128::from(amount.0))
    }

    pub fn debit(self, amount: Amount) -> Balance {
        Balance(self.0 - i128::from(amount.0))
    }

    pub fn covers(self, amount: Amount) -> bool {
        self.0 >= i128::from(amount.0)
    }
}

impl From<Amount> for Balance {
    fn from(amount: Amount) -> Self {
        Balance(i128::from(amount.0))
    }
}

impl fmt::Display for Balance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(
    Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Debug, Serialize, Deserialize,
)]
pub struct SequenceNumber(pub u64);

impl SequenceNumber {
    pub fn next(self) -> SequenceNumber {
        SequenceNumber(self.0 + 1)
    }
}

impl fmt::Display for SequenceNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque user payload attached to a transfer, at most `MAX_USER_DATA_LEN` bytes.
#[derive(Clone, PartialEq, Eq, Hash, Default, Debug)]
pub struct UserData(Vec<u8>);

impl UserData {
    pub fn new(bytes: Vec<u8>) -> Result<Self> {
        ensure!(
            bytes.len() <= MAX_USER_DATA_LEN,
            Error::UserDataTooLarge(bytes.len())
        );
        Ok(UserData(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn address_is_deterministic_and_key_specific() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let k1 = KeyPair::generate(&mut rng).public();
        let k2 = KeyPair::generate(&mut rng).public();
        assert_eq!(derive_address(&k1.0).unwrap(), derive_address(&k1.0).unwrap());
        assert_ne!(derive_address(&k1.0).unwrap(), derive_address(&k2.0).unwrap());
        assert_eq!(derive_address(&k1.0).unwrap(), k1.address());
    }

    #[test]
    fn address_rejects_short_keys() {
        assert_eq!(derive_address(&[0u8; 31]), Err(Error::MalformedKey(31)));
    }

    #[test]
    fn signatures_are_deterministic() {
        let key = KeyPair::from_secret_bytes(&[9u8; 32]);
        assert_eq!(key.sign(b"hello"), key.sign(b"hello"));
        key.sign(b"hello").verify(b"hello", &key.public()).unwrap();
        assert_eq!(
            key.sign(b"hello").verify(b"hellp", &key.public()),
            Err(Error::InvalidSignature)
        );
    }

    #[test]
    fn balances_go_negative_without_overflow() {
        let b = Balance::ZERO.debit(Amount(u64::MAX)).debit(Amount(u64::MAX));
        assert_eq!(b.0, -2 * i128::from(u64::MAX));
        assert!(!b.covers(Amount(1)));
        assert!(Balance(5).covers(Amount(5)));
    }

    #[test]
    fn user_data_is_bounded() {
        assert!(UserData::new(vec![0; MAX_USER_DATA_LEN]).is_ok());
        assert_eq!(
            UserData::new(vec![0; MAX_USER_DATA_LEN + 1]),
            Err(Error::UserDataTooLarge(MAX_USER_DATA_LEN + 1))
        );
    }
}
