// SPDX-License-Identifier: Apache-2.0

//! Committee membership, quorum arithmetic and account sharding.

use crate::base::{Address, AuthorityName, PublicKeyBytes, ShardId};
use crate::error::{ensure, Error, Result};
use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// An equal-weight committee of `N = 3f + 1` authorities.
#[derive(Clone, Debug)]
pub struct Committee {
    authorities: Vec<AuthorityName>,
    keys: Vec<VerifyingKey>,
    index: HashMap<AuthorityName, usize>,
}

impl PartialEq for Committee {
    fn eq(&self, other: &Self) -> bool {
        self.authorities == other.authorities
    }
}

impl Eq for Committee {}

impl Committee {
    pub fn new(authorities: Vec<AuthorityName>) -> Result<Self> {
        let n = authorities.len();
        ensure!(
            n % 3 == 1,
            Error::InvalidCommittee(format!("size {n} is not of the form 3f+1"))
        );
        let mut index = HashMap::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        for (i, name) in authorities.iter().enumerate() {
            ensure!(
                index.insert(*name, i).is_none(),
                Error::InvalidCommittee(format!("duplicate authority {name:?}"))
            );
            keys.push(
                name.verifying_key()
                    .map_err(|_| Error::InvalidCommittee(format!("bad key {name:?}")))?,
            );
        }
        Ok(Committee {
            authorities,
            keys,
            index,
        })
    }

    pub fn size(&self) -> usize {
        self.authorities.len()
    }

    /// Maximum number of faulty authorities tolerated.
    pub fn max_faulty(&self) -> usize {
        (self.size() - 1) / 3
    }

    /// `2f + 1`.
    pub fn quorum_threshold(&self) -> usize {
        2 * self.size() / 3 + 1
    }

    /// `f + 1`: any set this large contains an honest authority.
    pub fn validity_threshold(&self) -> usize {
        self.max_faulty() + 1
    }

    pub fn authorities(&self) -> &[AuthorityName] {
        &self.authorities
    }

    pub fn index_of(&self, name: &AuthorityName) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &AuthorityName) -> bool {
        self.index.contains_key(name)
    }

    pub fn verifying_key(&self, name: &AuthorityName) -> Option<&VerifyingKey> {
        self.index_of(name).map(|i| &self.keys[i])
    }
}

/// Maps accounts onto the shards of one authority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShardAssignment {
    num_shards: u32,
}

impl ShardAssignment {
    pub fn new(num_shards: u32) -> Result<Self> {
        ensure!(
            num_shards > 0,
            Error::InvalidCommittee("shard count must be positive".into())
        );
        Ok(ShardAssignment { num_shards })
    }

    pub fn single() -> Self {
        ShardAssignment { num_shards: 1 }
    }

    pub fn num_shards(&self) -> u32 {
        self.num_shards
    }

    /// First 8 address bytes, big-endian, modulo the shard count.
    pub fn which_shard(&self, address: &Address) -> ShardId {
        let mut prefix = [0u8; 8];
        prefix.copy_from_slice(&address.0[..8]);
        (u64::from_be_bytes(prefix) % u64::from(self.num_shards)) as ShardId
    }

    pub fn shards(&self) -> impl Iterator<Item = ShardId> {
        0..self.num_shards
    }
}

/// One line of the committee file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeEntry {
    /// Hex-encoded authority verification key.
    pub name: String,
    pub host: String,
    /// Shard `s` listens on `base_port + s`.
    pub base_port: u16,
    pub num_shards: u32,
}

/// Committee file shared by authorities, clients and tooling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeFile {
    pub authorities: Vec<CommitteeEntry>,
    /// Key that signs Primary synchronization orders.
    #[serde(default)]
    pub primary_key: Option<PublicKeyBytes>,
}

impl CommitteeFile {
    pub fn committee(&self) -> Result<Committee> {
        let names = self
            .authorities
            .iter()
            .map(|e| AuthorityName::from_hex(&e.name))
            .collect::<Result<Vec<_>>>()?;
        Committee::new(names)
    }

    pub fn entry(&self, name: &AuthorityName) -> Option<&CommitteeEntry> {
        let hex = name.to_hex();
        self.authorities.iter().find(|e| e.name == hex)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("committee file serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CommitteeFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidCommittee(e.to_string()))?;
        file.committee()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::KeyPair;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn committee(n: usize) -> Result<Committee> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        Committee::new((0..n).map(|_| KeyPair::generate(&mut rng).public()).collect())
    }

    #[test]
    fn quorum_thresholds() {
        assert_eq!(committee(1).unwrap().quorum_threshold(), 1);
        assert_eq!(committee(4).unwrap().quorum_threshold(), 3);
        assert_eq!(committee(7).unwrap().quorum_threshold(), 5);
        assert_eq!(committee(10).unwrap().quorum_threshold(), 7);
        assert_eq!(committee(10).unwrap().validity_threshold(), 4);
    }

    #[test]
    fn rejects_sizes_not_of_form_3f_plus_1() {
        for n in [0, 2, 3, 5, 6, 8] {
            assert!(matches!(committee(n), Err(Error::InvalidCommittee(_))), "{n}");
        }
    }

    #[test]
    fn rejects_duplicate_members() {
        let k = KeyPair::from_secret_bytes(&[1; 32]).public();
        let others: Vec<_> = (2..5u8)
            .map(|i| KeyPair::from_secret_bytes(&[i; 32]).public())
            .collect();
        let mut names = vec![k, k];
        names.extend(&others[..2]);
        assert!(Committee::new(names).is_err());
    }

    /// Every pair of quorums shares at least `f + 1` members.
    #[test]
    fn quorums_intersect_in_f_plus_one() {
        for n in [4usize, 7, 10] {
            let c = committee(n).unwrap();
            let (q, f) = (c.quorum_threshold(), c.max_faulty());
            let quorums: Vec<u32> = (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == q)
                .collect();
            let worst = quorums
                .iter()
                .flat_map(|a| quorums.iter().map(move |b| (a & b).count_ones()))
                .min()
                .unwrap();
            assert_eq!(worst as usize, f + 1, "n = {n}");
        }
    }

    #[test]
    fn single_shard_maps_everything_to_zero() {
        let s = ShardAssignment::single();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut a = [0u8; 32];
            rng.fill_bytes(&mut a);
            assert_eq!(s.which_shard(&Address(a)), 0);
        }
    }

    #[test]
    fn shard_is_big_endian_prefix_mod_n() {
        let s = ShardAssignment::new(16).unwrap();
        let mut a = [0u8; 32];
        a[7] = 0x13;
        a[8] = 0xff;
        assert_eq!(s.which_shard(&Address(a)), 3);
        assert_eq!(s.which_shard(&Address(a)), s.which_shard(&Address(a)));
    }

    /// 10k uniform addresses over 16 shards: each count is Binomial(10000,
    /// 1/16), mean 625 and sd ~24.2, so [400, 850] is beyond 9 sd either side.
    #[test]
    fn shard_distribution_is_roughly_uniform() {
        let s = ShardAssignment::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 16];
        for _ in 0..10_000 {
            let key = KeyPair::generate(&mut rng).public();
            counts[s.which_shard(&key.address()) as usize] += 1;
        }
        let expected = 10_000.0 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(counts.iter().all(|&c| (400..=850).contains(&c)), "{counts:?}");
        // 15 degrees of freedom; 99.9th percentile is 37.7.
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn committee_file_roundtrip() {
        let c = committee(4).unwrap();
        let file = CommitteeFile {
            authorities: c
                .authorities()
                .iter()
                .enumerate()
                .map(|(i, n)| CommitteeEntry {
                    name: n.to_hex(),
                    host: "127.0.0.1".into(),
                    base_port: 9000 + 100 * i as u16,
                    num_shards: 2,
                })
                .collect(),
            primary_key: Some(c.authorities()[0]),
        };
        let parsed = CommitteeFile::from_json(&file.to_json()).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(parsed.committee().unwrap(), c);
    }
}
