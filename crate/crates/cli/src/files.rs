// SPDX-License-Identifier: Apache-2.0

//! On-disk layout of an operator directory:
//!
//! ```text
//! committee.json       committee file shared by everyone
//! authority-<i>.json   authority signing key and inter-shard channel key
//! primary-key.json     key that signs Primary synchronization orders
//! primary.json         Primary ledger snapshot
//! ```
//!
//! Authority `i` serves shard `s` on `base_port + i * num_shards + s`.

use anyhow::{bail, Context, Result};
use quorumpay_core::committee::{CommitteeEntry, CommitteeFile};
use quorumpay_core::primary::{PrimarySnapshot, PrimaryState};
use quorumpay_core::{Address, KeyPair};
use quorumpay_net::channel::ChannelKey;
use quorumpay_net::deploy::DeploymentKeys;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

pub const COMMITTEE_FILE: &str = "committee.json";
pub const PRIMARY_KEY_FILE: &str = "primary-key.json";
pub const PRIMARY_SNAPSHOT_FILE: &str = "primary.json";

pub fn authority_key_file(index: usize) -> String {
    format!("authority-{index}.json")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityKeyFile {
    pub index: usize,
    pub name: String,
    pub secret_key: String,
    pub channel_key: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryKeyFile {
    pub public_key: String,
    pub secret_key: String,
}

#[derive(Clone, Debug)]
pub struct CommitteeSpec {
    pub size: usize,
    pub seed: u64,
    pub host: String,
    pub base_port: u16,
    pub shards: u32,
}

pub fn keypair_from_hex(secret: &str) -> Result<KeyPair> {
    let bytes: [u8; 32] = hex::decode(secret.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .context("secret key must be 32 hex-encoded bytes")?;
    Ok(KeyPair::from_secret_bytes(&bytes))
}

pub fn parse_address(text: &str) -> Result<Address> {
    Address::from_hex(text.trim()).map_err(|e| anyhow::anyhow!("bad address {text:?}: {e}"))
}

/// Replaces `path` atomically.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut file = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a file in {}", dir.display()))?;
    file.write_all(contents.as_bytes())?;
    file.as_file().sync_all()?;
    file.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes every file of a fresh operator directory and returns the
/// committee file. The same spec always produces the same bytes.
pub fn generate_committee(dir: &Path, spec: &CommitteeSpec) -> Result<CommitteeFile> {
    if spec.shards == 0 {
        bail!("an authority needs at least one shard");
    }
    let span = spec.size as u64 * u64::from(spec.shards);
    if u64::from(spec.base_port) + span > u64::from(u16::MAX) + 1 {
        bail!("{span} ports from {} overflow the port range", spec.base_port);
    }
    let keys = DeploymentKeys::generate(spec.size, spec.seed);
    let file = CommitteeFile {
        authorities: keys
            .authorities
            .iter()
            .enumerate()
            .map(|(i, k)| CommitteeEntry {
                name: k.public().to_hex(),
                host: spec.host.clone(),
                base_port: spec.base_port + (i as u32 * spec.shards) as u16,
                num_shards: spec.shards,
            })
            .collect(),
        primary_key: Some(keys.primary.public()),
    };
    let committee = file.committee()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(COMMITTEE_FILE), &file.to_json())?;
    for (i, (k, channel)) in keys.authorities.iter().zip(&keys.channel_keys).enumerate() {
        let key_file = AuthorityKeyFile {
            index: i,
            name: k.public().to_hex(),
            secret_key: hex::encode(k.secret_bytes()),
            channel_key: hex::encode(channel),
        };
        write_atomic(
            &dir.join(authority_key_file(i)),
            &serde_json::to_string_pretty(&key_file)?,
        )?;
    }
    let primary_key = PrimaryKeyFile {
        public_key: keys.primary.public().to_hex(),
        secret_key: hex::encode(keys.primary.secret_bytes()),
    };
    write_atomic(
        &dir.join(PRIMARY_KEY_FILE),
        &serde_json::to_string_pretty(&primary_key)?,
    )?;
    let primary = PrimaryState::new(committee, keys.primary);
    write_atomic(&dir.join(PRIMARY_SNAPSHOT_FILE), &primary.snapshot().to_json())?;
    Ok(file)
}

pub fn load_committee(path: &Path) -> Result<CommitteeFile> {
    CommitteeFile::from_json(&read(path)?)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn load_authority_key(path: &Path) -> Result<(KeyPair, ChannelKey)> {
    let file: AuthorityKeyFile = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let keypair = keypair_from_hex(&file.secret_key)?;
    if keypair.public().to_hex() != file.name {
        bail!("{}: secret key does not match name", path.display());
    }
    let channel = ChannelKey::from_hex(&file.channel_key).context("bad channel key")?;
    Ok((keypair, channel))
}

pub fn load_primary_key(path: &Path) -> Result<KeyPair> {
    let file: PrimaryKeyFile = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    keypair_from_hex(&file.secret_key)
}

pub fn load_primary_snapshot(path: &Path) -> Result<PrimarySnapshot> {
    PrimarySnapshot::from_json(&read(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// The Primary ledger, kept as a snapshot file next to its key.
pub struct PrimaryLedger {
    pub state: PrimaryState,
    path: PathBuf,
}

impl PrimaryLedger {
    pub fn open(key: &Path, snapshot: &Path) -> Result<Self> {
        let keypair = load_primary_key(key)?;
        let state = PrimaryState::restore(&load_primary_snapshot(snapshot)?, keypair)
            .map_err(|e| anyhow::anyhow!("{}: {e}", snapshot.display()))?;
        Ok(PrimaryLedger {
            state,
            path: snapshot.to_path_buf(),
        })
    }

    pub fn save(&self) -> Result<()> {
        write_atomic(&self.path, &self.state.snapshot().to_json())
    }
}

/// Shard endpoints of every authority, in committee order.
pub fn endpoints(file: &CommitteeFile) -> Result<Vec<Vec<SocketAddr>>> {
    file.authorities
        .iter()
        .map(|e| {
            (0..e.num_shards)
                .map(|s| {
                    let port = u16::try_from(u32::from(e.base_port) + s)
                        .context("shard port out of range")?;
                    (e.host.as_str(), port)
                        .to_socket_addrs()?
                        .next()
                        .with_context(|| format!("cannot resolve {}", e.host))
                })
                .collect()
        })
        .collect()
}
