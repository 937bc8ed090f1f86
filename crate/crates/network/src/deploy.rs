// SPDX-License-Identifier: Apache-2.0

//! A whole committee on loopback: every shard of every authority on its own
//! thread and port, plus the Primary and its synchronization feed.

use crate::channel::ChannelKey;
use crate::server::{bind_shards, spawn_shard, ServerConfig, ShardCore, ShardHandle, ShardStats};
use crate::transport::{RemoteAuthority, RequestTransport, TokioTimer};
use futures::future::join_all;
use quorumpay_core::audit::ShardDump;
use quorumpay_core::authority::AuthorityState;
use quorumpay_core::client::{AuthorityClient, ClientConfig, CommitteeDriver};
use quorumpay_core::committee::{Committee, CommitteeEntry, CommitteeFile, ShardAssignment};
use quorumpay_core::messages::{FundingTransaction, SignedSyncOrder};
use quorumpay_core::primary::PrimaryState;
use quorumpay_core::protocol::WireMessage;
use quorumpay_core::{Address, Amount, AuthorityName, Error, KeyPair, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::rc::Rc;
use std::sync::{Arc, Mutex, MutexGuard};

#[derive(Clone, Debug)]
pub struct DeploymentConfig {
    pub committee_size: usize,
    pub num_shards: u32,
    pub seed: u64,
    pub host: IpAddr,
    /// Authority `i` serves shard `s` on `base_port + i * num_shards + s`;
    /// 0 picks free ports.
    pub base_port: u16,
    pub server: ServerConfig,
    /// Primary credits applied to every shard before the servers start.
    pub funding: Vec<(Address, u64)>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            committee_size: 4,
            num_shards: 1,
            seed: 0,
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            base_port: 0,
            server: ServerConfig::default(),
            funding: Vec::new(),
        }
    }
}

/// Deterministic authority keys, Primary key and channel keys from a seed.
pub struct DeploymentKeys {
    pub authorities: Vec<KeyPair>,
    pub channel_keys: Vec<[u8; 32]>,
    pub primary: KeyPair,
}

impl DeploymentKeys {
    pub fn generate(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let authorities = (0..size).map(|_| KeyPair::generate(&mut rng)).collect();
        let primary = KeyPair::generate(&mut rng);
        let channel_keys = (0..size)
            .map(|_| {
                let mut k = [0u8; 32];
                rng.fill_bytes(&mut k);
                k
            })
            .collect();
        DeploymentKeys {
            authorities,
            channel_keys,
            primary,
        }
    }
}

pub struct LocalDeployment {
    pub committee: Committee,
    pub authority_keys: Vec<KeyPair>,
    pub endpoints: Vec<Vec<SocketAddr>>,
    primary: Mutex<PrimaryState>,
    servers: Vec<Vec<ShardHandle>>,
}

impl LocalDeployment {
    pub fn start(config: &DeploymentConfig) -> io::Result<Self> {
        let keys = DeploymentKeys::generate(config.committee_size, config.seed);
        let committee = Committee::new(keys.authorities.iter().map(|k| k.public()).collect())
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let assignment = ShardAssignment::new(config.num_shards)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let mut primary = PrimaryState::new(committee.clone(), keys.primary.clone());
        let genesis = config
            .funding
            .iter()
            .map(|&(recipient, amount)| {
                primary.handle_funding_transaction(FundingTransaction {
                    recipient,
                    amount: Amount(amount),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let mut endpoints = Vec::new();
        let mut servers = Vec::new();
        for (i, (key, channel_key)) in keys.authorities.iter().zip(&keys.channel_keys).enumerate() {
            let base = match config.base_port {
                0 => 0,
                p => u16::try_from(u32::from(p) + i as u32 * config.num_shards)
                    .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "port out of range"))?,
            };
            let sockets = bind_shards(config.host, base, config.num_shards, &config.server)?;
            let peers: Vec<SocketAddr> = sockets
                .iter()
                .map(|s| s.local_addr())
                .collect::<io::Result<_>>()?;
            let mut handles = Vec::new();
            for (shard, socket) in assignment.shards().zip(sockets) {
                let mut state = AuthorityState::new(key.clone(), committee.clone(), assignment, shard);
                for signed in &genesis {
                    state
                        .handle_primary_synchronization_order(signed.order)
                        .expect("genesis orders are contiguous");
                }
                let core = ShardCore::new(
                    state,
                    keys.primary.public(),
                    ChannelKey::new(*channel_key),
                );
                handles.push(spawn_shard(core, socket, peers.clone(), config.server.clone())?);
            }
            endpoints.push(peers);
            servers.push(handles);
        }
        Ok(LocalDeployment {
            primary: Mutex::new(primary),
            committee,
            authority_keys: keys.authorities,
            endpoints,
            servers,
        })
    }

    pub fn size(&self) -> usize {
        self.committee.size()
    }

    pub fn set_crashed(&self, authority: usize, crashed: bool) {
        for s in &self.servers[authority] {
            s.set_crashed(crashed);
        }
    }

    pub fn primary(&self) -> MutexGuard<'_, PrimaryState> {
        self.primary.lock().unwrap()
    }

    pub fn committee_file(&self) -> CommitteeFile {
        CommitteeFile {
            authorities: self
                .committee
                .authorities()
                .iter()
                .zip(&self.endpoints)
                .map(|(name, eps)| CommitteeEntry {
                    name: name.to_hex(),
                    host: eps[0].ip().to_string(),
                    base_port: eps[0].port(),
                    num_shards: eps.len() as u32,
                })
                .collect(),
            primary_key: Some(self.primary().public_key()),
        }
    }

    pub fn remote_authorities(
        &self,
        transport: Arc<dyn RequestTransport>,
    ) -> Vec<(AuthorityName, Rc<dyn AuthorityClient>)> {
        self.committee
            .authorities()
            .iter()
            .zip(&self.endpoints)
            .map(|(name, eps)| {
                let remote = RemoteAuthority::new(transport.clone(), eps.clone())
                    .expect("endpoint list is non-empty");
                (*name, Rc::new(remote) as Rc<dyn AuthorityClient>)
            })
            .collect()
    }

    pub fn driver(&self, transport: Arc<dyn RequestTransport>, config: ClientConfig) -> CommitteeDriver {
        CommitteeDriver::new(
            self.committee.clone(),
            self.remote_authorities(transport),
            Rc::new(TokioTimer),
            config,
        )
    }

    /// Funds `recipient` and pushes the order to every shard of every
    /// authority. Unreachable shards are skipped; clients forward missed
    /// orders later.
    pub async fn fund(
        &self,
        transport: &Arc<dyn RequestTransport>,
        recipient: Address,
        amount: u64,
    ) -> Result<SignedSyncOrder> {
        let signed = self.primary().handle_funding_transaction(FundingTransaction {
            recipient,
            amount: Amount(amount),
        })?;
        self.broadcast_sync(transport, &[signed]).await;
        Ok(signed)
    }

    /// Delivers sync orders, in index order, to every shard.
    pub async fn broadcast_sync(&self, transport: &Arc<dyn RequestTransport>, orders: &[SignedSyncOrder]) {
        let deliveries = self.endpoints.iter().flatten().map(|ep| {
            let transport = transport.clone();
            let ep = *ep;
            async move {
                for s in orders {
                    match transport.request(ep, WireMessage::PrimarySyncOrder(*s)).await {
                        Ok(WireMessage::Ack) => {}
                        Ok(other) => log::debug!("sync order {} to {ep}: {other:?}", s.order.transaction_index),
                        Err(e) => log::debug!("sync order {} to {ep}: {e}", s.order.transaction_index),
                    }
                }
            }
        });
        join_all(deliveries).await;
    }

    /// Replays the full funding log to one authority, e.g. after it recovers.
    pub async fn resync(&self, transport: &Arc<dyn RequestTransport>, authority: usize) {
        let orders = self.primary().sync_orders_after(0).to_vec();
        for ep in &self.endpoints[authority] {
            for s in &orders {
                let _ = transport.request(*ep, WireMessage::PrimarySyncOrder(*s)).await;
            }
        }
    }

    pub async fn inspect(&self) -> Vec<Vec<(ShardDump, ShardStats, bool)>> {
        let mut all = Vec::new();
        for handles in &self.servers {
            let mut shards = Vec::new();
            for h in handles {
                shards.push(h.inspect().await.expect("shard server is running"));
            }
            all.push(shards);
        }
        all
    }

    pub async fn dumps(&self) -> Vec<ShardDump> {
        self.inspect()
            .await
            .into_iter()
            .flatten()
            .map(|(d, _, _)| d)
            .collect()
    }

    /// Waits until every cross-shard update has been acknowledged.
    pub async fn settle(&self, timeout: std::time::Duration) -> Result<()> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let quiet = self.inspect().await.iter().flatten().all(|(_, _, q)| *q);
            if quiet {
                return Ok(());
            }
            if tokio::time::Instant::now() > deadline {
                return Err(Error::Timeout);
            }
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
    }

    pub fn shutdown(self) {
        for handles in self.servers {
            for h in handles {
                h.shutdown();
            }
        }
    }
}
