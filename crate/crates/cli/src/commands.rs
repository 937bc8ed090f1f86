// SPDX-License-Identifier: Apache-2.0

//! Operator and wallet commands. Each returns the text it wants printed.

use crate::files::{self, PrimaryLedger};
use anyhow::{bail, ensure, Context, Result};
use futures::future::join_all;
use quorumpay_core::audit::{audit_texts, AuditOptions, AuditReport};
use quorumpay_core::authority::AuthorityState;
use quorumpay_core::client::{
    AccountClient, AuthorityClient, ClientConfig, ClientSnapshot, ClientState, CommitteeDriver,
};
use quorumpay_core::committee::{CommitteeFile, ShardAssignment};
use quorumpay_core::messages::{
    CertifiedTransfer, FundingTransaction, RecipientAddress, RedeemTransaction, SignedSyncOrder,
};
use quorumpay_core::protocol::WireMessage;
use quorumpay_core::wire::Wire;
use quorumpay_core::{Address, Amount, Error, KeyPair, ShardId, UserData};
use quorumpay_net::server::{spawn_shard, ServerConfig, ShardCore, ShardHandle, ShardSockets};
use quorumpay_net::transport::{
    DatagramTransport, RemoteAuthority, RequestTransport, TokioTimer, TransportConfig,
};
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

pub fn client_transport_config() -> TransportConfig {
    TransportConfig {
        retry_interval: Duration::from_millis(100),
        max_attempts: 8,
        ..TransportConfig::default()
    }
}

pub async fn bind_transport(config: TransportConfig) -> Result<Arc<dyn RequestTransport>> {
    let transport = DatagramTransport::bind("0.0.0.0:0".parse()?, config)
        .await
        .context("binding the client socket")?;
    Ok(Arc::new(transport))
}

pub fn driver_for(
    file: &CommitteeFile,
    transport: Arc<dyn RequestTransport>,
    config: ClientConfig,
) -> Result<CommitteeDriver> {
    let committee = file.committee()?;
    let authorities = committee
        .authorities()
        .iter()
        .zip(files::endpoints(file)?)
        .map(|(name, eps)| {
            let remote = RemoteAuthority::new(transport.clone(), eps)?;
            Ok((*name, Rc::new(remote) as Rc<dyn AuthorityClient>))
        })
        .collect::<quorumpay_core::Result<_>>()?;
    Ok(CommitteeDriver::new(
        committee,
        authorities,
        Rc::new(TokioTimer),
        config,
    ))
}

/// Sends sync orders to every shard, in index order per shard. Returns how
/// many shards acknowledged all of them.
pub async fn broadcast_sync(
    transport: &Arc<dyn RequestTransport>,
    endpoints: &[Vec<SocketAddr>],
    orders: &[SignedSyncOrder],
) -> usize {
    let deliveries = endpoints.iter().flatten().map(|&ep| {
        let transport = transport.clone();
        async move {
            let mut all = true;
            for s in orders {
                match transport.request(ep, WireMessage::PrimarySyncOrder(*s)).await {
                    Ok(WireMessage::Ack) => {}
                    other => {
                        log::warn!("sync order {} to {ep}: {other:?}", s.order.transaction_index);
                        all = false;
                    }
                }
            }
            all
        }
    });
    join_all(deliveries).await.into_iter().filter(|ok| *ok).count()
}

/// Writes a new wallet holding a fresh key.
pub fn keygen(out: &Path, seed: Option<u64>, force: bool) -> Result<String> {
    ensure!(
        force || !out.exists(),
        "{} exists; pass --force to replace it",
        out.display()
    );
    let keypair = match seed {
        Some(s) => {
            use rand::SeedableRng;
            KeyPair::generate(&mut rand_chacha::ChaCha8Rng::seed_from_u64(s))
        }
        None => KeyPair::generate(&mut rand::rngs::OsRng),
    };
    let state = ClientState::new(keypair);
    state.snapshot().save(out)?;
    Ok(format!("address {}\n", state.address.to_hex()))
}

pub fn committee(dir: &Path, spec: &files::CommitteeSpec) -> Result<String> {
    let file = files::generate_committee(dir, spec)?;
    let committee = file.committee()?;
    Ok(format!(
        "wrote {}: {} authorities, quorum {}, validity {}\n",
        dir.join(files::COMMITTEE_FILE).display(),
        committee.size(),
        committee.quorum_threshold(),
        committee.validity_threshold()
    ))
}

/// Parses `3`, `0..2` (exclusive end), `0..=2` or `0,2`.
pub fn parse_shard_range(text: &str, num_shards: u32) -> Result<Vec<ShardId>> {
    let text = text.trim();
    let parse = |s: &str| -> Result<ShardId> {
        s.trim().parse().with_context(|| format!("bad shard number {s:?}"))
    };
    let shards: Vec<ShardId> = if let Some((a, b)) = text.split_once("..=") {
        (parse(a)?..=parse(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (parse(a)?..parse(b)?).collect()
    } else {
        text.split(',').map(parse).collect::<Result<_>>()?
    };
    ensure!(!shards.is_empty(), "empty shard range {text:?}");
    if let Some(bad) = shards.iter().find(|&&s| s >= num_shards) {
        bail!("shard {bad} is out of range; the authority has {num_shards}");
    }
    Ok(shards)
}

pub struct AuthorityServers {
    pub name: String,
    pub shards: Vec<(ShardId, ShardHandle)>,
}

impl AuthorityServers {
    pub fn addresses(&self) -> Vec<(ShardId, SocketAddr)> {
        self.shards.iter().map(|(s, h)| (*s, h.address())).collect()
    }

    /// Writes one dump per served shard into `dir`.
    pub async fn write_dumps(&self, dir: &Path) -> Result<usize> {
        std::fs::create_dir_all(dir)?;
        let mut written = 0;
        for (shard, handle) in &self.shards {
            if let Some((dump, _, _)) = handle.inspect().await {
                let path = dir.join(dump_file_name(&self.name, *shard));
                files::write_atomic(&path, &dump.to_text())?;
                written += 1;
            }
        }
        Ok(written)
    }
}

pub fn dump_file_name(authority: &str, shard: ShardId) -> String {
    format!("{}-shard-{shard}.dump", &authority[..authority.len().min(16)])
}

/// Binds every requested shard before starting any, so a port clash
/// leaves nothing running.
pub fn start_authority(committee_path: &Path, key_path: &Path, shards: Option<&str>) -> Result<AuthorityServers> {
    let file = files::load_committee(committee_path)?;
    let committee = file.committee()?;
    let (keypair, channel) = files::load_authority_key(key_path)?;
    let name = keypair.public();
    let index = committee
        .index_of(&name)
        .with_context(|| format!("{} is not a committee member", name.to_hex()))?;
    let primary = file
        .primary_key
        .context("the committee file names no Primary key")?;
    let entry = &file.authorities[index];
    let assignment = ShardAssignment::new(entry.num_shards)?;
    let peers = files::endpoints(&file)?.swap_remove(index);
    let served = match shards {
        Some(text) => parse_shard_range(text, entry.num_shards)?,
        None => assignment.shards().collect(),
    };
    let config = ServerConfig::default();
    let mut sockets = Vec::new();
    for &s in &served {
        let address = peers[s as usize];
        let socket = ShardSockets::bind(address, &config)
            .with_context(|| format!("binding shard {s} on {address}"))?;
        sockets.push((s, socket));
    }
    let mut handles = Vec::new();
    for (s, socket) in sockets {
        let state = AuthorityState::new(keypair.clone(), committee.clone(), assignment, s);
        let core = ShardCore::new(state, primary, channel.clone());
        handles.push((s, spawn_shard(core, socket, peers.clone(), config.clone())?));
    }
    Ok(AuthorityServers {
        name: name.to_hex(),
        shards: handles,
    })
}

pub struct WalletArgs {
    pub committee: PathBuf,
    pub wallet: PathBuf,
    /// Primary snapshot whose funding log the wallet reads.
    pub primary: Option<PathBuf>,
}

fn load_wallet(args: &WalletArgs) -> Result<ClientState> {
    let snapshot = ClientSnapshot::load(&args.wallet)
        .map_err(|e| anyhow::anyhow!("{}: {e}", args.wallet.display()))?;
    let mut state = ClientState::from_snapshot(&snapshot)?;
    if let Some(path) = &args.primary {
        let parsed = files::load_primary_snapshot(path)?.parse()?;
        for s in parsed.funding {
            if s.order.recipient == state.address && s.verify(&parsed.primary_key).is_ok() {
                state.funding.insert(s.order.transaction_index, s);
            }
        }
    }
    Ok(state)
}

async fn open_wallet(args: &WalletArgs, state: ClientState) -> Result<AccountClient> {
    let file = files::load_committee(&args.committee)?;
    let transport = bind_transport(client_transport_config()).await?;
    let driver = driver_for(&file, transport, ClientConfig::default())?;
    Ok(AccountClient::from_state(state, driver).with_persistence(args.wallet.clone()))
}

pub struct TransferArgs {
    pub wallet: WalletArgs,
    pub to: Address,
    pub amount: u64,
    /// Pay a Primary ledger address, to be redeemed there.
    pub to_primary: bool,
    pub certificate_out: Option<PathBuf>,
}

pub async fn transfer(args: &TransferArgs) -> Result<String> {
    let state = load_wallet(&args.wallet)?;
    // Checked before any socket exists.
    let spendable = state.spendable_balance();
    if state.pending_order.is_none() && args.amount > spendable.0 {
        return Err(Error::InsufficientFunds {
            balance: i128::from(spendable.0),
            amount: args.amount,
        }
        .into());
    }
    let mut client = open_wallet(&args.wallet, state).await?;
    let recipient = if args.to_primary {
        RecipientAddress::Primary(args.to)
    } else {
        RecipientAddress::Offchain(args.to)
    };
    let certificate = client
        .certify_transfer(recipient, Amount(args.amount), UserData::default())
        .await?;
    let outcome = client.confirm(&certificate).await?;
    let mut out = String::new();
    writeln!(out, "certificate {}", hex::encode(certificate.order.digest()))?;
    writeln!(
        out,
        "certified ({} signatures), settled at {} of {} authorities",
        certificate.signatures.len(),
        outcome.settled.len(),
        client.driver().committee().size()
    )?;
    if let Some(path) = &args.certificate_out {
        files::write_atomic(path, &hex::encode(certificate.to_bytes()))?;
        writeln!(out, "certificate written to {}", path.display())?;
    }
    let (balance, next) = client.query_balance().await?;
    writeln!(out, "balance {balance} next_sequence {next}")?;
    Ok(out)
}

pub async fn query_balance(args: &WalletArgs) -> Result<String> {
    let state = load_wallet(args)?;
    let mut client = open_wallet(args, state).await?;
    let found = client.sync_received().await?;
    let responses = client
        .driver()
        .query_account(quorumpay_core::messages::AccountInfoQuery::summary(client.address()))
        .await;
    let mut out = String::new();
    writeln!(out, "address {}", client.address().to_hex())?;
    for (name, response) in &responses {
        let short = &name.to_hex()[..16];
        match response {
            Ok(info) => writeln!(
                out,
                "authority {short}: balance {} next_sequence {}",
                info.balance, info.next_sequence
            )?,
            Err(e) => writeln!(out, "authority {short}: {e}")?,
        }
    }
    let (balance, next) = client.query_balance().await?;
    let agreeing = responses
        .iter()
        .filter(|(_, r)| r.as_ref().is_ok_and(|i| i.balance == balance && i.next_sequence == next))
        .count();
    writeln!(
        out,
        "balance {balance} next_sequence {next} at {agreeing} of {} authorities",
        responses.len()
    )?;
    writeln!(
        out,
        "spendable {} ({found} new incoming certificates)",
        client.spendable_balance()
    )?;
    Ok(out)
}

pub struct LedgerArgs {
    pub primary_key: PathBuf,
    pub primary: PathBuf,
}

pub async fn fund(
    committee: &Path,
    ledger_args: &LedgerArgs,
    to: Address,
    amount: u64,
    wallet: Option<&Path>,
) -> Result<String> {
    let file = files::load_committee(committee)?;
    let mut ledger = PrimaryLedger::open(&ledger_args.primary_key, &ledger_args.primary)?;
    let signed = ledger.state.handle_funding_transaction(FundingTransaction {
        recipient: to,
        amount: Amount(amount),
    })?;
    ledger.save()?;
    if let Some(path) = wallet {
        let snapshot = ClientSnapshot::load(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut state = ClientState::from_snapshot(&snapshot)?;
        if state.address == to {
            state.funding.insert(signed.order.transaction_index, signed);
            state.snapshot().save(path)?;
        }
    }
    let endpoints = files::endpoints(&file)?;
    let transport = bind_transport(client_transport_config()).await?;
    let delivered = broadcast_sync(&transport, &endpoints, &[signed]).await;
    let total: usize = endpoints.iter().map(Vec::len).sum();
    Ok(format!(
        "funded {} with {amount} at index {}; delivered to {delivered} of {total} shards\n",
        to.to_hex(),
        signed.order.transaction_index
    ))
}

pub fn redeem(ledger_args: &LedgerArgs, certificate: &Path) -> Result<String> {
    let text = std::fs::read_to_string(certificate)
        .with_context(|| format!("reading {}", certificate.display()))?;
    let bytes = hex::decode(text.trim()).context("certificate file is not hex")?;
    let certificate = CertifiedTransfer::from_bytes(&bytes)?;
    let mut ledger = PrimaryLedger::open(&ledger_args.primary_key, &ledger_args.primary)?;
    ledger.state.handle_redeem_transaction(&RedeemTransaction {
        certificate: certificate.clone(),
    })?;
    ledger.save()?;
    Ok(format!(
        "redeemed {} to {} (sender {} sequence {})\n",
        certificate.amount(),
        certificate.order.recipient.address().to_hex(),
        certificate.sender().to_hex(),
        certificate.sequence()
    ))
}

/// Audits every `*.dump` file in `dir`. The report is also written as JSON
/// to `report` when given.
pub fn audit_dir(dir: &Path, primary: &Path, report: Option<&Path>, quiescent: bool) -> Result<AuditReport> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dump"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .dump files in {}", dir.display());
    let dumps = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), std::fs::read_to_string(p)?)))
        .collect::<std::io::Result<Vec<_>>>()?;
    let primary_text = std::fs::read_to_string(primary)
        .with_context(|| format!("reading {}", primary.display()))?;
    let result = audit_texts(&dumps, &primary_text, AuditOptions { quiescent });
    if let Some(path) = report {
        files::write_atomic(path, &result.to_json())?;
    }
    Ok(result)
}
