// SPDX-License-Identifier: Apache-2.0

//! Throughput and latency of one protocol phase against a committee.
//!
//! Orders and certificates are signed before the clock starts. A fixed
//! window of requests stays outstanding; each completion admits the next
//! request. Latency runs from the first send to the last answer awaited.

use crate::commands::broadcast_sync;
use crate::files::{self, PrimaryLedger};
use crate::stats::percentile;
use anyhow::{bail, ensure, Context, Result};
use futures::stream::{FuturesUnordered, StreamExt};
use quorumpay_core::audit::{audit, AuditOptions, AuditReport};
use quorumpay_core::client::{AuthorityClient, ClientConfig, CommitteeDriver, WaitMode};
use quorumpay_core::committee::Committee;
use quorumpay_core::messages::{
    aggregate_certificate, CertifiedTransfer, FundingTransaction, RecipientAddress,
    SignedTransferOrder, TransferOrder,
};
use quorumpay_core::{Address, Amount, KeyPair, SequenceNumber, UserData};
use quorumpay_net::deploy::{DeploymentConfig, DeploymentKeys, LocalDeployment};
use quorumpay_net::transport::{
    DatagramTransport, RemoteAuthority, RequestTransport, TokioTimer, TransportConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Credit given to every sending account.
const FUNDING: u64 = 10;
const AMOUNT: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Phase {
    /// Transfer orders to one authority; each answer is a vote.
    TransferOrders,
    /// Certificates to one authority; each answer is a settled account.
    Confirmations,
    /// Certification and confirmation at the whole committee.
    EndToEnd,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::TransferOrders => "transfer-orders",
            Phase::Confirmations => "confirmations",
            Phase::EndToEnd => "end-to-end",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Wait {
    FirstQuorum,
    AllAuthorities,
}

impl From<Wait> for WaitMode {
    fn from(w: Wait) -> WaitMode {
        match w {
            Wait::FirstQuorum => WaitMode::FirstQuorum,
            Wait::AllAuthorities => WaitMode::All,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    /// Start a committee in this process on loopback.
    Local { base_port: u16 },
    /// A running committee, described by the committee file of an operator
    /// directory. Authority keys are read from the same directory when
    /// certificates must be signed offline.
    Remote { committee: PathBuf },
}

/// Invariants: `in_flight >= 1` and `load >= in_flight`.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub target: Target,
    pub committee_size: usize,
    pub shards: u32,
    pub load: usize,
    pub in_flight: usize,
    pub phase: Phase,
    pub wait_mode: Wait,
    pub seed: u64,
    /// Receiver of single-authority phases.
    pub authority: usize,
    /// The last `crashed` authorities drop all traffic (local only).
    pub crashed: usize,
    pub transport: TransportConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            target: Target::Local { base_port: 0 },
            committee_size: 4,
            shards: 1,
            load: 10_000,
            in_flight: 1_000,
            phase: Phase::Confirmations,
            wait_mode: Wait::FirstQuorum,
            seed: 0,
            authority: 0,
            crashed: 0,
            transport: TransportConfig {
                retry_interval: Duration::from_millis(200),
                max_attempts: 12,
                ..TransportConfig::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_flight >= 1, "in-flight must be at least 1");
        ensure!(
            self.load >= self.in_flight,
            "load ({}) must be at least in-flight ({})",
            self.load,
            self.in_flight
        );
        ensure!(self.shards >= 1, "need at least one shard");
        ensure!(
            self.crashed < self.committee_size,
            "cannot crash every authority"
        );
        ensure!(
            self.authority < self.committee_size,
            "authority {} is not in a committee of {}",
            self.authority,
            self.committee_size
        );
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ShardLine {
    pub authority: usize,
    pub shard: u32,
    pub requests: u64,
    pub errors: u64,
    pub cross_shard_sent: u64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub phase: Phase,
    pub shards: u32,
    pub authorities: usize,
    pub load: usize,
    pub in_flight: usize,
    pub completed: usize,
    pub failed: usize,
    pub elapsed: Duration,
    pub tx_per_s: f64,
    /// Milliseconds, over completed requests.
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Median time to a certificate; end-to-end phase only.
    pub certify_p50_ms: Option<f64>,
    pub per_shard: Vec<ShardLine>,
    /// Audit of the authorities' state after the run; local runs only.
    pub audit: Option<AuditReport>,
    pub retransmissions: u64,
}

impl BenchReport {
    /// Numbers may be reported: nothing failed and the audit, when one
    /// ran, found nothing.
    pub fn is_sound(&self) -> bool {
        self.failed == 0 && self.audit.as_ref().is_none_or(AuditReport::is_clean)
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            phase: self.phase.name(),
            shards: self.shards,
            authorities: self.authorities,
            load: self.load,
            in_flight: self.in_flight,
            tx_per_s: format!("{:.1}", self.tx_per_s),
            p50_ms: format!("{:.3}", self.p50_ms),
            p95_ms: format!("{:.3}", self.p95_ms),
            p99_ms: format!("{:.3}", self.p99_ms),
        }
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} x{} on {} authorities, {} shard(s), in-flight {}",
            self.phase.name(),
            self.load,
            self.authorities,
            self.shards,
            self.in_flight
        )?;
        writeln!(
            f,
            "completed {} failed {} in {:.2}s: {:.0} tx/s",
            self.completed,
            self.failed,
            self.elapsed.as_secs_f64(),
            self.tx_per_s
        )?;
        write!(
            f,
            "latency ms p50 {:.3} p95 {:.3} p99 {:.3}",
            self.p50_ms, self.p95_ms, self.p99_ms
        )?;
        if let Some(c) = self.certify_p50_ms {
            write!(f, " (certificate p50 {c:.3})")?;
        }
        writeln!(f, "; {} retransmissions", self.retransmissions)?;
        for s in &self.per_shard {
            writeln!(
                f,
                "  authority {} shard {}: {} requests, {} errors, {} cross-shard",
                s.authority, s.shard, s.requests, s.errors, s.cross_shard_sent
            )?;
        }
        match &self.audit {
            Some(a) if a.is_clean() => writeln!(f, "audit: clean ({} certificates)", a.certificates),
            Some(a) => write!(f, "audit: FAILED\n{a}"),
            None => writeln!(f, "audit: not run against a remote committee"),
        }
    }
}

/// One CSV line; the column set is fixed so result files diff cleanly.
#[derive(Clone, Debug, Serialize)]
pub struct CsvRow {
    pub phase: &'static str,
    pub shards: u32,
    pub authorities: usize,
    pub load: usize,
    pub in_flight: usize,
    pub tx_per_s: String,
    pub p50_ms: String,
    pub p95_ms: String,
    pub p99_ms: String,
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Signed before timing starts.
struct Workload {
    senders: Vec<Address>,
    orders: Vec<TransferOrder>,
    certificates: Vec<CertifiedTransfer>,
}

fn generate(config: &BenchConfig, committee: &Committee, authority_keys: &[KeyPair]) -> Result<Workload> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let keys: Vec<KeyPair> = (0..config.load).map(|_| KeyPair::generate(&mut rng)).collect();
    let senders: Vec<Address> = keys.iter().map(|k| k.address()).collect();
    let orders: Vec<TransferOrder> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            TransferOrder::new(
                k,
                k.address(),
                RecipientAddress::Offchain(senders[(i + 1) % senders.len()]),
                Amount(AMOUNT),
                SequenceNumber(0),
                UserData::default(),
            )
        })
        .collect::<quorumpay_core::Result<_>>()?;
    let certificates = if config.phase == Phase::Confirmations {
        let quorum = committee.quorum_threshold();
        ensure!(
            authority_keys.len() >= quorum,
            "signing certificates offline needs {quorum} authority keys"
        );
        orders
            .iter()
            .map(|o| {
                let votes: Vec<SignedTransferOrder> = authority_keys[..quorum]
                    .iter()
                    .map(|k| SignedTransferOrder::new(o.clone(), k))
                    .collect();
                aggregate_certificate(committee, o, &votes)
            })
            .collect::<quorumpay_core::Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(Workload {
        senders,
        orders,
        certificates,
    })
}

struct Setup {
    committee: Committee,
    endpoints: Vec<Vec<SocketAddr>>,
    local: Option<LocalDeployment>,
    ledger: Option<PrimaryLedger>,
    authority_keys: Vec<KeyPair>,
}

fn remote_setup(path: &Path, needs_keys: bool) -> Result<Setup> {
    let file = files::load_committee(path)?;
    let committee = file.committee()?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut authority_keys = Vec::new();
    if needs_keys {
        for i in 0..committee.size() {
            authority_keys.push(files::load_authority_key(&dir.join(files::authority_key_file(i)))?.0);
        }
    }
    let ledger = PrimaryLedger::open(
        &dir.join(files::PRIMARY_KEY_FILE),
        &dir.join(files::PRIMARY_SNAPSHOT_FILE),
    )
    .context("funding senders needs the Primary key and snapshot")?;
    Ok(Setup {
        committee,
        endpoints: files::endpoints(&file)?,
        local: None,
        ledger: Some(ledger),
        authority_keys,
    })
}

struct Sample {
    ok: bool,
    latency: Duration,
    certify: Option<Duration>,
}

/// Keeps `window` operations outstanding until `load` have finished.
async fn drive<F>(load: usize, window: usize, mut start: F) -> (Vec<Sample>, Duration)
where
    F: FnMut(usize) -> futures::future::LocalBoxFuture<'static, (bool, Option<Duration>)>,
{
    let mut running = FuturesUnordered::new();
    let mut next = 0;
    let mut samples = Vec::with_capacity(load);
    let begin = Instant::now();
    let launch = |i: usize, start: &mut F| {
        let op = start(i);
        async move {
            let t = Instant::now();
            let (ok, certify) = op.await;
            Sample {
                ok,
                latency: t.elapsed(),
                certify,
            }
        }
    };
    while next < load.min(window) {
        running.push(launch(next, &mut start));
        next += 1;
    }
    while let Some(sample) = running.next().await {
        samples.push(sample);
        if next < load {
            running.push(launch(next, &mut start));
            next += 1;
        }
    }
    (samples, begin.elapsed())
}

pub fn run(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    runtime.block_on(run_async(config))
}

async fn run_async(config: &BenchConfig) -> Result<BenchReport> {
    let needs_keys = config.phase == Phase::Confirmations;
    let mut setup = match &config.target {
        Target::Local { .. } => {
            // Keys are a pure function of the seed, so the workload can be
            // signed before the committee exists and funded at start-up.
            let keys = DeploymentKeys::generate(config.committee_size, config.seed);
            Setup {
                committee: Committee::new(keys.authorities.iter().map(|k| k.public()).collect())?,
                endpoints: Vec::new(),
                local: None,
                ledger: None,
                authority_keys: keys.authorities,
            }
        }
        Target::Remote { committee } => remote_setup(committee, needs_keys)?,
    };
    if let Target::Remote { .. } = config.target {
        ensure!(
            setup.committee.size() == config.committee_size || config.committee_size == 0,
            "committee file lists {} authorities",
            setup.committee.size()
        );
    }
    let size = setup.committee.size();
    ensure!(config.authority < size, "authority {} is not in the committee", config.authority);
    let workload = generate(config, &setup.committee, &setup.authority_keys)?;

    let transport = DatagramTransport::bind("0.0.0.0:0".parse()?, config.transport.clone()).await?;
    let shared: Arc<dyn RequestTransport> = Arc::new(transport.clone());

    match &config.target {
        Target::Local { base_port } => {
            let deployment = LocalDeployment::start(&DeploymentConfig {
                committee_size: config.committee_size,
                num_shards: config.shards,
                seed: config.seed,
                base_port: *base_port,
                funding: workload.senders.iter().map(|a| (*a, FUNDING)).collect(),
                ..DeploymentConfig::default()
            })
            .context("starting the local committee")?;
            for i in size - config.crashed..size {
                deployment.set_crashed(i, true);
            }
            setup.endpoints = deployment.endpoints.clone();
            setup.local = Some(deployment);
        }
        Target::Remote { .. } => {
            ensure!(config.crashed == 0, "crashing authorities needs a local committee");
            let ledger = setup.ledger.as_mut().expect("remote setup opens the ledger");
            let orders = workload
                .senders
                .iter()
                .map(|&recipient| {
                    ledger.state.handle_funding_transaction(FundingTransaction {
                        recipient,
                        amount: Amount(FUNDING),
                    })
                })
                .collect::<quorumpay_core::Result<Vec<_>>>()?;
            ledger.save()?;
            let delivered = broadcast_sync(&shared, &setup.endpoints, &orders).await;
            log::info!("funding reached {delivered} shards");
        }
    }

    let authorities: Vec<(quorumpay_core::AuthorityName, Rc<dyn AuthorityClient>)> = setup
        .committee
        .authorities()
        .iter()
        .zip(&setup.endpoints)
        .map(|(name, eps)| {
            let remote = RemoteAuthority::new(shared.clone(), eps.clone())?;
            Ok((*name, Rc::new(remote) as Rc<dyn AuthorityClient>))
        })
        .collect::<quorumpay_core::Result<_>>()?;
    let target = authorities[config.authority].1.clone();
    let driver = CommitteeDriver::new(
        setup.committee.clone(),
        authorities,
        Rc::new(TokioTimer),
        ClientConfig {
            wait_mode: config.wait_mode.into(),
            ..ClientConfig::default()
        },
    );
    let orders = Rc::new(workload.orders);
    let certificates = Rc::new(workload.certificates);

    let (samples, elapsed) = match config.phase {
        Phase::TransferOrders => {
            drive(config.load, config.in_flight, |i| {
                let order = orders[i].clone();
                let vote = target.handle_transfer_order(order.clone());
                Box::pin(async move { (vote.await.is_ok_and(|v| v.order == order), None) })
            })
            .await
        }
        Phase::Confirmations => {
            drive(config.load, config.in_flight, |i| {
                let settled = target.handle_confirmation_order(certificates[i].clone());
                Box::pin(async move { (settled.await.is_ok(), None) })
            })
            .await
        }
        Phase::EndToEnd => {
            drive(config.load, config.in_flight, |i| {
                let (driver, orders) = (driver.clone(), orders.clone());
                Box::pin(async move {
                    let t = Instant::now();
                    let Ok(certificate) = driver.certify(&orders[i], &[]).await else {
                        return (false, None);
                    };
                    let certify = t.elapsed();
                    (driver.confirm_certificate(&certificate).await.is_ok(), Some(certify))
                })
            })
            .await
        }
    };

    let mut latencies: Vec<f64> = samples
        .iter()
        .filter(|s| s.ok)
        .map(|s| s.latency.as_secs_f64() * 1e3)
        .collect();
    latencies.sort_by(f64::total_cmp);
    let mut certify: Vec<f64> = samples
        .iter()
        .filter_map(|s| s.certify.filter(|_| s.ok))
        .map(|d| d.as_secs_f64() * 1e3)
        .collect();
    certify.sort_by(f64::total_cmp);
    let completed = latencies.len();

    let mut per_shard = Vec::new();
    let mut report_audit = None;
    if let Some(deployment) = &setup.local {
        if deployment.settle(Duration::from_secs(60)).await.is_err() {
            bail!("cross-shard updates did not settle within 60s");
        }
        for (a, shards) in deployment.inspect().await.iter().enumerate() {
            for (dump, stats, _) in shards {
                per_shard.push(ShardLine {
                    authority: a,
                    shard: dump.shard_id,
                    requests: stats.requests,
                    errors: stats.error_responses,
                    cross_shard_sent: stats.cross_shard_sent,
                });
            }
        }
        let dumps = deployment.dumps().await;
        let snapshot = deployment.primary().snapshot().parse()?;
        report_audit = Some(audit(&dumps, &snapshot, AuditOptions { quiescent: true }));
    }
    let retransmissions = transport
        .stats()
        .retransmitted
        .load(std::sync::atomic::Ordering::Relaxed);
    if let Some(deployment) = setup.local.take() {
        deployment.shutdown();
    }

    Ok(BenchReport {
        phase: config.phase,
        shards: setup.endpoints.first().map_or(config.shards, |e| e.len() as u32),
        authorities: size,
        load: config.load,
        in_flight: config.in_flight,
        completed,
        failed: samples.len() - completed,
        elapsed,
        tx_per_s: completed as f64 / elapsed.as_secs_f64(),
        p50_ms: percentile(&latencies, 50.0),
        p95_ms: percentile(&latencies, 95.0),
        p99_ms: percentile(&latencies, 99.0),
        certify_p50_ms: (!certify.is_empty()).then(|| percentile(&certify, 50.0)),
        per_shard,
        audit: report_audit,
        retransmissions,
    })
}
