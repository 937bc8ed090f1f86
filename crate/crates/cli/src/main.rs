// SPDX-License-Identifier: Apache-2.0

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use quorumpay_cli::bench::{self, BenchConfig, Phase, Target, Wait};
use quorumpay_cli::commands::{self, LedgerArgs, TransferArgs, WalletArgs};
use quorumpay_cli::files::{self, CommitteeSpec};
use quorumpay_cli::microbench;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "quorumpay", version, about = "Run and use a quorum-certified settlement committee")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a wallet holding a new account key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from a seed instead of the OS generator.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Generate authority keys, the Primary key and the committee file.
    Committee {
        #[arg(long)]
        size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 9000)]
        base_port: u16,
        #[arg(long, default_value_t = 1)]
        shards: u32,
    },
    /// Serve shards of one authority until interrupted.
    RunAuthority {
        #[arg(long)]
        committee: PathBuf,
        /// Authority key file written by `committee`.
        #[arg(long)]
        key: PathBuf,
        /// Shards to serve, e.g. `0..2`, `0..=3` or `1,3`; default all.
        #[arg(long)]
        shards: Option<String>,
        /// Write shard dumps here periodically and on exit.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        dump_interval_secs: u64,
    },
    /// Credit an account from the Primary ledger.
    Fund {
        #[arg(long)]
        committee: PathBuf,
        #[command(flatten)]
        ledger: Ledger,
        /// Recipient address, hex.
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: u64,
        /// Also record the credit in this wallet.
        #[arg(long)]
        wallet: Option<PathBuf>,
    },
    /// Pay from a wallet, then settle at the committee.
    Transfer {
        #[command(flatten)]
        wallet: Wallet,
        /// Recipient address, hex.
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: u64,
        /// The recipient is a Primary ledger address.
        #[arg(long)]
        to_primary: bool,
        /// Save the certificate, e.g. for `redeem`.
        #[arg(long)]
        certificate_out: Option<PathBuf>,
    },
    /// Collect incoming payments and show the balance at each authority.
    QueryBalance {
        #[command(flatten)]
        wallet: Wallet,
    },
    /// Pay out a certificate addressed to a Primary account.
    Redeem {
        #[command(flatten)]
        ledger: Ledger,
        #[arg(long)]
        certificate: PathBuf,
    },
    /// Check shard dumps against the Primary snapshot.
    Audit {
        #[arg(long)]
        dumps: PathBuf,
        #[arg(long)]
        primary: PathBuf,
        /// JSON report output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Every cross-shard credit has landed; demand exact balances.
        #[arg(long)]
        quiescent: bool,
    },
    /// Time creating and checking orders, votes and certificates.
    Microbench {
        #[arg(long, default_value_t = 10)]
        authorities: usize,
        #[arg(long, default_value_t = 500)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure throughput and latency of one phase.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Ledger {
    #[arg(long)]
    primary_key: PathBuf,
    /// Primary snapshot, updated in place.
    #[arg(long)]
    primary: PathBuf,
}

#[derive(Args)]
struct Wallet {
    #[arg(long)]
    committee: PathBuf,
    #[arg(long)]
    wallet: PathBuf,
    /// Primary snapshot to read this account's credits from.
    #[arg(long)]
    primary: Option<PathBuf>,
}

impl From<Wallet> for WalletArgs {
    fn from(w: Wallet) -> Self {
        WalletArgs {
            committee: w.committee,
            wallet: w.wallet,
            primary: w.primary,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Committee file of a running deployment; without it a committee is
    /// started in this process.
    #[arg(long)]
    committee: Option<PathBuf>,
    /// Committee size for a local run.
    #[arg(long, default_value_t = 4)]
    authorities: usize,
    /// Receiver of the single-authority phases.
    #[arg(long, default_value_t = 0)]
    authority: usize,
    #[arg(long, default_value_t = 1)]
    shards: u32,
    #[arg(long, default_value_t = 0)]
    base_port: u16,
    #[arg(long, default_value_t = 10_000)]
    load: usize,
    #[arg(long, default_value_t = 1_000)]
    in_flight: usize,
    #[arg(long, value_enum, default_value_t = Phase::Confirmations)]
    phase: Phase,
    #[arg(long, value_enum, default_value_t = Wait::FirstQuorum)]
    wait_mode: Wait,
    #[arg(long)]
    csv_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crash the last this many authorities of a local committee.
    #[arg(long, default_value_t = 0)]
    crashed: usize,
    /// Datagram loss probability injected at the client.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Shortest retransmission wait.
    #[arg(long, default_value_t = 200)]
    retry_ms: u64,
}

fn run_bench(args: BenchArgs) -> Result<String> {
    let defaults = BenchConfig::default();
    let config = BenchConfig {
        target: match args.committee {
            Some(committee) => Target::Remote { committee },
            None => Target::Local {
                base_port: args.base_port,
            },
        },
        committee_size: args.authorities,
        shards: args.shards,
        load: args.load,
        in_flight: args.in_flight,
        phase: args.phase,
        wait_mode: args.wait_mode,
        seed: args.seed,
        authority: args.authority,
        crashed: args.crashed,
        transport: quorumpay_net::transport::TransportConfig {
            retry_interval: Duration::from_millis(args.retry_ms),
            loss: args.loss,
            seed: args.seed,
            ..defaults.transport
        },
    };
    if let Target::Remote { committee } = &config.target {
        // The committee file decides the size.
        let size = files::load_committee(committee)?.authorities.len();
        return finish_bench(BenchConfig {
            committee_size: size,
            ..config
        }, args.csv_out);
    }
    finish_bench(config, args.csv_out)
}

fn finish_bench(config: BenchConfig, csv_out: Option<PathBuf>) -> Result<String> {
    let report = bench::run(&config)?;
    if !report.is_sound() {
        anyhow::bail!("run did not settle correctly; numbers withheld\n{report}");
    }
    if let Some(path) = csv_out {
        bench::append_csv(&path, &[report.csv_row()])?;
    }
    Ok(report.to_string())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("starting the runtime")
}

async fn serve(servers: commands::AuthorityServers, dump_dir: Option<PathBuf>, interval: Duration) -> Result<()> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut terminate = signal(SignalKind::terminate())?;
    let mut tick = tokio::time::interval(interval.max(Duration::from_secs(1)));
    tick.tick().await;
    loop {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => break,
            _ = terminate.recv() => break,
            _ = tick.tick() => {
                if let Some(dir) = &dump_dir {
                    servers.write_dumps(dir).await?;
                }
            }
        }
    }
    if let Some(dir) = &dump_dir {
        let n = servers.write_dumps(dir).await?;
        println!("wrote {n} dumps to {}", dir.display());
    }
    for (_, handle) in servers.shards {
        handle.shutdown();
    }
    Ok(())
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Keygen { out, seed, force } => commands::keygen(&out, seed, force),
        Command::Committee {
            size,
            out,
            seed,
            host,
            base_port,
            shards,
        } => commands::committee(
            &out,
            &CommitteeSpec {
                size,
                seed,
                host,
                base_port,
                shards,
            },
        ),
        Command::RunAuthority {
            committee,
            key,
            shards,
            dump_dir,
            dump_interval_secs,
        } => {
            let rt = runtime()?;
            let servers = commands::start_authority(&committee, &key, shards.as_deref())?;
            for (shard, address) in servers.addresses() {
                println!("authority {} shard {shard} listening on {address}", &servers.name[..16]);
            }
            rt.block_on(serve(servers, dump_dir, Duration::from_secs(dump_interval_secs)))?;
            Ok(String::new())
        }
        Command::Fund {
            committee,
            ledger,
            to,
            amount,
            wallet,
        } => {
            let to = files::parse_address(&to)?;
            let ledger = LedgerArgs {
                primary_key: ledger.primary_key,
                primary: ledger.primary,
            };
            runtime()?.block_on(commands::fund(&committee, &ledger, to, amount, wallet.as_deref()))
        }
        Command::Transfer {
            wallet,
            to,
            amount,
            to_primary,
            certificate_out,
        } => {
            let args = TransferArgs {
                wallet: wallet.into(),
                to: files::parse_address(&to)?,
                amount,
                to_primary,
                certificate_out,
            };
            runtime()?.block_on(commands::transfer(&args))
        }
        Command::QueryBalance { wallet } => runtime()?.block_on(commands::query_balance(&wallet.into())),
        Command::Redeem {
            ledger,
            certificate,
        } => commands::redeem(
            &LedgerArgs {
                primary_key: ledger.primary_key,
                primary: ledger.primary,
            },
            &certificate,
        ),
        Command::Audit {
            dumps,
            primary,
            report,
            quiescent,
        } => {
            let result = commands::audit_dir(&dumps, &primary, report.as_deref(), quiescent)?;
            if result.is_clean() {
                Ok(result.to_string())
            } else {
                anyhow::bail!("{result}")
            }
        }
        Command::Microbench {
            authorities,
            runs,
            seed,
        } => Ok(microbench::run(authorities, runs, seed)?.to_string()),
        Command::Bench(args) => run_bench(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
