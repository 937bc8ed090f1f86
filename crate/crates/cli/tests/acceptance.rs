// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance run. Prints one `criterion N: PASS|FAIL` line per
//! criterion. Exits nonzero on a FAIL only with `ACCEPTANCE_STRICT=1`, since
//! some criteria depend on the host (core count, a CPU per authority).
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run.

use quorumpay_cli::bench::{self, BenchConfig, BenchReport, Phase, Target, Wait};
use quorumpay_cli::microbench::{self, Operation};
use quorumpay_core::client::ClientConfig;
use quorumpay_core::messages::{RecipientAddress, TransferOrder};
use quorumpay_core::{Amount, Error, KeyPair, SequenceNumber, UserData};
use quorumpay_net::deploy::{DeploymentConfig, LocalDeployment};
use quorumpay_net::transport::{DatagramTransport, RequestTransport, TransportConfig};
use quorumpay_sim::{
    check_invariants, enumerate_splits, idempotency_suite, probe_workload, recovery_scenario,
    run_simulation, zero_sequence_scenario, Behavior, ByzantineStrategy, Invariant, SimConfig,
};
use rand::SeedableRng;
use std::sync::Arc;
use std::time::{Duration, Instant};

type Verdict = (bool, String);

fn bench(config: BenchConfig) -> BenchReport {
    bench::run(&config).expect("bench runs")
}

fn local(phase: Phase) -> BenchConfig {
    BenchConfig {
        target: Target::Local { base_port: 0 },
        phase,
        ..BenchConfig::default()
    }
}

/// `|a - b|` relative to `b`.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut ops = usize::MAX;
    for seed in 0..100u64 {
        let mut faults = vec![Behavior::Honest; 4];
        faults[(seed % 4) as usize] =
            Behavior::Byzantine(ByzantineStrategy::ALL[(seed % 5) as usize]);
        let mut config = SimConfig {
            seed,
            faults,
            record_events: false,
            ..SimConfig::default()
        };
        // Some draws find nothing to spend and never reach the network.
        config.workload.operations = 1_200;
        config.workload.equivocate_weight = 1;
        let trace = run_simulation(&config);
        ops = ops.min(trace.operations());
        let report = check_invariants(&trace);
        if let Some((invariant, v)) = report.first_violation() {
            failures.push(format!("seed {seed}: {} at {}: {}", invariant.name(), v.event, v.detail));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && ops >= 1_000 && elapsed < Duration::from_secs(300);
    (
        pass,
        format!(
            "100 traces, min {ops} ops, {} with violations, {:.1}s{}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first {f}")).unwrap_or_default()
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut checks = 0;
    let mut points = 0;
    for seed in 0..10u64 {
        let mut config = SimConfig {
            seed,
            record_events: false,
            ..SimConfig::default()
        };
        config.workload.redeem_weight = 0;
        config.workload.replay_redeem_weight = 0;
        let trace = run_simulation(&config);
        points += trace.quiescent_points();
        let report = check_invariants(&trace);
        let conservation = report.get(Invariant::Conservation);
        if let Some(v) = &conservation.violation {
            return (false, format!("seed {seed}: {}", v.detail));
        }
        checks += conservation.checks;
    }
    (
        checks > 0 && points > 0,
        format!("10 honest traces, {points} quiescent points, {checks} per-authority sums exact"),
    )
}

fn criterion_3() -> Verdict {
    let report = idempotency_suite(probe_workload(11), 1_000, 20);
    (
        report.violations.is_empty() && report.min_checked() >= 1_000,
        format!(
            "{} handlers, fewest checks {}, {} violations",
            report.checked.len(),
            report.min_checked(),
            report.violations.len()
        ),
    )
}

/// One certification attempt against a committee with `crashed` members
/// down, under a short retry budget.
fn certify_with_crashed(size: usize, crashed: usize) -> Result<(), Error> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async move {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let sender = KeyPair::generate(&mut rng);
        let deployment = LocalDeployment::start(&DeploymentConfig {
            committee_size: size,
            funding: vec![(sender.address(), 10)],
            ..DeploymentConfig::default()
        })
        .unwrap();
        for i in size - crashed..size {
            deployment.set_crashed(i, true);
        }
        let transport = DatagramTransport::bind(
            "127.0.0.1:0".parse().unwrap(),
            TransportConfig {
                retry_interval: Duration::from_millis(50),
                max_attempts: 3,
                ..TransportConfig::default()
            },
        )
        .await
        .unwrap();
        let transport: Arc<dyn RequestTransport> = Arc::new(transport);
        let driver = deployment.driver(
            transport,
            ClientConfig {
                retry_interval: Duration::from_millis(50),
                max_attempts: 2,
                ..ClientConfig::default()
            },
        );
        let order = TransferOrder::new(
            &sender,
            sender.address(),
            RecipientAddress::Offchain(KeyPair::generate(&mut rng).address()),
            Amount(1),
            SequenceNumber(0),
            UserData::default(),
        )
        .unwrap();
        let result = driver.certify(&order, &[]).await.map(|_| ());
        deployment.shutdown();
        result
    })
}

fn criterion_4() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for (size, f) in [(4usize, 1usize), (10, 3)] {
        let run = |crashed| {
            bench(BenchConfig {
                committee_size: size,
                crashed,
                load: 1_000,
                in_flight: 1,
                seed: 4,
                ..local(Phase::EndToEnd)
            })
        };
        let healthy = run(0);
        let degraded = run(f);
        let settled = degraded.is_sound() && degraded.completed == 1_000;
        let drift = rel(degraded.p50_ms, healthy.p50_ms);
        let unreachable = certify_with_crashed(size, f + 1);
        pass &= settled
            && healthy.is_sound()
            && drift < 0.20
            && unreachable == Err(Error::QuorumUnreachable);
        notes.push(format!(
            "N={size}: {} of 1000 settled with {f} down, p50 {:.3} vs {:.3} ms ({:.0}%), {} down -> {:?}",
            degraded.completed,
            degraded.p50_ms,
            healthy.p50_ms,
            drift * 100.0,
            f + 1,
            unreachable
        ));
    }
    (pass, notes.join("; "))
}

fn confirmations(shards: u32, load: usize, in_flight: usize) -> BenchReport {
    bench(BenchConfig {
        shards,
        load,
        in_flight,
        seed: 5,
        ..local(Phase::Confirmations)
    })
}

fn criterion_5() -> Verdict {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let one = confirmations(1, 20_000, 1_000).tx_per_s;
    let four = confirmations(4, 20_000, 1_000).tx_per_s;
    let at_cores = confirmations(cores as u32, 20_000, 1_000).tx_per_s;
    let beyond = confirmations(cores as u32 + 1, 20_000, 1_000).tx_per_s;
    let plateau = beyond < at_cores * 1.15;
    let pass = cores >= 4 && four >= 2.5 * one && plateau;
    (
        pass,
        format!(
            "{cores} cores{}; 1 shard {one:.0} tx/s, 4 shards {four:.0} tx/s ({:.2}x); {cores} vs {} shards {at_cores:.0} vs {beyond:.0} tx/s",
            if cores < 4 { " (needs >= 4)" } else { "" },
            four / one,
            cores + 1
        ),
    )
}

fn criterion_6() -> Verdict {
    let report = microbench::run(10, 500, 6).expect("microbench runs");
    let cost = |op| report.row(op).mean_us;
    let costliest = Operation::ALL
        .iter()
        .all(|&op| cost(op) <= cost(Operation::CheckCertificate));
    let ratio_to_order = cost(Operation::CheckCertificate) / cost(Operation::CheckOrder);
    let implied = report.implied_confirmation_rate();
    let measured = confirmations(1, 50_000, 1_000).tx_per_s;
    let agreement = implied / measured;
    (
        costliest && ratio_to_order >= 2.0 && (0.5..=2.0).contains(&agreement),
        format!(
            "check certificate {:.1} us, check order {:.1} us ({ratio_to_order:.2}x), costliest {costliest}; implied {implied:.0} tx/s vs measured {measured:.0} tx/s",
            cost(Operation::CheckCertificate),
            cost(Operation::CheckOrder)
        ),
    )
}

fn criterion_7() -> Verdict {
    let t10 = confirmations(1, 10_000, 10).tx_per_s;
    let t1k = confirmations(1, 20_000, 1_000).tx_per_s;
    let t10k = confirmations(1, 40_000, 10_000).tx_per_s;
    let drift = rel(t10k, t1k);
    // Visibly lower: at least 10% under the saturated figure.
    let lower = t10 < 0.9 * t1k.min(t10k);
    (
        drift < 0.25 && lower,
        format!(
            "in-flight 10/1000/10000: {t10:.0}/{t1k:.0}/{t10k:.0} tx/s; 1000 vs 10000 {:.0}%, 10 under-saturated {lower}",
            drift * 100.0
        ),
    )
}

fn criterion_8() -> Verdict {
    let run = |size| {
        bench(BenchConfig {
            committee_size: size,
            load: 1_000,
            in_flight: 1,
            wait_mode: Wait::AllAuthorities,
            seed: 8,
            ..local(Phase::EndToEnd)
        })
    };
    let small = run(4).certify_p50_ms.unwrap_or(f64::NAN);
    let large = run(10).certify_p50_ms.unwrap_or(f64::NAN);
    let drift = rel(large, small);
    (
        drift < 0.30,
        format!("certification p50 N=4 {small:.3} ms, N=10 {large:.3} ms ({:.0}%)", drift * 100.0),
    )
}

fn criterion_9() -> Verdict {
    let splits = enumerate_splits(4);
    let unsafe_splits = splits.iter().filter(|s| !s.safe()).count();
    let even: Vec<_> = splits
        .iter()
        .filter(|s| s.byzantine.is_none() && s.first.iter().filter(|&&w| w == 0).count() == 2)
        .collect();
    let locked = even.iter().all(|s| s.locked && s.certified.is_none());
    (
        unsafe_splits == 0 && !even.is_empty() && locked,
        format!(
            "{} splits, {unsafe_splits} with two certified orders, {} even honest splits all locked {locked}",
            splits.len(),
            even.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let r = recovery_scenario(3, 50);
    let recovery_ok = check_invariants(&r.trace).passed();
    let z = zero_sequence_scenario(4, 30);
    let zero_ok = check_invariants(&z.trace).passed();
    (
        r.certified_while_away == 50
            && r.lagging_before
            && r.parity
            && r.fresh_transfer
            && recovery_ok
            && z.certified == z.attempted
            && z.repaired
            && z.replay_is_noop
            && zero_ok,
        format!(
            "recovery: {} missed, parity {}, fresh transfer {}; zero-sequence: {}/{} certified, repaired {}",
            r.certified_while_away, r.parity, r.fresh_transfer, z.certified, z.attempted, z.repaired
        ),
    )
}

fn criterion_11() -> Verdict {
    let mut config = BenchConfig {
        load: 1_000,
        in_flight: 100,
        seed: 11,
        ..local(Phase::EndToEnd)
    };
    config.transport.loss = 0.3;
    config.transport.seed = 11;
    let report = bench(config);
    let clean = report.audit.as_ref().is_some_and(|a| a.is_clean());
    (
        report.completed == 1_000 && report.failed == 0 && clean,
        format!(
            "{} of 1000 completed, {} retransmissions, audit clean {clean}",
            report.completed, report.retransmissions
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let criteria: [fn() -> Verdict; 11] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
    ];
    let mut failed = 0;
    for (i, check) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let (pass, detail) = check();
        failed += usize::from(!pass);
        println!("criterion {n}: {}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
