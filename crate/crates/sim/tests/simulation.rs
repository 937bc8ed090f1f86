use quorumpay_core::Error;
use quorumpay_sim::trace::{LedgerEntry, OrderRecord};
use quorumpay_sim::{
    check_invariants, idempotency_suite, probe_workload, run_simulation, Behavior,
    ByzantineStrategy, Invariant, OpKind, OpResult, ScriptedOp, SimConfig, Trace,
};

fn config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        ..SimConfig::default()
    }
}

fn scripted(faults: Vec<Behavior>, transfers: usize) -> SimConfig {
    let mut c = config(21);
    c.faults = faults;
    c.workload.users = 5;
    c.workload.script = (0..transfers)
        .map(|t| ScriptedOp::Transfer {
            from: t % 5,
            to: (t + 2) % 5,
            amount: 5,
        })
        .collect();
    c
}

#[test]
fn same_seed_gives_identical_trace() {
    let mut c = config(9);
    c.workload.operations = 200;
    let a = run_simulation(&c);
    let b = run_simulation(&c);
    assert!(!a.events.is_empty());
    assert_eq!(a.dump(), b.dump());
    assert_eq!(a.stats, b.stats);
    c.seed = 10;
    assert_ne!(run_simulation(&c).dump(), a.dump());
}

#[test]
fn dump_has_one_line_per_event() {
    let mut c = config(2);
    c.workload.operations = 20;
    let trace = run_simulation(&c);
    let dump = trace.dump();
    assert_eq!(dump.lines().count(), trace.events.len());
    let first = dump.lines().next().unwrap();
    assert_eq!(first.split(' ').count(), 5, "{first}");
}

#[test]
fn honest_random_trace_passes_every_invariant() {
    let trace = run_simulation(&config(1));
    assert!(trace.operations() >= 900, "{}", trace.operations());
    assert!(trace.failures().is_empty(), "{:?}", trace.failures());
    assert!(trace.stats.dropped > 0 && trace.stats.duplicated > 0);
    let report = check_invariants(&trace);
    assert!(report.passed(), "{report}");
    for r in &report.results {
        assert!(r.checks > 0, "{:?} never checked", r.invariant);
    }
}

#[test]
fn sign_anything_authority_cannot_break_safety() {
    let mut c = config(3);
    c.faults = vec![Behavior::Byzantine(ByzantineStrategy::SignAnything)];
    c.workload.equivocate_weight = 2;
    let trace = run_simulation(&c);
    let report = check_invariants(&trace);
    assert!(report.passed(), "{report}");
    assert!(trace.count(OpKind::Equivocate, |r| *r != OpResult::Skipped) > 0);
}

/// Appends votes from `signers` for an order conflicting with the first
/// certified order at sequence 0. Returns the event index of the forgery.
fn forge_conflicting_votes(trace: &mut Trace, signers: &[usize]) -> u64 {
    let original = trace
        .orders
        .iter()
        .find(|o| o.sequence == 0)
        .expect("some order at sequence 0")
        .clone();
    let forged = OrderRecord {
        amount: original.amount + 1,
        digest: [0xee; 32],
        ..original
    };
    trace.orders.push(forged);
    let id = (trace.orders.len() - 1) as u32;
    let event = trace.ledger.iter().map(LedgerEntry::event).max().unwrap() + 1;
    for &authority in signers {
        trace.ledger.push(LedgerEntry::Vote {
            event,
            authority,
            order: id,
            balance: Some(1 << 40),
        });
    }
    event
}

#[test]
fn oracle_flags_a_second_certified_order_at_the_forged_event() {
    let mut c = config(4);
    c.workload.operations = 100;
    let mut trace = run_simulation(&c);
    assert!(check_invariants(&trace).passed());
    let event = forge_conflicting_votes(&mut trace, &[0, 1, 2]);
    let report = check_invariants(&trace);
    let violation = report
        .get(Invariant::CertificateUniqueness)
        .violation
        .as_ref()
        .expect("uniqueness must fail");
    assert_eq!(violation.event, event);
}

#[test]
fn oracle_flags_a_double_confirmation_at_sequence_zero() {
    let mut c = config(5);
    c.workload.operations = 100;
    let mut trace = run_simulation(&c);
    let forged_event = forge_conflicting_votes(&mut trace, &[]);
    let forged = (trace.orders.len() - 1) as u32;
    let sender = trace.orders[forged as usize].sender;
    // Authority 1 now claims to have settled the forged order at seq 0.
    let last = trace.checkpoints.last_mut().unwrap();
    last.event = forged_event;
    last.authorities[1].accounts.get_mut(&sender).unwrap().confirmed[0] = forged;
    let report = check_invariants(&trace);
    let violation = report
        .get(Invariant::CertificateUniqueness)
        .violation
        .as_ref()
        .expect("uniqueness must fail");
    assert_eq!(violation.event, forged_event);
    assert!(violation.detail.contains("second order"), "{}", violation.detail);
}

#[test]
fn one_crashed_authority_still_certifies_every_scripted_transfer() {
    let trace = run_simulation(&scripted(vec![Behavior::Crashed], 100));
    assert_eq!(trace.count(OpKind::Transfer, |r| *r == OpResult::Done), 100);
    assert!(check_invariants(&trace).passed());
}

#[test]
fn two_crashed_authorities_make_quorum_unreachable() {
    let trace = run_simulation(&scripted(vec![Behavior::Crashed, Behavior::Crashed], 1));
    let failed = trace.count(OpKind::Transfer, |r| {
        *r == OpResult::Failed(Error::QuorumUnreachable)
    });
    assert_eq!(failed, 1, "{:?}", trace.outcomes);
    assert!(check_invariants(&trace).passed());
}

#[test]
fn conservation_holds_at_quiescent_points_without_redemptions() {
    let mut c = config(6);
    c.workload.redeem_weight = 0;
    c.workload.replay_redeem_weight = 0;
    let trace = run_simulation(&c);
    assert!(trace.quiescent_points() > 10);
    let report = check_invariants(&trace);
    let conservation = report.get(Invariant::Conservation);
    assert!(conservation.violation.is_none(), "{report}");
    assert!(conservation.checks >= 4 * trace.quiescent_points() as u64);
}

#[test]
fn replayed_redemptions_are_refused() {
    let mut c = config(7);
    c.workload.redeem_weight = 4;
    c.workload.replay_redeem_weight = 4;
    let trace = run_simulation(&c);
    assert!(trace.count(OpKind::Redeem, |r| *r == OpResult::Done) > 10);
    assert!(trace.count(OpKind::ReplayRedeem, |r| *r == OpResult::Done) > 10);
    assert_eq!(trace.count(OpKind::ReplayRedeem, |r| matches!(r, OpResult::Failed(_))), 0);
    assert!(check_invariants(&trace).passed());
}

#[test]
fn every_handler_is_idempotent_over_a_thousand_replays() {
    let report = idempotency_suite(probe_workload(11), 1000, 20);
    assert!(report.violations.is_empty(), "{:?}", report.violations);
    assert!(report.min_checked() >= 1000, "{:?}", report.checked);
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = std::env::temp_dir().join(format!("sim-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("sim.toml");
    let mut c = config(8);
    c.faults = vec![Behavior::Honest, Behavior::Byzantine(ByzantineStrategy::DelayMax)];
    std::fs::write(&path, c.to_toml()).unwrap();
    assert_eq!(SimConfig::load(&path).unwrap(), c);
    std::fs::remove_dir_all(dir).unwrap();
}
