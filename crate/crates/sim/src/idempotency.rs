// SPDX-License-Identifier: Apache-2.0

//! Replay checks on live traffic. A sampled message is applied once and
//! twice to two copies of the receiving shard; both copies must end with
//! identical state and the replay must get the first answer back.

use crate::authority::{Request, Response, SimAuthority};
use crate::config::SimConfig;
use crate::engine::Sim;
use crate::workload::spawn_workload;
use quorumpay_core::authority::{AuthorityState, SyncInbox};
use quorumpay_core::messages::{CrossShardUpdate, SignedSyncOrder};
use quorumpay_core::Result;
use std::collections::BTreeMap;

/// Handler names, as counted in [`IdempotencyReport::checked`].
pub const HANDLERS: [&str; 6] = ["transfer", "confirm", "query", "sync", "feed", "cross_shard"];

#[derive(Clone, Debug, Default)]
pub struct IdempotencyReport {
    pub checked: BTreeMap<&'static str, usize>,
    pub violations: Vec<String>,
}

impl IdempotencyReport {
    /// Fewest checks made for any handler.
    pub fn min_checked(&self) -> usize {
        HANDLERS
            .iter()
            .map(|h| self.checked.get(h).copied().unwrap_or(0))
            .min()
            .unwrap_or(0)
    }
}

pub(crate) struct Probe {
    quota: usize,
    report: IdempotencyReport,
}

type Apply<'a> = dyn Fn(&mut AuthorityState, &mut SyncInbox) -> Result<Response> + 'a;

impl Probe {
    pub(crate) fn new(quota: usize) -> Self {
        Probe {
            quota,
            report: IdempotencyReport::default(),
        }
    }

    fn wants(&self, handler: &str) -> bool {
        self.report.checked.get(handler).copied().unwrap_or(0) < self.quota
    }

    fn check(&mut self, handler: &'static str, state: &AuthorityState, inbox: &SyncInbox, apply: &Apply<'_>) {
        let (mut s1, mut i1) = (state.clone(), inbox.clone());
        let once = apply(&mut s1, &mut i1);
        let (mut s2, mut i2) = (state.clone(), inbox.clone());
        let _ = apply(&mut s2, &mut i2);
        let again = apply(&mut s2, &mut i2);
        *self.report.checked.entry(handler).or_default() += 1;
        if s1.dump_bytes() != s2.dump_bytes() {
            self.report
                .violations
                .push(format!("{handler}: state differs after a replay"));
        } else if once != again {
            self.report
                .violations
                .push(format!("{handler}: replay answered {again:?}, first answer {once:?}"));
        }
    }

    pub(crate) fn request(&mut self, authority: &SimAuthority, request: &Request) {
        let handler = request.tag();
        if !self.wants(handler) {
            return;
        }
        let shard = authority.shard_of(&request.address()) as usize;
        let apply = |state: &mut AuthorityState, inbox: &mut SyncInbox| match request {
            Request::Transfer(o) => state.handle_transfer_order(o.clone()).map(Response::Vote),
            Request::Confirm(c) => state
                .handle_confirmation_order(c.clone())
                .map(|(info, _)| Response::Info(info)),
            Request::Query(q) => state.handle_account_info_query(q).map(Response::Info),
            Request::Sync(_, s) => inbox.offer(state, s).map(|()| Response::Done),
        };
        self.check(handler, &authority.shards[shard], &authority.inboxes[shard], &apply);
    }

    pub(crate) fn cross_shard(&mut self, authority: &SimAuthority, update: &CrossShardUpdate) {
        if !self.wants("cross_shard") {
            return;
        }
        let shard = update.shard_id as usize;
        let apply = |state: &mut AuthorityState, _: &mut SyncInbox| {
            state
                .handle_cross_shard_commit(update.certificate.clone())
                .map(|()| Response::Done)
        };
        self.check("cross_shard", &authority.shards[shard], &authority.inboxes[shard], &apply);
    }

    pub(crate) fn feed(&mut self, authority: &SimAuthority, order: &SignedSyncOrder) {
        if !self.wants("feed") {
            return;
        }
        let shard = authority.shard_of(&order.order.recipient) as usize;
        let apply =
            |state: &mut AuthorityState, inbox: &mut SyncInbox| inbox.offer(state, order).map(|()| Response::Done);
        self.check("feed", &authority.shards[shard], &authority.inboxes[shard], &apply);
    }
}

/// Probes honest deliveries under the workload of `config`, running
/// further seeds until each handler has `per_handler` checks. Gives up
/// after `max_runs` runs.
pub fn idempotency_suite(config: SimConfig, per_handler: usize, max_runs: usize) -> IdempotencyReport {
    let mut total = IdempotencyReport::default();
    for run in 0..max_runs as u64 {
        let config = SimConfig {
            seed: config.seed.wrapping_add(run),
            ..config.clone()
        };
        let mut probe = Probe::new(per_handler);
        probe.report.checked = total.checked.clone();
        let mut sim = Sim::with_probe(config, Some(probe)).expect("valid config");
        spawn_workload(&sim);
        sim.settle();
        let report = sim.take_probe().map(|p| p.report).unwrap_or_default();
        total.checked = report.checked;
        total.violations.extend(report.violations);
        if total.min_checked() >= per_handler {
            break;
        }
    }
    total
}

/// A workload that exercises every handler often.
pub fn probe_workload(seed: u64) -> SimConfig {
    let mut config = SimConfig {
        seed,
        record_events: false,
        ..SimConfig::default()
    };
    let w = &mut config.workload;
    w.operations = 800;
    w.fund_weight = 4;
    w.transfer_weight = 8;
    w.query_weight = 3;
    w.relay_weight = 2;
    config
}
