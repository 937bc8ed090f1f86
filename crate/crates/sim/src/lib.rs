// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulation of a committee, its clients and the Primary.
//!
//! Everything runs on one thread in virtual time. Authorities use the real
//! shard handlers; clients are the real [`quorumpay_core::client`] code
//! talking through a simulated lossy network. A run yields a [`Trace`] that
//! [`check_invariants`] judges from first principles.

pub mod authority;
pub mod config;
mod engine;
pub mod equivocation;
pub mod idempotency;
pub mod oracle;
pub mod scenarios;
pub mod trace;
mod workload;

pub use config::{Behavior, ByzantineStrategy, ConfigError, NetworkModel, ScriptedOp, SimConfig};
pub use engine::{Sim, SimHandle};
pub use equivocation::{enumerate_splits, SplitOutcome};
pub use idempotency::{idempotency_suite, probe_workload, IdempotencyReport};
pub use oracle::{check_invariants, Invariant, InvariantReport};
pub use scenarios::{equivocation_scenario, recovery_scenario, zero_sequence_scenario};
pub use trace::{OpKind, OpResult, Trace};
pub use workload::run_simulation;
