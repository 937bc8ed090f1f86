// SPDX-License-Identifier: Apache-2.0

//! Commands behind the `quorumpay` binary, usable as a library by tests and
//! scripts.

pub mod bench;
pub mod commands;
pub mod files;
pub mod microbench;
pub mod stats;
