// SPDX-License-Identifier: Apache-2.0

//! Networking for authorities and clients: framed requests over UDP with
//! client retransmission, a TCP fallback, per-shard servers and the
//! authenticated channel between shards of one authority.

pub mod channel;
pub mod deploy;
pub mod framing;
pub mod server;
pub mod transport;
