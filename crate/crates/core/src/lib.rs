// SPDX-License-Identifier: Apache-2.0

//! Settlement of pre-funded accounts by a committee of `3f + 1` authorities,
//! one consistent broadcast per account sequence number.

pub mod audit;
pub mod authority;
pub mod base;
pub mod client;
pub mod committee;
pub mod error;
pub mod local;
pub mod messages;
pub mod primary;
pub mod protocol;
pub mod wire;

pub use base::*;
pub use error::{Error, Result};
