// SPDX-License-Identifier: Apache-2.0

use crate::base::{Address, SequenceNumber, ShardId};
use thiserror::Error;

/// Every failure a component can report. Errors travel over the wire inside
/// `ErrorResponse`, so variants carry only plain data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Error)]
pub enum Error {
    // Keys, signatures and certificates.
    #[error("malformed key: expected 32 bytes, got {0}")]
    MalformedKey(usize),
    #[error("invalid signature")]
    InvalidSignature,
    #[error("signing key does not match the sender address")]
    SenderMismatch,
    #[error("user data too large: {0} bytes")]
    UserDataTooLarge(usize),
    #[error("quorum not reached: {got} distinct signers, {needed} needed")]
    QuorumNotReached { got: usize, needed: usize },
    #[error("signature from an authority outside the committee")]
    UnknownAuthority,
    #[error("partial signatures reference different orders")]
    CertificateMismatch,
    #[error("authority signed the certificate twice")]
    DuplicateSigner,
    #[error("invalid committee: {0}")]
    InvalidCommittee(String),
    #[error("amount overflow")]
    AmountOverflow,

    // Authority handlers.
    #[error("wrong shard: object belongs to shard {expected}, this is shard {actual}")]
    WrongShard { expected: ShardId, actual: ShardId },
    #[error("unknown sender account")]
    UnknownSenderAccount,
    #[error("a different transfer order is already pending")]
    PreviousTransferPending,
    #[error("unexpected sequence number: expected {expected}, got {received}")]
    UnexpectedSequence {
        expected: SequenceNumber,
        received: SequenceNumber,
    },
    #[error("insufficient funds: balance {balance}, amount {amount}")]
    InsufficientFunds { balance: i128, amount: u64 },
    #[error("transfer amount must be positive")]
    InvalidAmount,
    #[error("missing earlier confirmations: next expected sequence is {expected}")]
    MissingEarlierConfirmations { expected: SequenceNumber },
    #[error("cross-shard commit to a Primary recipient")]
    PrimaryRecipient,
    #[error("synchronization order gap: expected index {expected}, got {received}")]
    SyncOrderGap { expected: u64, received: u64 },
    #[error("unknown account {0}")]
    UnknownAccount(Address),

    // Primary ledger.
    #[error("certificate already redeemed")]
    AlreadyRedeemed,
    #[error("certificate recipient is not a Primary address")]
    NotPrimaryRecipient,
    #[error("redemption would make the contract insolvent")]
    InsolvencyDetected,

    // Client and transport.
    #[error("a quorum of authorities could not be reached")]
    QuorumUnreachable,
    #[error("certificate {sequence} of {sender} is unavailable")]
    Unrepairable {
        sender: Address,
        sequence: SequenceNumber,
    },
    #[error("request timed out")]
    Timeout,
    #[error("client already has a pending transfer order")]
    PendingOrderExists,
    #[error("authority is ahead of the client: next sequence {0}")]
    ClientOutOfDate(SequenceNumber),

    // Wire format.
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("datagram of {0} bytes exceeds the MTU budget")]
    OversizedDatagram(usize),
    #[error("storage error: {0}")]
    Storage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $err:expr) => {
        if !($cond) {
            return Err($err);
        }
    };
}
pub(crate) use ensure;
