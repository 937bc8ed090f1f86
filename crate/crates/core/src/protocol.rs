// SPDX-License-Identifier: Apache-2.0

//! Network messages and their framing: `[version][tag][nonce][payload]`.

use crate::base::{Address, SequenceNumber, ShardId};
use crate::error::{Error, Result};
use crate::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, SignedSyncOrder,
    SignedTransferOrder, TransferOrder,
};
use crate::wire::{put_u64, put_var_bytes, Reader, Wire, FRAME_HEADER_LEN, PROTOCOL_VERSION};

/// Authenticated envelope on the channel between two shards of one authority.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InterShardEnvelope {
    pub source: ShardId,
    pub destination: ShardId,
    /// Per (source, destination) sequence number, starting at 1.
    pub sequence: u64,
    /// Encoded `WireMessage` carried by the channel.
    pub payload: Vec<u8>,
    pub mac: [u8; 32],
}

/// Cumulative acknowledgement: every envelope up to `sequence` was delivered.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InterShardAck {
    pub source: ShardId,
    pub destination: ShardId,
    pub sequence: u64,
    pub mac: [u8; 32],
}

/// Fragment of a response too large for one datagram.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chunk {
    pub total: u32,
    pub index: u32,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WireMessage {
    TransferOrderRequest(TransferOrder),
    SignedOrderResponse(SignedTransferOrder),
    ConfirmationRequest(CertifiedTransfer),
    AccountInfoRequest(AccountInfoQuery),
    AccountInfoResponse(AccountInfoResponse),
    CrossShardCommit(CertifiedTransfer),
    PrimarySyncOrder(SignedSyncOrder),
    ErrorResponse(Error),
    Ack,
    InterShard(InterShardEnvelope),
    InterShardAck(InterShardAck),
    Chunk(Chunk),
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::TransferOrderRequest(_) => 1,
            WireMessage::SignedOrderResponse(_) => 2,
            WireMessage::ConfirmationRequest(_) => 3,
            WireMessage::AccountInfoRequest(_) => 4,
            WireMessage::AccountInfoResponse(_) => 5,
            WireMessage::CrossShardCommit(_) => 6,
            WireMessage::PrimarySyncOrder(_) => 7,
            WireMessage::ErrorResponse(_) => 8,
            WireMessage::Ack => 9,
            WireMessage::InterShard(_) => 10,
            WireMessage::InterShardAck(_) => 11,
            WireMessage::Chunk(_) => 12,
        }
    }

    pub fn tag_name(&self) -> &'static str {
        match self {
            WireMessage::TransferOrderRequest(_) => "TransferOrderRequest",
            WireMessage::SignedOrderResponse(_) => "SignedOrderResponse",
            WireMessage::ConfirmationRequest(_) => "ConfirmationRequest",
            WireMessage::AccountInfoRequest(_) => "AccountInfoRequest",
            WireMessage::AccountInfoResponse(_) => "AccountInfoResponse",
            WireMessage::CrossShardCommit(_) => "CrossShardCommit",
            WireMessage::PrimarySyncOrder(_) => "PrimarySyncOrder",
            WireMessage::ErrorResponse(_) => "ErrorResponse",
            WireMessage::Ack => "Ack",
            WireMessage::InterShard(_) => "InterShard",
            WireMessage::InterShardAck(_) => "InterShardAck",
            WireMessage::Chunk(_) => "Chunk",
        }
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        match self {
            WireMessage::TransferOrderRequest(m) => m.encode_into(out),
            WireMessage::SignedOrderResponse(m) => m.encode_into(out),
            WireMessage::ConfirmationRequest(m) => m.encode_into(out),
            WireMessage::AccountInfoRequest(m) => m.encode_into(out),
            WireMessage::AccountInfoResponse(m) => m.encode_into(out),
            WireMessage::CrossShardCommit(m) => m.encode_into(out),
            WireMessage::PrimarySyncOrder(m) => m.encode_into(out),
            WireMessage::ErrorResponse(e) => e.encode_into(out),
            WireMessage::Ack => {}
            WireMessage::InterShard(m) => m.encode_into(out),
            WireMessage::InterShardAck(m) => m.encode_into(out),
            WireMessage::Chunk(m) => m.encode_into(out),
        }
    }

    fn decode_payload(tag: u8, r: &mut Reader<'_>) -> Result<Self> {
        Ok(match tag {
            1 => WireMessage::TransferOrderRequest(Wire::decode_from(r)?),
            2 => WireMessage::SignedOrderResponse(Wire::decode_from(r)?),
            3 => WireMessage::ConfirmationRequest(Wire::decode_from(r)?),
            4 => WireMessage::AccountInfoRequest(Wire::decode_from(r)?),
            5 => WireMessage::AccountInfoResponse(Wire::decode_from(r)?),
            6 => WireMessage::CrossShardCommit(Wire::decode_from(r)?),
            7 => WireMessage::PrimarySyncOrder(Wire::decode_from(r)?),
            8 => WireMessage::ErrorResponse(Wire::decode_from(r)?),
            9 => WireMessage::Ack,
            10 => WireMessage::InterShard(Wire::decode_from(r)?),
            11 => WireMessage::InterShardAck(Wire::decode_from(r)?),
            12 => WireMessage::Chunk(Wire::decode_from(r)?),
            t => return Err(Error::MalformedMessage(format!("unknown tag {t}"))),
        })
    }

    /// Message without the frame header, as carried inside envelopes.
    pub fn to_payload_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.tag()];
        self.encode_payload(&mut out);
        out
    }

    pub fn from_payload_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        let message = Self::decode_payload(tag, &mut r)?;
        r.finish()?;
        Ok(message)
    }
}

pub fn encode_frame(nonce: u64, message: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    out.push(PROTOCOL_VERSION);
    out.push(message.tag());
    put_u64(&mut out, nonce);
    message.encode_payload(&mut out);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<(u64, WireMessage)> {
    let nonce = decode_nonce(bytes)?;
    let mut r = Reader::new(&bytes[FRAME_HEADER_LEN..]);
    let message = WireMessage::decode_payload(bytes[1], &mut r)?;
    r.finish()?;
    Ok((nonce, message))
}

/// Validates the header and returns the nonce, so servers can answer
/// malformed payloads with a correlated error.
pub fn decode_nonce(bytes: &[u8]) -> Result<u64> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(Error::MalformedMessage("short frame".into()));
    }
    if bytes[0] != PROTOCOL_VERSION {
        return Err(Error::UnsupportedVersion(bytes[0]));
    }
    Ok(u64::from_le_bytes(bytes[2..10].try_into().unwrap()))
}

impl Wire for InterShardEnvelope {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.source.encode_into(out);
        self.destination.encode_into(out);
        self.sequence.encode_into(out);
        put_var_bytes(out, &self.payload);
        out.extend_from_slice(&self.mac);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(InterShardEnvelope {
            source: r.u32()?,
            destination: r.u32()?,
            sequence: r.u64()?,
            payload: r.var_bytes()?.to_vec(),
            mac: r.array()?,
        })
    }
}

impl Wire for InterShardAck {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.source.encode_into(out);
        self.destination.encode_into(out);
        self.sequence.encode_into(out);
        out.extend_from_slice(&self.mac);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(InterShardAck {
            source: r.u32()?,
            destination: r.u32()?,
            sequence: r.u64()?,
            mac: r.array()?,
        })
    }
}

impl Wire for Chunk {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.total.encode_into(out);
        self.index.encode_into(out);
        put_var_bytes(out, &self.data);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Chunk {
            total: r.u32()?,
            index: r.u32()?,
            data: r.var_bytes()?.to_vec(),
        })
    }
}

fn usize_wire(v: usize) -> u64 {
    v as u64
}

fn decode_usize(r: &mut Reader<'_>) -> Result<usize> {
    usize::try_from(r.u64()?).map_err(|_| Error::MalformedMessage("length overflow".into()))
}

/// Errors travel as a one-byte code followed by the variant's fields.
impl Wire for Error {
    fn encode_into(&self, out: &mut Vec<u8>) {
        use Error::*;
        match self {
            MalformedKey(n) => {
                out.push(1);
                usize_wire(*n).encode_into(out);
            }
            InvalidSignature => out.push(2),
            SenderMismatch => out.push(3),
            UserDataTooLarge(n) => {
                out.push(4);
                usize_wire(*n).encode_into(out);
            }
            QuorumNotReached { got, needed } => {
                out.push(5);
                usize_wire(*got).encode_into(out);
                usize_wire(*needed).encode_into(out);
            }
            UnknownAuthority => out.push(6),
            CertificateMismatch => out.push(7),
            DuplicateSigner => out.push(8),
            InvalidCommittee(s) => {
                out.push(9);
                s.encode_into(out);
            }
            AmountOverflow => out.push(10),
            WrongShard { expected, actual } => {
                out.push(11);
                expected.encode_into(out);
                actual.encode_into(out);
            }
            UnknownSenderAccount => out.push(12),
            PreviousTransferPending => out.push(13),
            UnexpectedSequence { expected, received } => {
                out.push(14);
                expected.encode_into(out);
                received.encode_into(out);
            }
            InsufficientFunds { balance, amount } => {
                out.push(15);
                out.extend_from_slice(&balance.to_le_bytes());
                amount.encode_into(out);
            }
            InvalidAmount => out.push(16),
            MissingEarlierConfirmations { expected } => {
                out.push(17);
                expected.encode_into(out);
            }
            PrimaryRecipient => out.push(18),
            SyncOrderGap { expected, received } => {
                out.push(19);
                expected.encode_into(out);
                received.encode_into(out);
            }
            UnknownAccount(a) => {
                out.push(20);
                a.encode_into(out);
            }
            AlreadyRedeemed => out.push(21),
            NotPrimaryRecipient => out.push(22),
            InsolvencyDetected => out.push(23),
            QuorumUnreachable => out.push(24),
            Unrepairable { sender, sequence } => {
                out.push(25);
                sender.encode_into(out);
                sequence.encode_into(out);
            }
            Timeout => out.push(26),
            PendingOrderExists => out.push(27),
            ClientOutOfDate(s) => {
                out.push(28);
                s.encode_into(out);
            }
            MalformedMessage(s) => {
                out.push(29);
                s.encode_into(out);
            }
            UnsupportedVersion(v) => {
                out.push(30);
                v.encode_into(out);
            }
            OversizedDatagram(n) => {
                out.push(31);
                usize_wire(*n).encode_into(out);
            }
            Storage(s) => {
                out.push(32);
                s.encode_into(out);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        use Error::*;
        Ok(match r.u8()? {
            1 => MalformedKey(decode_usize(r)?),
            2 => InvalidSignature,
            3 => SenderMismatch,
            4 => UserDataTooLarge(decode_usize(r)?),
            5 => QuorumNotReached {
                got: decode_usize(r)?,
                needed: decode_usize(r)?,
            },
            6 => UnknownAuthority,
            7 => CertificateMismatch,
            8 => DuplicateSigner,
            9 => InvalidCommittee(String::decode_from(r)?),
            10 => AmountOverflow,
            11 => WrongShard {
                expected: r.u32()?,
                actual: r.u32()?,
            },
            12 => UnknownSenderAccount,
            13 => PreviousTransferPending,
            14 => UnexpectedSequence {
                expected: SequenceNumber::decode_from(r)?,
                received: SequenceNumber::decode_from(r)?,
            },
            15 => InsufficientFunds {
                balance: r.i128()?,
                amount: r.u64()?,
            },
            16 => InvalidAmount,
            17 => MissingEarlierConfirmations {
                expected: SequenceNumber::decode_from(r)?,
            },
            18 => PrimaryRecipient,
            19 => SyncOrderGap {
                expected: r.u64()?,
                received: r.u64()?,
            },
            20 => UnknownAccount(Address::decode_from(r)?),
            21 => AlreadyRedeemed,
            22 => NotPrimaryRecipient,
            23 => InsolvencyDetected,
            24 => QuorumUnreachable,
            25 => Unrepairable {
                sender: Address::decode_from(r)?,
                sequence: SequenceNumber::decode_from(r)?,
            },
            26 => Timeout,
            27 => PendingOrderExists,
            28 => ClientOutOfDate(SequenceNumber::decode_from(r)?),
            29 => MalformedMessage(String::decode_from(r)?),
            30 => UnsupportedVersion(r.u8()?),
            31 => OversizedDatagram(decode_usize(r)?),
            32 => Storage(String::decode_from(r)?),
            c => return Err(MalformedMessage(format!("unknown error code {c}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let bytes = encode_frame(0x0807_0605_0403_0201, &WireMessage::Ack);
        assert_eq!(bytes, vec![1, 9, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(decode_frame(&bytes).unwrap(), (0x0807_0605_0403_0201, WireMessage::Ack));
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(decode_frame(&[]).is_err());
        assert_eq!(
            decode_frame(&[2, 9, 0, 0, 0, 0, 0, 0, 0, 0]),
            Err(Error::UnsupportedVersion(2))
        );
        assert!(decode_frame(&[1, 99, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(decode_frame(&[1, 9, 0, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn errors_roundtrip() {
        let samples = vec![
            Error::InsufficientFunds {
                balance: -7,
                amount: 9,
            },
            Error::WrongShard {
                expected: 3,
                actual: 1,
            },
            Error::UnexpectedSequence {
                expected: SequenceNumber(4),
                received: SequenceNumber(2),
            },
            Error::MalformedMessage("x".into()),
            Error::QuorumNotReached { got: 1, needed: 3 },
            Error::Timeout,
        ];
        for e in samples {
            let frame = encode_frame(5, &WireMessage::ErrorResponse(e.clone()));
            assert_eq!(decode_frame(&frame).unwrap().1, WireMessage::ErrorResponse(e));
        }
    }
}
