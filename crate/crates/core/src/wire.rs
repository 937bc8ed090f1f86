// SPDX-License-Identifier: Apache-2.0

//! Canonical binary encoding.
//!
//! Integers are little-endian and fixed width, variable-length fields carry a
//! 4-byte length prefix, options a 1-byte presence flag. Network frames are
//! `[version: u8][tag: u8][nonce: u64][payload]`. Decoding is strict: unknown
//! tags, truncation and trailing bytes are all errors, so every value has
//! exactly one encoding.

use crate::base::{
    Address, Amount, Balance, PublicKeyBytes, SequenceNumber, Signature, UserData,
    MAX_USER_DATA_LEN,
};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u8 = 1;

/// Datagram budget for single-packet messages.
pub const MAX_DATAGRAM_SIZE: usize = 1400;

/// Size of the `[version][tag][nonce]` frame header.
pub const FRAME_HEADER_LEN: usize = 10;

pub trait Wire: Sized {
    fn encode_into(&self, out: &mut Vec<u8>);
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader::new(bytes);
        let value = Self::decode_from(&mut reader)?;
        reader.finish()?;
        Ok(value)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> Error {
    Error::MalformedMessage(what.to_string())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(malformed("truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i128(&mut self) -> Result<i128> {
        Ok(i128::from_le_bytes(self.array()?))
    }

    pub fn var_bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    /// Element count of a sequence; bounded by the bytes left so hostile
    /// lengths cannot trigger large allocations.
    pub fn count(&mut self) -> Result<usize> {
        let len = self.u32()? as usize;
        if len > self.remaining() {
            return Err(malformed("sequence length exceeds payload"));
        }
        Ok(len)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(malformed("trailing bytes"));
        }
        Ok(())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_var_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

impl Wire for u8 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(*self);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.u8()
    }
}

impl Wire for u32 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, *self);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.u32()
    }
}

impl Wire for u64 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u64(out, *self);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.u64()
    }
}

impl Wire for bool {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(u8::from(*self));
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed("invalid bool")),
        }
    }
}

impl Wire for String {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_var_bytes(out, self.as_bytes());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        String::from_utf8(r.var_bytes()?.to_vec()).map_err(|_| malformed("invalid utf-8"))
    }
}

impl<T: Wire> Wire for Option<T> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_into(out);
            }
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(r)?)),
            _ => Err(malformed("invalid option tag")),
        }
    }
}

impl<T: Wire> Wire for Vec<T> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, self.len() as u32);
        for item in self {
            item.encode_into(out);
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let len = r.count()?;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(T::decode_from(r)?);
        }
        Ok(out)
    }
}

impl<A: Wire, B: Wire> Wire for (A, B) {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.0.encode_into(out);
        self.1.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok((A::decode_from(r)?, B::decode_from(r)?))
    }
}

impl Wire for Address {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Address(r.array()?))
    }
}

impl Wire for PublicKeyBytes {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(PublicKeyBytes(r.array()?))
    }
}

impl Wire for Signature {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Signature(r.array()?))
    }
}

impl Wire for Amount {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u64(out, self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Amount(r.u64()?))
    }
}

impl Wire for Balance {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0.to_le_bytes());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Balance(r.i128()?))
    }
}

impl Wire for SequenceNumber {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u64(out, self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SequenceNumber(r.u64()?))
    }
}

impl Wire for UserData {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_var_bytes(out, self.as_bytes());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let bytes = r.var_bytes()?;
        if bytes.len() > MAX_USER_DATA_LEN {
            return Err(Error::UserDataTooLarge(bytes.len()));
        }
        UserData::new(bytes.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_little_endian_fixed_width() {
        assert_eq!(0x0102_0304u32.to_bytes(), vec![4, 3, 2, 1]);
        assert_eq!(Amount(1).to_bytes(), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(Balance(-1).to_bytes(), vec![0xff; 16]);
    }

    #[test]
    fn strict_decoding() {
        assert!(u64::from_bytes(&[1, 2, 3]).is_err());
        assert!(u32::from_bytes(&[1, 0, 0, 0, 9]).is_err());
        assert!(bool::from_bytes(&[2]).is_err());
        assert!(<Option<u8>>::from_bytes(&[3, 1]).is_err());
        // Claims a billion elements with four bytes of payload.
        assert!(<Vec<u64>>::from_bytes(&[0, 0xca, 0x9a, 0x3b, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn oversized_user_data_is_rejected_on_decode() {
        let mut bytes = Vec::new();
        put_var_bytes(&mut bytes, &[0u8; MAX_USER_DATA_LEN + 1]);
        assert_eq!(
            UserData::from_bytes(&bytes),
            Err(Error::UserDataTooLarge(MAX_USER_DATA_LEN + 1))
        );
    }
}
