// SPDX-License-Identifier: Apache-2.0

//! Splitting oversized responses into datagrams, and length-prefixed frames
//! for the stream transport.

use quorumpay_core::protocol::{encode_frame, Chunk, WireMessage};
use quorumpay_core::wire::{FRAME_HEADER_LEN, MAX_DATAGRAM_SIZE};
use quorumpay_core::{Error, Result};
use std::io;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

/// Bytes of the original frame carried by one chunk: the datagram budget
/// minus the frame header and the chunk's own `total`, `index` and length.
pub const CHUNK_DATA_LEN: usize = MAX_DATAGRAM_SIZE - FRAME_HEADER_LEN - 12;

/// Largest frame accepted on a stream.
pub const MAX_STREAM_FRAME: usize = 64 << 20;

/// One datagram if the frame fits, otherwise `Chunk` frames under the same
/// nonce that concatenate back to it.
pub fn datagrams(nonce: u64, frame: Vec<u8>) -> Vec<Vec<u8>> {
    if frame.len() <= MAX_DATAGRAM_SIZE {
        return vec![frame];
    }
    let total = frame.len().div_ceil(CHUNK_DATA_LEN) as u32;
    frame
        .chunks(CHUNK_DATA_LEN)
        .enumerate()
        .map(|(index, data)| {
            encode_frame(
                nonce,
                &WireMessage::Chunk(Chunk {
                    total,
                    index: index as u32,
                    data: data.to_vec(),
                }),
            )
        })
        .collect()
}

/// Collects the chunks of one response.
#[derive(Debug, Default)]
pub struct Reassembly {
    parts: Vec<Option<Vec<u8>>>,
    have: usize,
    done: bool,
}

/// Upper bound on chunks per response, about 90 MB.
const MAX_CHUNKS: u32 = 1 << 16;

impl Reassembly {
    /// Returns the full frame once every chunk has arrived, and never again.
    pub fn add(&mut self, chunk: Chunk) -> Result<Option<Vec<u8>>> {
        if self.done {
            return Ok(None);
        }
        if chunk.total == 0 || chunk.total > MAX_CHUNKS || chunk.index >= chunk.total {
            return Err(Error::MalformedMessage("bad chunk header".into()));
        }
        if self.parts.is_empty() {
            self.parts = vec![None; chunk.total as usize];
        } else if self.parts.len() != chunk.total as usize {
            return Err(Error::MalformedMessage("chunk count changed".into()));
        }
        let slot = &mut self.parts[chunk.index as usize];
        if slot.is_none() {
            *slot = Some(chunk.data);
            self.have += 1;
        }
        if self.have < self.parts.len() {
            return Ok(None);
        }
        self.done = true;
        Ok(Some(self.parts.drain(..).flatten().flatten().collect()))
    }
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    let len = u32::try_from(frame.len()).map_err(|_| io::ErrorKind::InvalidInput)?;
    let mut buf = Vec::with_capacity(4 + frame.len());
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(frame);
    w.write_all(&buf).await
}

pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).await?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_STREAM_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut frame = vec![0; len];
    r.read_exact(&mut frame).await?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use quorumpay_core::protocol::decode_frame;

    #[test]
    fn small_frames_pass_through() {
        let frame = encode_frame(9, &WireMessage::Ack);
        assert_eq!(datagrams(9, frame.clone()), vec![frame]);
    }

    #[test]
    fn large_frames_chunk_and_reassemble_in_any_order() {
        let frame: Vec<u8> = (0..10_000u32).map(|i| i as u8).collect();
        let mut parts = datagrams(5, frame.clone());
        assert_eq!(parts.len(), frame.len().div_ceil(CHUNK_DATA_LEN));
        assert!(parts.iter().all(|p| p.len() <= MAX_DATAGRAM_SIZE));
        parts.reverse();
        let dup = parts[0].clone();
        parts.insert(2, dup);
        let mut r = Reassembly::default();
        let mut out = None;
        for p in parts {
            let (nonce, WireMessage::Chunk(c)) = decode_frame(&p).unwrap() else {
                panic!("not a chunk")
            };
            assert_eq!(nonce, 5);
            if let Some(done) = r.add(c).unwrap() {
                out = Some(done);
            }
        }
        assert_eq!(out.unwrap(), frame);
    }

    #[test]
    fn inconsistent_chunks_are_rejected() {
        let mut r = Reassembly::default();
        let c = |total, index| Chunk {
            total,
            index,
            data: vec![1],
        };
        assert!(r.add(c(2, 2)).is_err());
        assert_eq!(r.add(c(2, 0)).unwrap(), None);
        assert!(r.add(c(3, 1)).is_err());
    }
}
