//! Framed secret bitstreams and exact-position bit reading.
//!
//! A framed stream is `magic (8) | version (8) | payload_bit_length (32, BE) | payload`,
//! 48 header bits total. Bit order is big-endian throughout: bit 0 of the stream is
//! the most significant bit of the first byte. This is fixed and not configurable.

use thiserror::Error;

pub const MAGIC: u8 = 0xDA;
pub const VERSION: u8 = 0x01;
pub const HEADER_BITS: usize = 48;
/// Payloads are capped at 2^29 bytes so the bit length fits a u32.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 29;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("payload of {0} bytes exceeds the 2^29-byte limit")]
    PayloadTooLarge(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("header claims {claimed} payload bits but only {present} are present")]
    TruncatedPayload { claimed: usize, present: usize },
    #[error("payload bit length {0} is not a multiple of 8")]
    NonByteAlignedLength(usize),
    #[error("stream of {0} bits is shorter than the 48-bit header")]
    MissingHeader(usize),
}

/// A self-describing bit sequence: 48-bit header followed by the payload bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramedBitstream {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl FramedBitstream {
    /// Frames a payload: header then payload bits. `deframe(frame(p)) == p`.
    pub fn frame(payload: &[u8]) -> Result<Self, BitstreamError> {
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(BitstreamError::PayloadTooLarge(payload.len()));
        }
        let payload_bits = (payload.len() * 8) as u32;
        let mut bytes = Vec::with_capacity(6 + payload.len());
        bytes.push(MAGIC);
        bytes.push(VERSION);
        bytes.extend_from_slice(&payload_bits.to_be_bytes());
        bytes.extend_from_slice(payload);
        let bit_len = bytes.len() * 8;
        Ok(Self { bytes, bit_len })
    }

    /// Builds a stream from raw bits without interpreting them. Trailing bits of
    /// the last byte beyond `bit_len` are ignored.
    pub fn from_raw_bits(bytes: Vec<u8>, bit_len: usize) -> Self {
        debug_assert!(bit_len <= bytes.len() * 8);
        Self { bytes, bit_len }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Bit at `index`, big-endian within each byte.
    pub fn bit(&self, index: usize) -> bool {
        debug_assert!(index < self.bit_len);
        let byte = self.bytes[index / 8];
        (byte >> (7 - (index % 8))) & 1 == 1
    }

    /// Payload bit count claimed by the header, if a header is present.
    pub fn claimed_payload_bits(&self) -> Option<usize> {
        if self.bit_len < HEADER_BITS {
            return None;
        }
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&self.bytes[2..6]);
        Some(u32::from_be_bytes(raw) as usize)
    }

    /// Validates the header and returns the payload bytes.
    pub fn deframe(&self) -> Result<Vec<u8>, BitstreamError> {
        if self.bit_len < HEADER_BITS {
            return Err(BitstreamError::MissingHeader(self.bit_len));
        }
        if self.bytes[0] != MAGIC {
            return Err(BitstreamError::BadMagic(self.bytes[0]));
        }
        if self.bytes[1] != VERSION {
            return Err(BitstreamError::BadVersion(self.bytes[1]));
        }
        let claimed = self.claimed_payload_bits().unwrap();
        if !claimed.is_multiple_of(8) {
            return Err(BitstreamError::NonByteAlignedLength(claimed));
        }
        let present = self.bit_len - HEADER_BITS;
        if claimed > present {
            return Err(BitstreamError::TruncatedPayload { claimed, present });
        }
        Ok(self.bytes[6..6 + claimed / 8].to_vec())
    }

    /// Debug rendering: ASCII '0'/'1', 64 bits per line.
    pub fn to_debug_dump(&self) -> String {
        let mut out = String::with_capacity(self.bit_len + self.bit_len / 64 + 1);
        for i in 0..self.bit_len {
            out.push(if self.bit(i) { '1' } else { '0' });
            if (i + 1) % 64 == 0 {
                out.push('\n');
            }
        }
        if !out.ends_with('\n') && !out.is_empty() {
            out.push('\n');
        }
        out
    }

    /// Parses the `to_debug_dump` format; whitespace is ignored.
    pub fn from_debug_dump(dump: &str) -> Self {
        let mut bytes = Vec::new();
        let mut bit_len = 0usize;
        for ch in dump.chars() {
            match ch {
                '0' | '1' => {
                    if bit_len.is_multiple_of(8) {
                        bytes.push(0);
                    }
                    if ch == '1' {
                        let last = bytes.last_mut().unwrap();
                        *last |= 1 << (7 - (bit_len % 8));
                    }
                    bit_len += 1;
                }
                c if c.is_whitespace() => {}
                _ => {}
            }
        }
        Self { bytes, bit_len }
    }
}

/// Read position over a framed stream. Copyable value; `advance` is the only mutator.
#[derive(Debug, Clone)]
pub struct BitCursor {
    stream: FramedBitstream,
    position: usize,
}

impl BitCursor {
    pub fn new(stream: FramedBitstream) -> Self {
        Self { stream, position: 0 }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn stream(&self) -> &FramedBitstream {
        &self.stream
    }

    pub fn remaining(&self) -> usize {
        self.stream.bit_len() - self.position
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    /// Reads the next `alpha` bits big-endian without advancing. If fewer than
    /// `alpha` bits remain the tail is zero-padded; the pad count is returned.
    pub fn read_window(&self, alpha: u32) -> (u64, u32) {
        debug_assert!((1..=32).contains(&alpha));
        let mut value = 0u64;
        let mut padded = 0u32;
        for i in 0..alpha as usize {
            value <<= 1;
            let idx = self.position + i;
            if idx < self.stream.bit_len() {
                value |= self.stream.bit(idx) as u64;
            } else {
                padded += 1;
            }
        }
        (value, padded)
    }

    /// Bit at `position + offset` without advancing; `None` past the end.
    pub fn peek_bit(&self, offset: usize) -> Option<bool> {
        let idx = self.position + offset;
        if idx < self.stream.bit_len() {
            Some(self.stream.bit(idx))
        } else {
            None
        }
    }

    /// Advances by `k` bits, clamped at the end of the stream.
    pub fn advance(&mut self, k: usize) {
        self.position = (self.position + k).min(self.stream.bit_len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(bits: &str) -> FramedBitstream {
        FramedBitstream::from_debug_dump(bits)
    }

    #[test]
    fn frame_empty_payload() {
        let s = FramedBitstream::frame(&[]).unwrap();
        assert_eq!(s.bit_len(), 48);
        assert_eq!(s.claimed_payload_bits(), Some(0));
    }

    #[test]
    fn frame_single_ff_byte() {
        let s = FramedBitstream::frame(&[0xFF]).unwrap();
        assert_eq!(s.bit_len(), 56);
        for i in 48..56 {
            assert!(s.bit(i));
        }
    }

    #[test]
    fn frame_love_and_peace() {
        let s = FramedBitstream::frame(b"Love and peace").unwrap();
        assert_eq!(s.claimed_payload_bits(), Some(112));
        assert_eq!(s.bit_len(), 48 + 112);
    }

    #[test]
    fn read_window_basic() {
        let c = BitCursor::new(raw("1010"));
        assert_eq!(c.read_window(3), (0b101, 0));
    }

    #[test]
    fn read_window_pads_with_zeros() {
        let mut c = BitCursor::new(raw("1010"));
        c.advance(3);
        assert_eq!(c.read_window(3), (0b000, 2));
    }

    #[test]
    fn read_window_mid_stream() {
        let mut c = BitCursor::new(raw("110011"));
        c.advance(2);
        assert_eq!(c.read_window(4), (0b0011, 0));
    }

    #[test]
    fn read_window_does_not_advance() {
        let c = BitCursor::new(raw("110011"));
        let before = c.position();
        c.read_window(4);
        assert_eq!(c.position(), before);
    }

    #[test]
    fn advance_clamps_at_end() {
        let mut c = BitCursor::new(raw("1010"));
        c.advance(0);
        assert_eq!(c.position(), 0);
        c.advance(3);
        assert_eq!(c.position(), 3);
        c.advance(7);
        assert_eq!(c.position(), 4);
        assert!(c.is_exhausted());
    }

    #[test]
    fn deframe_round_trip() {
        let s = FramedBitstream::frame(b"abc").unwrap();
        assert_eq!(s.deframe().unwrap(), b"abc");
    }

    #[test]
    fn deframe_bad_magic() {
        let mut bytes = FramedBitstream::frame(b"x").unwrap().bytes;
        bytes[0] = 0x00;
        let len = bytes.len() * 8;
        let s = FramedBitstream::from_raw_bits(bytes, len);
        assert_eq!(s.deframe().unwrap_err(), BitstreamError::BadMagic(0x00));
    }

    #[test]
    fn deframe_truncated() {
        // header claims 64 payload bits, only 40 present
        let mut bytes = vec![MAGIC, VERSION];
        bytes.extend_from_slice(&64u32.to_be_bytes());
        bytes.extend_from_slice(&[0u8; 5]);
        let len = bytes.len() * 8;
        let s = FramedBitstream::from_raw_bits(bytes, len);
        assert_eq!(
            s.deframe().unwrap_err(),
            BitstreamError::TruncatedPayload { claimed: 64, present: 40 }
        );
    }

    #[test]
    fn deframe_too_short() {
        let s = raw("10101");
        assert_eq!(s.deframe().unwrap_err(), BitstreamError::MissingHeader(5));
    }

    #[test]
    fn debug_dump_round_trip() {
        let s = FramedBitstream::frame(b"dump me please, seventy bits").unwrap();
        let dump = s.to_debug_dump();
        assert!(dump.lines().all(|l| l.len() <= 64));
        let back = FramedBitstream::from_debug_dump(&dump);
        assert_eq!(back, s);
    }
}
