//! MSB-first bit packing.

use crate::error::CodecError;

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    pending: u32,
    written: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 56);
        if width == 0 {
            return;
        }
        debug_assert!(width == 64 || value >> width == 0, "value wider than field");
        self.acc = (self.acc << width) | value;
        self.pending += width;
        self.written += width as usize;
        while self.pending >= 8 {
            self.pending -= 8;
            self.bytes.push((self.acc >> self.pending) as u8);
        }
        self.acc &= (1u64 << self.pending) - 1;
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.write(u64::from(bit), 1);
    }

    /// Bits written so far, excluding padding.
    pub fn bit_len(&self) -> usize {
        self.written
    }

    /// Pads with zeros to a byte boundary.
    pub fn finish(mut self) -> Vec<u8> {
        if self.pending > 0 {
            self.bytes.push((self.acc << (8 - self.pending)) as u8);
        }
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    pub fn read(&mut self, width: u32) -> Result<u64, CodecError> {
        debug_assert!(width <= 56);
        if width as usize > self.remaining() {
            return Err(CodecError::Truncated { offset: self.pos });
        }
        let mut out = 0u64;
        let mut left = width;
        while left > 0 {
            let byte = self.bytes[self.pos / 8];
            let used = (self.pos % 8) as u32;
            let avail = 8 - used;
            let take = avail.min(left);
            let bits = (u64::from(byte) >> (avail - take)) & ((1u64 << take) - 1);
            out = (out << take) | bits;
            left -= take;
            self.pos += take as usize;
        }
        Ok(out)
    }

    pub fn read_bit(&mut self) -> Result<bool, CodecError> {
        Ok(self.read(1)? == 1)
    }

    /// Requires that only zero padding (< 8 bits) remains.
    pub fn expect_padding(&mut self) -> Result<(), CodecError> {
        let offset = self.pos;
        let rem = self.remaining();
        if rem >= 8 {
            return Err(CodecError::Corrupt {
                offset,
                reason: "trailing data after payload",
            });
        }
        if self.read(rem as u32)? != 0 {
            return Err(CodecError::Corrupt {
                offset,
                reason: "non-zero padding",
            });
        }
        Ok(())
    }
}
