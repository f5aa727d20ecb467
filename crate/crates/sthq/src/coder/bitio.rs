//! MSB-first bit packing for the Huffman coder.

use crate::error::{Result, SthqError};

#[derive(Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> BitWriter {
        BitWriter::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        let slot = (self.bit_len / 8) as usize;
        if slot == self.bytes.len() {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[slot] |= 1 << (7 - (self.bit_len % 8));
        }
        self.bit_len += 1;
    }

    /// Push the low `len` bits of `code`, most significant first.
    pub fn push_code(&mut self, code: u32, len: u32) {
        for i in (0..len).rev() {
            self.push_bit((code >> i) & 1 == 1);
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    /// Byte-padded buffer and the exact bit length.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> BitReader<'a> {
        BitReader { bytes, bit_len, pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bit_len {
            return Err(SthqError::Decode("bitstream exhausted".into()));
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bits() {
        let mut w = BitWriter::new();
        w.push_code(0b1011, 4);
        w.push_bit(true);
        let (bytes, len) = w.finish();
        assert_eq!(len, 5);
        let mut r = BitReader::new(&bytes, len);
        let got: Vec<bool> = (0..5).map(|_| r.read_bit().unwrap()).collect();
        assert_eq!(got, vec![true, false, true, true, true]);
        assert!(r.read_bit().is_err());
    }
}
