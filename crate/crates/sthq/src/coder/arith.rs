//! Byte-oriented 32-bit range coder with carry propagation.
//!
//! The encoder keeps `low` in 33 bits (the extra bit is the pending carry),
//! defers bytes that might still receive a carry through a cache/run
//! counter, and renormalizes 8 bits at a time whenever the range drops
//! below 2^24. With 16-bit frequency totals the division keeps at least
//! 8 bits of precision per symbol.

use crate::coder::freq::FreqTable;
use crate::error::{Result, SthqError};
use crate::quantizer::SymbolStream;

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum.checked_add(freq).is_some() && cum + freq <= total);
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<RangeDecoder<'a>> {
        if input.len() < 5 {
            return Err(SthqError::Decode("range-coded payload shorter than 5 bytes".into()));
        }
        // the first byte shifts out of the 32-bit window (it only ever
        // carries the encoder's initial cache)
        let mut code = 0u32;
        for &b in &input[..5] {
            code = (code << 8) | b as u32;
        }
        Ok(RangeDecoder { range: u32::MAX, code, input, pos: 5 })
    }

    /// Cumulative-frequency target of the next symbol.
    pub fn decode_target(&self, total: u32) -> u32 {
        let r = self.range / total;
        (self.code / r).min(total - 1)
    }

    /// Consume the symbol's interval and renormalize.
    pub fn decode_update(&mut self, cum: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.range / total;
        self.code = self.code.wrapping_sub(r * cum);
        self.range = r * freq;
        while self.range < TOP {
            if self.pos >= self.input.len() {
                return Err(SthqError::Decode("range-coded payload truncated".into()));
            }
            self.code = (self.code << 8) | self.input[self.pos] as u32;
            self.pos += 1;
            self.range <<= 8;
        }
        Ok(())
    }
}

/// Encode the symbols of `stream` under the static `table`.
pub fn encode_payload(stream: &SymbolStream, table: &FreqTable) -> Result<Vec<u8>> {
    if table.len() < stream.num_centers {
        return Err(SthqError::InvalidArgument(
            "frequency table does not cover the symbol alphabet".into(),
        ));
    }
    let total = table.total();
    let mut enc = RangeEncoder::new();
    for &s in &stream.symbols {
        let s = s as usize;
        enc.encode(table.cum(s), table.freq(s), total);
    }
    Ok(enc.finish())
}

/// Decode exactly `n` symbols.
pub fn decode_payload(
    payload: &[u8],
    table: &FreqTable,
    n: usize,
    num_centers: usize,
) -> Result<SymbolStream> {
    let total = table.total();
    let mut dec = RangeDecoder::new(payload)?;
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        let target = dec.decode_target(total);
        let sym = table.lookup(target);
        dec.decode_update(table.cum(sym), table.freq(sym), total)?;
        if sym >= num_centers {
            return Err(SthqError::Decode(format!("decoded symbol {sym} out of range")));
        }
        symbols.push(sym as u32);
    }
    SymbolStream::new(symbols, num_centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;

    fn roundtrip(symbols: Vec<u32>, l: usize) {
        let stream = SymbolStream::new(symbols, l).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let payload = encode_payload(&stream, &table).unwrap();
        let back = decode_payload(&payload, &table, stream.len(), l).unwrap();
        assert_eq!(back.symbols, stream.symbols);
    }

    #[test]
    fn roundtrip_small_alphabets() {
        roundtrip(vec![0, 1, 0, 0, 1, 1, 1, 0], 2);
        roundtrip(vec![0; 100], 2);
        roundtrip((0..255).map(|i| i % 7).collect(), 7);
    }

    #[test]
    fn roundtrip_random_streams() {
        let tree = SeedTree::new(99);
        let mut rng = tree.stream("arith");
        for l in [2usize, 75, 1000] {
            for _ in 0..5 {
                let n = rng.random_range(1..4000);
                let symbols = (0..n).map(|_| rng.random_range(0..l) as u32).collect();
                roundtrip(symbols, l);
            }
        }
    }

    #[test]
    fn skewed_stream_compresses_close_to_cost() {
        // one dominant symbol: payload stays near the model cost
        let symbols: Vec<u32> = (0..10_000).map(|i| if i % 100 == 0 { 1 } else { 0 }).collect();
        let stream = SymbolStream::new(symbols, 2).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let payload = encode_payload(&stream, &table).unwrap();
        let cost = table.stream_cost_bits(&stream);
        let bits = payload.len() as f64 * 8.0;
        assert!(bits <= cost + 64.0, "bits {bits} vs cost {cost}");
    }

    #[test]
    fn truncated_payload_is_detected() {
        let stream = SymbolStream::new((0..5000).map(|i| (i % 5) as u32).collect(), 5).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let payload = encode_payload(&stream, &table).unwrap();
        let cut = &payload[..payload.len() / 2];
        assert!(decode_payload(cut, &table, stream.len(), 5).is_err());
    }
}
