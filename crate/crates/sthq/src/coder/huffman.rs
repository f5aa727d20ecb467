//! Canonical Huffman coder over the shared static frequency table.
//!
//! Only code lengths matter: codes are assigned canonically (sorted by
//! length, then symbol), so encoder and decoder derive identical codes from
//! the frequency table alone.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::coder::bitio::{BitReader, BitWriter};
use crate::coder::freq::FreqTable;
use crate::error::{Result, SthqError};
use crate::quantizer::SymbolStream;

const MAX_LEN: u32 = 32;

/// Huffman code lengths for the given positive counts. Deterministic: heap
/// ties break on insertion order. A single-symbol alphabet codes at 1
/// bit/symbol by convention.
pub fn code_lengths(counts: &[u32]) -> Vec<u32> {
    let n = counts.len();
    if n == 1 {
        return vec![1];
    }
    // leaves 0..n, internal nodes appended after
    let mut parent = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| Reverse((c as u64, i)))
        .collect();
    let mut next_id = n;
    while heap.len() > 1 {
        let Reverse((ca, a)) = heap.pop().unwrap();
        let Reverse((cb, b)) = heap.pop().unwrap();
        parent.push(usize::MAX);
        parent[a] = next_id;
        parent[b] = next_id;
        heap.push(Reverse((ca + cb, next_id)));
        next_id += 1;
    }
    let mut lengths = vec![0u32; n];
    for (sym, len) in lengths.iter_mut().enumerate() {
        let mut node = sym;
        while parent[node] != usize::MAX {
            node = parent[node];
            *len += 1;
        }
    }
    lengths
}

/// Canonical code assignment: symbols sorted by (length, symbol), codes
/// increase lexicographically.
fn canonical_codes(lengths: &[u32]) -> Result<Vec<u32>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![0u32; lengths.len()];
    let mut code = 0u32;
    let mut prev_len = 0u32;
    for &s in &order {
        let len = lengths[s];
        if len > MAX_LEN {
            return Err(SthqError::InvalidArgument(format!("huffman code length {len} too long")));
        }
        code <<= len - prev_len;
        codes[s] = code;
        code += 1;
        prev_len = len;
    }
    Ok(codes)
}

/// Encode `stream` under the table; returns byte-padded payload plus the
/// exact payload bit length.
pub fn encode_payload(stream: &SymbolStream, table: &FreqTable) -> Result<(Vec<u8>, u64)> {
    if table.len() < stream.num_centers {
        return Err(SthqError::InvalidArgument(
            "frequency table does not cover the symbol alphabet".into(),
        ));
    }
    let lengths = code_lengths(table.counts());
    let codes = canonical_codes(&lengths)?;
    let mut w = BitWriter::new();
    for &s in &stream.symbols {
        let s = s as usize;
        w.push_code(codes[s], lengths[s]);
    }
    Ok(w.finish())
}

/// Decode exactly `n` symbols from a payload of `bit_len` valid bits.
pub fn decode_payload(
    payload: &[u8],
    bit_len: u64,
    table: &FreqTable,
    n: usize,
    num_centers: usize,
) -> Result<SymbolStream> {
    let lengths = code_lengths(table.counts());
    // canonical decode tables per length: first code, first canonical index
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut first_code = vec![0u32; (max_len + 2) as usize];
    let mut first_index = vec![0usize; (max_len + 2) as usize];
    let mut count_at = vec![0usize; (max_len + 2) as usize];
    for &s in &order {
        count_at[lengths[s] as usize] += 1;
    }
    {
        let mut code = 0u32;
        let mut idx = 0usize;
        for len in 1..=max_len as usize {
            code <<= 1;
            first_code[len] = code;
            first_index[len] = idx;
            code += count_at[len] as u32;
            idx += count_at[len];
        }
    }

    let mut r = BitReader::new(payload, bit_len);
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        let mut code = 0u32;
        let mut len = 0usize;
        loop {
            code = (code << 1) | r.read_bit()? as u32;
            len += 1;
            if len > max_len as usize {
                return Err(SthqError::Decode("invalid huffman code".into()));
            }
            let offset = code.wrapping_sub(first_code[len]);
            if count_at[len] > 0 && (offset as usize) < count_at[len] {
                let sym = order[first_index[len] + offset as usize];
                if sym >= num_centers {
                    return Err(SthqError::Decode(format!("decoded symbol {sym} out of range")));
                }
                symbols.push(sym as u32);
                break;
            }
        }
    }
    SymbolStream::new(symbols, num_centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;

    #[test]
    fn dyadic_lengths_and_payload() {
        // counts proportional to (0.5, 0.25, 0.25): lengths (1, 2, 2);
        // stream of 4 symbols (0,1,2,0) costs 1+2+2+1 = 6 bits
        let table = FreqTable::from_exact(vec![2, 1, 1]).unwrap();
        let lengths = code_lengths(table.counts());
        assert_eq!(lengths, vec![1, 2, 2]);
        let stream = SymbolStream::new(vec![0, 1, 2, 0], 3).unwrap();
        let (payload, bits) = encode_payload(&stream, &table).unwrap();
        assert_eq!(bits, 6);
        let back = decode_payload(&payload, bits, &table, 4, 3).unwrap();
        assert_eq!(back.symbols, stream.symbols);
    }

    #[test]
    fn single_symbol_alphabet_costs_one_bit_each() {
        let table = FreqTable::from_exact(vec![7]).unwrap();
        let stream = SymbolStream::new(vec![0; 9], 1).unwrap();
        let (payload, bits) = encode_payload(&stream, &table).unwrap();
        assert_eq!(bits, 9);
        let back = decode_payload(&payload, bits, &table, 9, 1).unwrap();
        assert_eq!(back.symbols, stream.symbols);
    }

    #[test]
    fn roundtrip_random_streams() {
        let tree = SeedTree::new(5);
        let mut rng = tree.stream("huffman");
        for l in [2usize, 75, 1000] {
            for _ in 0..5 {
                let n = rng.random_range(1..3000);
                let symbols: Vec<u32> = (0..n).map(|_| rng.random_range(0..l) as u32).collect();
                let stream = SymbolStream::new(symbols, l).unwrap();
                let table = FreqTable::from_stream(&stream).unwrap();
                let (payload, bits) = encode_payload(&stream, &table).unwrap();
                let back = decode_payload(&payload, bits, &table, stream.len(), l).unwrap();
                assert_eq!(back.symbols, stream.symbols);
            }
        }
    }

    #[test]
    fn payload_within_one_bit_per_symbol_of_entropy() {
        let tree = SeedTree::new(6);
        let mut rng = tree.stream("huffman-bound");
        let n = 20_000usize;
        // non-dyadic distribution
        let symbols: Vec<u32> = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                if x < 0.6 {
                    0
                } else if x < 0.9 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let stream = SymbolStream::new(symbols, 3).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let (_, bits) = encode_payload(&stream, &table).unwrap();
        let cost = table.stream_cost_bits(&stream);
        assert!(bits as f64 <= cost + n as f64);
        assert!(bits as f64 >= cost - 1e-6);
    }

    #[test]
    fn truncation_detected() {
        let stream = SymbolStream::new((0..100).map(|i| (i % 3) as u32).collect(), 3).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let (payload, bits) = encode_payload(&stream, &table).unwrap();
        assert!(decode_payload(&payload, bits / 2, &table, 100, 3).is_err());
    }
}
