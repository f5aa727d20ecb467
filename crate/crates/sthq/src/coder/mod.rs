//! Lossless coding of symbol streams and the bit-exact container format.
//!
//! Container layout (little-endian):
//!
//! | field            | size            |
//! |------------------|-----------------|
//! | magic `"STHQ"`   | 4 bytes         |
//! | version          | u8 = 1          |
//! | coder id         | u8 (0 = arithmetic, 1 = huffman) |
//! | L                | u16             |
//! | dim              | u16             |
//! | m (symbol count) | u64             |
//! | centers          | L * dim * f32   |
//! | frequency table  | L * u32         |
//! | payload bits     | u64             |
//! | payload          | byte-padded     |

pub mod arith;
pub mod bitio;
pub mod freq;
pub mod huffman;

pub use freq::FreqTable;

use crate::error::{Result, SthqError};
use crate::quantizer::{CenterSet, SymbolStream};

const MAGIC: &[u8; 4] = b"STHQ";
const VERSION: u8 = 1;

/// Which entropy coder produced the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoderKind {
    Arithmetic = 0,
    Huffman = 1,
}

impl CoderKind {
    fn from_u8(v: u8) -> Result<CoderKind> {
        match v {
            0 => Ok(CoderKind::Arithmetic),
            1 => Ok(CoderKind::Huffman),
            other => Err(SthqError::Decode(format!("unknown coder id {other}"))),
        }
    }
}

/// A decodable compressed artifact: header, centers, model, payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub coder: CoderKind,
    pub centers: CenterSet,
    pub table: FreqTable,
    pub num_symbols: u64,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
}

impl Bitstream {
    /// Encode a stream against `centers` and a static `table`.
    pub fn encode(
        stream: &SymbolStream,
        centers: &CenterSet,
        table: &FreqTable,
        coder: CoderKind,
    ) -> Result<Bitstream> {
        if table.len() != centers.len() || stream.num_centers != centers.len() {
            return Err(SthqError::InvalidArgument(
                "stream, centers, and table must share one alphabet".into(),
            ));
        }
        let (payload, payload_bits) = match coder {
            CoderKind::Arithmetic => {
                let p = arith::encode_payload(stream, table)?;
                let bits = p.len() as u64 * 8;
                (p, bits)
            }
            CoderKind::Huffman => huffman::encode_payload(stream, table)?,
        };
        Ok(Bitstream {
            coder,
            centers: centers.clone(),
            table: table.clone(),
            num_symbols: stream.len() as u64,
            payload_bits,
            payload,
        })
    }

    /// Recover the exact symbol stream.
    pub fn decode(&self) -> Result<SymbolStream> {
        let n = self.num_symbols as usize;
        match self.coder {
            CoderKind::Arithmetic => {
                arith::decode_payload(&self.payload, &self.table, n, self.centers.len())
            }
            CoderKind::Huffman => huffman::decode_payload(
                &self.payload,
                self.payload_bits,
                &self.table,
                n,
                self.centers.len(),
            ),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.coder as u8);
        out.extend_from_slice(&(self.centers.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.centers.dim() as u16).to_le_bytes());
        out.extend_from_slice(&self.num_symbols.to_le_bytes());
        for &v in self.centers.flat() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &c in self.table.counts() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse a container; returns the bitstream and the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Bitstream, usize)> {
        let need = |n: usize| -> Result<()> {
            if bytes.len() < n {
                Err(SthqError::Decode("container truncated".into()))
            } else {
                Ok(())
            }
        };
        need(18)?;
        if &bytes[0..4] != MAGIC {
            return Err(SthqError::Decode("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(SthqError::Decode(format!("unsupported version {}", bytes[4])));
        }
        let coder = CoderKind::from_u8(bytes[5])?;
        let l = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let dim = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let m = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let mut off = 18usize;

        need(off + 4 * l * dim)?;
        let mut flat = Vec::with_capacity(l * dim);
        for i in 0..l * dim {
            let o = off + 4 * i;
            flat.push(
                f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64,
            );
        }
        let centers = CenterSet::from_flat(dim.max(1), flat)
            .map_err(|e| SthqError::Decode(format!("bad centers: {e}")))?;
        off += 4 * l * dim;

        need(off + 4 * l)?;
        let mut counts = Vec::with_capacity(l);
        for i in 0..l {
            let o = off + 4 * i;
            counts.push(u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]));
        }
        let table = FreqTable::from_exact(counts)?;
        off += 4 * l;

        need(off + 8)?;
        let payload_bits = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        let payload_bytes = payload_bits.div_ceil(8) as usize;
        need(off + payload_bytes)?;
        let payload = bytes[off..off + payload_bytes].to_vec();
        off += payload_bytes;

        Ok((
            Bitstream { coder, centers, table, num_symbols: m, payload_bits, payload },
            off,
        ))
    }

    /// Size of the serialized container in bits.
    pub fn total_bits(&self) -> u64 {
        self.to_bytes().len() as u64 * 8
    }

    /// Bits spent on everything except centers and payload.
    pub fn header_bits(&self) -> u64 {
        self.total_bits() - self.payload.len() as u64 * 8 - self.centers.flat().len() as u64 * 32
    }
}

/// Compression factor of storing `weights_count` 32-bit floats as
/// `l * dim` 32-bit centers plus the coded payload and header.
pub fn coded_size_report(
    weights_count: u64,
    l: u64,
    dim: u64,
    payload_bits: u64,
    header_bits: u64,
) -> f64 {
    let uncompressed = weights_count as f64 * 32.0;
    let coded = (l * 32 * dim + payload_bits + header_bits) as f64;
    uncompressed / coded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;

    fn toy_centers() -> CenterSet {
        CenterSet::from_flat(1, vec![-1.0, 0.25, 1.5]).unwrap()
    }

    #[test]
    fn container_roundtrip_both_coders() {
        let centers = toy_centers();
        let tree = SeedTree::new(1);
        let mut rng = tree.stream("container");
        let symbols: Vec<u32> = (0..500).map(|_| rng.random_range(0..3)).collect();
        let stream = SymbolStream::new(symbols, 3).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        for coder in [CoderKind::Arithmetic, CoderKind::Huffman] {
            let bs = Bitstream::encode(&stream, &centers, &table, coder).unwrap();
            let bytes = bs.to_bytes();
            let (back, consumed) = Bitstream::from_bytes(&bytes).unwrap();
            assert_eq!(consumed, bytes.len());
            assert_eq!(back, bs);
            assert_eq!(back.decode().unwrap().symbols, stream.symbols);
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let centers = toy_centers();
        let stream = SymbolStream::new(vec![0, 1, 2], 3).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        let bs = Bitstream::encode(&stream, &centers, &table, CoderKind::Arithmetic).unwrap();
        let mut bytes = bs.to_bytes();
        bytes[0] = b'X';
        assert!(Bitstream::from_bytes(&bytes).is_err());
        let bytes = bs.to_bytes();
        assert!(Bitstream::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn encoders_are_deterministic() {
        let centers = toy_centers();
        let stream = SymbolStream::new((0..999).map(|i| (i * 7 % 3) as u32).collect(), 3).unwrap();
        let table = FreqTable::from_stream(&stream).unwrap();
        for coder in [CoderKind::Arithmetic, CoderKind::Huffman] {
            let a = Bitstream::encode(&stream, &centers, &table, coder).unwrap().to_bytes();
            let b = Bitstream::encode(&stream, &centers, &table, coder).unwrap().to_bytes();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn compression_factor_formula() {
        // factor ~ 1 when the payload alone matches the uncompressed size
        let f = coded_size_report(1000, 4, 1, 1000 * 32, 0);
        assert!((f - 1.0).abs() < 0.01);
        // doubling the payload roughly halves the factor
        let f2 = coded_size_report(1000, 4, 1, 2 * 1000 * 32, 0);
        assert!((f / f2 - 2.0).abs() < 0.01);
        // the reported overall factor: weights = 464154, total bits arranged
        // to be uncompressed/20.15
        let total_bits = (464_154.0 * 32.0 / 20.15) as u64;
        let centers_bits = 75 * 32;
        let f3 = coded_size_report(464_154, 75, 1, total_bits - centers_bits, 0);
        assert!((f3 - 20.15).abs() < 0.01);
    }
}
