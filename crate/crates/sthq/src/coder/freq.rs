//! Static frequency model shared by both coders.

use crate::error::{Result, SthqError};
use crate::quantizer::SymbolStream;

/// Total frequency budget; the range coder divides its 32-bit range by the
/// total, so 16-bit precision keeps at least 8 bits of headroom.
pub const MAX_TOTAL: u32 = 1 << 16;

/// Add-one-smoothed, rescaled integer frequencies with a cumulative table.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqTable {
    counts: Vec<u32>,
    cum: Vec<u32>,
}

impl FreqTable {
    /// Build from raw occurrence counts. Every symbol gets at least count 1
    /// (add-one smoothing); large totals are rescaled to fit [`MAX_TOTAL`],
    /// preserving ratios.
    pub fn from_counts(raw: &[u64]) -> Result<FreqTable> {
        if raw.is_empty() {
            return Err(SthqError::InvalidArgument("empty frequency table".into()));
        }
        let l = raw.len();
        if l as u64 >= MAX_TOTAL as u64 {
            return Err(SthqError::InvalidArgument(format!(
                "alphabet of {l} symbols exceeds the {MAX_TOTAL} frequency budget"
            )));
        }
        let mut counts: Vec<u64> = raw.iter().map(|&c| c + 1).collect();
        let total: u64 = counts.iter().sum();
        if total > MAX_TOTAL as u64 {
            // scale into the budget minus room for the max(1, .) floors
            let budget = (MAX_TOTAL as u64) - l as u64;
            for c in counts.iter_mut() {
                *c = ((*c as u128 * budget as u128) / total as u128).max(1) as u64;
            }
        }
        FreqTable::from_exact(counts.iter().map(|&c| c as u32).collect())
    }

    /// Use the given nonzero counts verbatim (decoder side; the table read
    /// from a container must match the encoder's bit for bit).
    pub fn from_exact(counts: Vec<u32>) -> Result<FreqTable> {
        if counts.is_empty() {
            return Err(SthqError::InvalidArgument("empty frequency table".into()));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(SthqError::Decode("frequency table with zero count".into()));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0u32);
        for &c in &counts {
            acc += c as u64;
            if acc > MAX_TOTAL as u64 {
                return Err(SthqError::Decode(format!(
                    "frequency total {acc} exceeds budget {MAX_TOTAL}"
                )));
            }
            cum.push(acc as u32);
        }
        Ok(FreqTable { counts, cum })
    }

    pub fn from_stream(stream: &SymbolStream) -> Result<FreqTable> {
        let mut raw = vec![0u64; stream.num_centers];
        for &s in &stream.symbols {
            raw[s as usize] += 1;
        }
        FreqTable::from_counts(&raw)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    pub fn freq(&self, sym: usize) -> u32 {
        self.counts[sym]
    }

    pub fn cum(&self, sym: usize) -> u32 {
        self.cum[sym]
    }

    /// Symbol whose cumulative interval contains `target`.
    pub fn lookup(&self, target: u32) -> usize {
        // cum is strictly increasing (all counts >= 1)
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Cross entropy of a stream under this model, bits per symbol times N.
    pub fn stream_cost_bits(&self, stream: &SymbolStream) -> f64 {
        let total = self.total() as f64;
        stream
            .symbols
            .iter()
            .map(|&s| -((self.counts[s as usize] as f64 / total).log2()))
            .sum()
    }
}
