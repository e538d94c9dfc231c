//! Range asymmetric numeral system coder over 16-bit quantised PMFs.
//!
//! The coder keeps a 32-bit state between 2^24 and 2^32 and renormalises a
//! byte at a time, so a stream costs at most a few dozen bits beyond the
//! information content of its symbols. Encoding is last-in-first-out:
//! symbols are buffered with their frequency intervals and folded into the
//! state in reverse once the stream is finished, which lets the decoder
//! consume bytes strictly front to back.

use thiserror::Error;

use crate::entropy::{DiscretePmf, PRECISION_BITS};

/// Lower bound of the coder state; renormalisation keeps the state in
/// `[STATE_LOW, STATE_LOW << 8)`.
const STATE_LOW: u64 = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoderError {
    #[error("entropy stream truncated at byte {at}")]
    Truncated { at: usize },
    #[error("entropy stream corrupt: {0}")]
    Corrupt(&'static str),
}

#[derive(Default)]
pub struct RansEncoder {
    /// Frequency and cumulative frequency of each symbol, in stream order.
    pairs: Vec<(u32, u32)>,
    ideal_bits: f64,
}

impl RansEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a symbol coded under `pmf`. Panics if the symbol lies
    /// outside the PMF's support: models must always cover the data.
    pub fn put(&mut self, sym: i64, pmf: &DiscretePmf) {
        let f = pmf.freq(sym);
        let c = pmf.cum(sym);
        self.pairs.push((f, c));
        self.ideal_bits += PRECISION_BITS as f64 - (f as f64).log2();
    }

    pub fn symbols(&self) -> usize {
        self.pairs.len()
    }

    /// Information content of the buffered symbols under their quantised
    /// models, in bits.
    pub fn ideal_bits(&self) -> f64 {
        self.ideal_bits
    }

    /// Folds the buffered symbols into the coder state and returns the
    /// stream bytes. Always at least four bytes: the flushed final state.
    pub fn finish(self) -> Vec<u8> {
        let mut x: u64 = STATE_LOW;
        let mut rev: Vec<u8> = Vec::with_capacity(self.pairs.len() / 2 + 4);
        for &(f, c) in self.pairs.iter().rev() {
            let f = f as u64;
            while x >= f << PRECISION_BITS {
                rev.push(x as u8);
                x >>= 8;
            }
            x = (x / f) << PRECISION_BITS | (x % f + c as u64);
            debug_assert!(x < STATE_LOW << 8);
        }
        for shift in [0, 8, 16, 24] {
            rev.push((x >> shift) as u8);
        }
        rev.reverse();
        rev
    }
}

pub struct RansDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    x: u64,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, CoderError> {
        if bytes.len() < 4 {
            return Err(CoderError::Truncated { at: bytes.len() });
        }
        let x = (bytes[0] as u64) << 24
            | (bytes[1] as u64) << 16
            | (bytes[2] as u64) << 8
            | bytes[3] as u64;
        if x < STATE_LOW {
            return Err(CoderError::Corrupt("initial state below renormalisation floor"));
        }
        Ok(Self { bytes, pos: 4, x })
    }

    pub fn get(&mut self, pmf: &DiscretePmf) -> Result<i64, CoderError> {
        let slot = (self.x & ((1 << PRECISION_BITS) - 1)) as u32;
        let sym = pmf.symbol_at(slot);
        let f = pmf.freq(sym) as u64;
        let c = pmf.cum(sym) as u64;
        self.x = f * (self.x >> PRECISION_BITS) + slot as u64 - c;
        while self.x < STATE_LOW {
            let Some(&b) = self.bytes.get(self.pos) else {
                return Err(CoderError::Truncated { at: self.pos });
            };
            self.x = self.x << 8 | b as u64;
            self.pos += 1;
        }
        Ok(sym)
    }

    /// Verifies the stream was fully and exactly consumed.
    pub fn finish(self) -> Result<(), CoderError> {
        if self.x != STATE_LOW {
            return Err(CoderError::Corrupt("final state mismatch"));
        }
        if self.pos != self.bytes.len() {
            return Err(CoderError::Corrupt("trailing bytes after final symbol"));
        }
        Ok(())
    }
}
