//! Integer frequency tables over contiguous symbol ranges.

use thiserror::Error;

/// Frequencies are expressed in units of 2^-16.
pub const PRECISION_BITS: u32 = 16;
/// Every PMF's frequencies sum to exactly this value.
pub const PMF_TOTAL: u32 = 1 << PRECISION_BITS;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("pmf must have between 1 and {} symbols, got {0}", PMF_TOTAL)]
    BadSupport(usize),
    #[error("pmf weights must be finite and non-negative with positive mass")]
    BadWeights,
    #[error("frequencies sum to {0}, expected {}", PMF_TOTAL)]
    BadSum(u64),
    #[error("frequency for symbol {0} is zero")]
    ZeroFrequency(i64),
}

/// A quantised probability mass function over the contiguous symbol range
/// `lo ..= lo + len - 1`.
///
/// Invariants: every frequency is at least 1 and the frequencies sum to
/// exactly [`PMF_TOTAL`], so the cumulative table is strictly increasing and
/// ends at 2^16 regardless of how the source weights were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePmf {
    lo: i64,
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl DiscretePmf {
    pub fn from_freqs(lo: i64, freqs: Vec<u32>) -> Result<Self, EntropyError> {
        if freqs.is_empty() || freqs.len() > PMF_TOTAL as usize {
            return Err(EntropyError::BadSupport(freqs.len()));
        }
        let sum: u64 = freqs.iter().map(|&f| f as u64).sum();
        if sum != PMF_TOTAL as u64 {
            return Err(EntropyError::BadSum(sum));
        }
        if let Some(i) = freqs.iter().position(|&f| f == 0) {
            return Err(EntropyError::ZeroFrequency(lo + i as i64));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in &freqs {
            acc += f;
            cum.push(acc);
        }
        Ok(Self { lo, freqs, cum })
    }

    /// Quantises non-negative weights to integer frequencies.
    ///
    /// Each weight receives `floor(p * 2^16)` units (at least 1), and the
    /// leftover units go to the largest fractional remainders, lowest symbol
    /// first on ties. If the minimum-frequency floor overshoots the budget,
    /// units are removed from the currently largest frequency, never from
    /// the most probable symbol while any alternative remains above 1, so
    /// the argmax of the weights stays an argmax of the frequencies.
    pub fn quantize(lo: i64, weights: &[f64]) -> Result<Self, EntropyError> {
        let k = weights.len();
        if k == 0 || k > PMF_TOTAL as usize {
            return Err(EntropyError::BadSupport(k));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EntropyError::BadWeights);
        }
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(EntropyError::BadWeights);
        }

        let mut freqs = vec![0u32; k];
        let mut remainders = vec![0.0f64; k];
        let mut total = 0u64;
        for (i, &w) in weights.iter().enumerate() {
            let raw = w / mass * PMF_TOTAL as f64;
            let base = (raw.floor() as u64).min(PMF_TOTAL as u64) as u32;
            remainders[i] = raw - raw.floor();
            freqs[i] = base.max(1);
            total += freqs[i] as u64;
        }

        if total < PMF_TOTAL as u64 {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| {
                remainders[b]
                    .partial_cmp(&remainders[a])
                    .expect("finite remainders")
                    .then(a.cmp(&b))
            });
            let mut missing = PMF_TOTAL as u64 - total;
            for &i in order.iter().cycle() {
                if missing == 0 {
                    break;
                }
                freqs[i] += 1;
                missing -= 1;
            }
        } else if total > PMF_TOTAL as u64 {
            let argmax = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite weights").then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("non-empty");
            let mut surplus = total - PMF_TOTAL as u64;
            // (frequency, index) max-heap; higher index stripped first on ties.
            let mut heap: std::collections::BinaryHeap<(u32, usize)> = (0..k)
                .filter(|&i| i != argmax && freqs[i] > 1)
                .map(|i| (freqs[i], i))
                .collect();
            while surplus > 0 {
                match heap.pop() {
                    Some((f, i)) => {
                        freqs[i] = f - 1;
                        if f - 1 > 1 {
                            heap.push((f - 1, i));
                        }
                    }
                    None => {
                        debug_assert!(freqs[argmax] as u64 > surplus);
                        freqs[argmax] -= surplus as u32;
                        surplus = 1;
                    }
                }
                surplus -= 1;
            }
        }

        Self::from_freqs(lo, freqs)
    }

    /// Two-symbol PMF over `{0, 1}` with `P(1) = p1`, clamped so both
    /// outcomes stay representable.
    pub fn bernoulli(p1: f64) -> Self {
        let p1 = if p1.is_finite() { p1.clamp(0.0, 1.0) } else { 0.5 };
        let f1 = ((p1 * PMF_TOTAL as f64).round() as i64).clamp(1, PMF_TOTAL as i64 - 1) as u32;
        Self::from_freqs(0, vec![PMF_TOTAL - f1, f1]).expect("valid bernoulli")
    }

    /// Softmax of the logits, quantised. Symbols are `0 ..= logits.len()-1`.
    pub fn categorical(logits: &[f64]) -> Result<Self, EntropyError> {
        if logits.is_empty() {
            return Err(EntropyError::BadSupport(0));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(EntropyError::BadWeights);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        Self::quantize(0, &weights)
    }

    pub fn uniform(lo: i64, len: usize) -> Result<Self, EntropyError> {
        Self::quantize(lo, &vec![1.0; len])
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.freqs.len() as i64 - 1
    }

    pub fn contains(&self, sym: i64) -> bool {
        sym >= self.lo && sym <= self.hi()
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn freq(&self, sym: i64) -> u32 {
        assert!(self.contains(sym), "symbol {sym} outside [{}, {}]", self.lo, self.hi());
        self.freqs[(sym - self.lo) as usize]
    }

    /// Cumulative frequency of all symbols below `sym`.
    pub fn cum(&self, sym: i64) -> u32 {
        assert!(self.contains(sym), "symbol {sym} outside [{}, {}]", self.lo, self.hi());
        self.cum[(sym - self.lo) as usize]
    }

    /// Ideal code length of `sym` in bits under the quantised model.
    pub fn bits(&self, sym: i64) -> f64 {
        PRECISION_BITS as f64 - (self.freq(sym) as f64).log2()
    }

    /// Probability of `sym` under the quantised model.
    pub fn prob(&self, sym: i64) -> f64 {
        self.freq(sym) as f64 / PMF_TOTAL as f64
    }

    /// Maps a cumulative slot in `0..2^16` back to its symbol.
    pub fn symbol_at(&self, slot: u32) -> i64 {
        debug_assert!(slot < PMF_TOTAL);
        let idx = match self.cum.binary_search(&slot) {
            Ok(i) => {
                // `slot` equals cum[i]; the owning symbol is the next one
                // unless i already points past a zero-width prefix (cannot
                // happen: frequencies are positive, cum strictly increases).
                i
            }
            Err(i) => i - 1,
        };
        self.lo + idx as i64
    }

    pub fn argmax(&self) -> i64 {
        let mut best = 0usize;
        for (i, &f) in self.freqs.iter().enumerate() {
            if f > self.freqs[best] {
                best = i;
            }
        }
        self.lo + best as i64
    }
}

/// Discretises a continuous CDF to a PMF over `lo ..= hi`.
///
/// Interior symbols receive the mass of their unit interval,
/// `C(u(k + 1/2)) - C(u(k - 1/2))`, where `u` maps raw symbol values to the
/// CDF's input coordinate. The boundary symbols absorb the tails, so the
/// weights telescope to the full unit of probability before quantisation.
pub fn pmf_from_cdf(
    cdf: impl Fn(f64) -> f64,
    u: impl Fn(f64) -> f64,
    lo: i64,
    hi: i64,
) -> Result<DiscretePmf, EntropyError> {
    assert!(lo <= hi, "empty symbol range {lo}..={hi}");
    let k = (hi - lo) as usize + 1;
    if k == 1 {
        return DiscretePmf::from_freqs(lo, vec![PMF_TOTAL]);
    }
    let mut weights = Vec::with_capacity(k);
    let mut lower = 0.0;
    for sym in lo..hi {
        let upper = cdf(u(sym as f64 + 0.5));
        weights.push((upper - lower).max(0.0));
        lower = upper;
    }
    weights.push((1.0 - lower).max(0.0));
    DiscretePmf::quantize(lo, &weights)
}
