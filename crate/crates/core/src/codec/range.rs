//! Static-model range coder with a 32-bit range, carry propagation through a
//! cached byte, and renormalization below 2^24.

use crate::error::{Error, Result};

/// Largest allowed frequency total.
pub const MAX_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;

/// Normalized symbol frequencies. Totals never exceed [`MAX_TOTAL`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    freqs: [u32; 256],
    cum: [u32; 257],
}

impl FreqTable {
    /// Rejects all-zero tables and totals above [`MAX_TOTAL`].
    pub fn new(freqs: [u32; 256]) -> Result<Self> {
        let mut cum = [0u32; 257];
        for (i, &f) in freqs.iter().enumerate() {
            cum[i + 1] = cum[i]
                .checked_add(f)
                .ok_or_else(|| Error::Corrupt("frequency total overflows".into()))?;
        }
        if cum[256] == 0 || cum[256] > MAX_TOTAL {
            return Err(Error::Corrupt(format!(
                "frequency total {} outside 1..={MAX_TOTAL}",
                cum[256]
            )));
        }
        Ok(Self { freqs, cum })
    }

    /// Every symbol gets the same frequency.
    pub fn uniform() -> Self {
        Self::new([MAX_TOTAL / 256; 256]).expect("uniform table is valid")
    }

    /// Add-one smoothed counts, scaled down when needed so the total fits.
    /// Every entry stays at least 1.
    pub fn from_symbols(symbols: &[u8]) -> Self {
        let mut counts = [1u64; 256];
        for &s in symbols {
            counts[s as usize] += 1;
        }
        let sum: u64 = counts.iter().sum();
        let mut freqs = [0u32; 256];
        if sum <= MAX_TOTAL as u64 {
            for (f, &c) in freqs.iter_mut().zip(&counts) {
                *f = c as u32;
            }
        } else {
            let budget = (MAX_TOTAL - 256) as u64;
            for (f, &c) in freqs.iter_mut().zip(&counts) {
                *f = ((c * budget / sum) as u32).max(1);
            }
        }
        Self::new(freqs).expect("normalized table is valid")
    }

    pub fn freqs(&self) -> &[u32; 256] {
        &self.freqs
    }

    pub fn total(&self) -> u32 {
        self.cum[256]
    }

    /// Cross-entropy of `symbols` under this model, in bits.
    pub fn cross_entropy_bits(&self, symbols: &[u8]) -> f64 {
        let total = self.total() as f64;
        symbols
            .iter()
            .map(|&s| -(self.freqs[s as usize] as f64 / total).log2())
            .sum()
    }

    fn symbol_at(&self, target: u32) -> u8 {
        (self.cum.partition_point(|&c| c <= target) - 1) as u8
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            out: Vec::new(),
        }
    }

    /// Fails with [`Error::ZeroFrequency`] if the model gives `sym` no mass.
    pub fn encode(&mut self, sym: u8, table: &FreqTable) -> Result<()> {
        let freq = table.freqs[sym as usize];
        if freq == 0 {
            return Err(Error::ZeroFrequency(sym));
        }
        let r = self.range / table.total();
        self.low += r as u64 * table.cum[sym as usize] as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Corrupt("range-coded payload shorter than 5 bytes".into()));
        }
        let mut d = Self {
            bytes,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<u8> {
        let r = self.range / table.total();
        let target = (self.code / r).min(table.total() - 1);
        let sym = table.symbol_at(target);
        let freq = table.freqs[sym as usize];
        self.code -= r * table.cum[sym as usize];
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
        // A well-formed stream never reads more than a few bytes past its end.
        if self.pos > self.bytes.len() + 4 {
            return Err(Error::Corrupt("range-coded payload truncated".into()));
        }
        Ok(sym)
    }
}

/// Encodes a whole symbol stream under one table.
pub fn entropy_encode(symbols: &[u8], table: &FreqTable) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode(s, table)?;
    }
    Ok(enc.finish())
}

pub fn entropy_decode(bytes: &[u8], table: &FreqTable, n: usize) -> Result<Vec<u8>> {
    let mut dec = RangeDecoder::new(bytes)?;
    (0..n).map(|_| dec.decode(table)).collect()
}
