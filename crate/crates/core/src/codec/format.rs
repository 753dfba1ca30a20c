//! Byte layout of a coded scene, little-endian throughout:
//!
//! ```text
//! "NIFI" | u16 version | u8 level | u32 count | u8 sh_degree
//! per channel: f32 min, f32 step
//! per channel: 256 × u32 frequency
//! u64 payload length | payload | u32 CRC-32 of everything before it
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;

use super::quant::{channel_count, channels, dequantize_channel, from_channels, quantize_channel, QuantParams};
use super::range::{FreqTable, RangeDecoder, RangeEncoder};

pub const MAGIC: &[u8; 4] = b"NIFI";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CodedScene {
    pub level: u8,
    pub count: u32,
    pub sh_degree: u8,
    pub params: Vec<QuantParams>,
    pub tables: Vec<FreqTable>,
    pub payload: Vec<u8>,
}

impl CodedScene {
    /// Quantizes and entropy-codes a set. Each channel has its own
    /// parameters and table; symbols are coded channel by channel.
    pub fn encode(gs: &GaussianSet, level: u8) -> Result<Self> {
        gs.validate()?;
        let mut params = Vec::new();
        let mut tables = Vec::new();
        let mut streams = Vec::new();
        for ch in channels(gs) {
            let (symbols, p) = quantize_channel(&ch)?;
            tables.push(FreqTable::from_symbols(&symbols));
            params.push(p);
            streams.push(symbols);
        }
        let mut enc = RangeEncoder::new();
        for (symbols, table) in streams.iter().zip(&tables) {
            for &s in symbols {
                enc.encode(s, table)?;
            }
        }
        Ok(Self {
            level,
            count: gs.len() as u32,
            sh_degree: gs.sh_degree,
            params,
            tables,
            payload: enc.finish(),
        })
    }

    pub fn decode(&self) -> Result<GaussianSet> {
        let n = self.count as usize;
        let mut dec = RangeDecoder::new(&self.payload)?;
        let mut chans = Vec::with_capacity(self.params.len());
        for (p, table) in self.params.iter().zip(&self.tables) {
            let symbols = (0..n).map(|_| dec.decode(table)).collect::<Result<Vec<u8>>>()?;
            chans.push(dequantize_channel(&symbols, p));
        }
        from_channels(&chans, self.sh_degree).map_err(|e| Error::Corrupt(format!("decoded scene invalid: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_hint());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.level);
        out.extend_from_slice(&self.count.to_le_bytes());
        out.push(self.sh_degree);
        for p in &self.params {
            out.extend_from_slice(&p.min.to_le_bytes());
            out.extend_from_slice(&p.step.to_le_bytes());
        }
        for t in &self.tables {
            for f in t.freqs() {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn size_hint(&self) -> usize {
        12 + self.params.len() * (8 + 1024) + 8 + self.payload.len() + 4
    }

    /// Size of the serialized file in bytes.
    pub fn size_bytes(&self) -> usize {
        self.size_hint()
    }

    /// Verifies the checksum before parsing anything else.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 12 + 8 {
            return Err(Error::Corrupt(format!("{} bytes is too short for a coded scene", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = u16::from_le_bytes(r.take::<2>()?);
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let level = r.take::<1>()?[0];
        let count = u32::from_le_bytes(r.take::<4>()?);
        let sh_degree = r.take::<1>()?[0];
        if sh_degree > 3 {
            return Err(Error::Corrupt(format!("SH degree {sh_degree} out of range")));
        }
        if count == 0 {
            return Err(Error::Corrupt("zero primitives".into()));
        }
        let nch = channel_count(sh_degree);
        let mut params = Vec::with_capacity(nch);
        for _ in 0..nch {
            let min = f32::from_le_bytes(r.take::<4>()?);
            let step = f32::from_le_bytes(r.take::<4>()?);
            if !min.is_finite() || !step.is_finite() || step <= 0.0 {
                return Err(Error::Corrupt("invalid quantization parameters".into()));
            }
            params.push(QuantParams { min, step });
        }
        let mut tables = Vec::with_capacity(nch);
        for _ in 0..nch {
            let mut f = [0u32; 256];
            for v in f.iter_mut() {
                *v = u32::from_le_bytes(r.take::<4>()?);
            }
            tables.push(FreqTable::new(f)?);
        }
        let len = u64::from_le_bytes(r.take::<8>()?) as usize;
        if r.bytes.len() - r.pos != len {
            return Err(Error::Corrupt(format!(
                "payload length {len} disagrees with {} remaining bytes",
                r.bytes.len() - r.pos
            )));
        }
        Ok(Self {
            level,
            count,
            sh_degree,
            params,
            tables,
            payload: r.bytes[r.pos..].to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Corrupt(format!("header truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> CodedScene {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        CodedScene::encode(&GaussianSet::random(50, 1, &mut rng), 2).unwrap()
    }

    #[test]
    fn bytes_roundtrip_and_size() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), c.size_bytes());
        assert_eq!(CodedScene::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(CodedScene::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }
}
