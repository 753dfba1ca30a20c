//! Named-tensor checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DECK"  u32 version (=1)
//! u32 header_len, header_len bytes of UTF-8 (free-form, JSON by convention)
//! u32 tensor_count
//! per tensor:
//!   u16 name_len, name bytes (UTF-8)
//!   u8 ndim, ndim × u32 dims
//!   product(dims) × f32 payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DECK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(header: impl Into<String>) -> Self {
        Self {
            header: header.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = self.header.as_bytes();
        w.write_all(&u32::try_from(header.len()).map_err(|_| too_big("header"))?.to_le_bytes())?;
        w.write_all(header)?;
        w.write_all(&u32::try_from(self.tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes())?;
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            w.write_all(&u16::try_from(nb.len()).map_err(|_| too_big("name"))?.to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[u8::try_from(t.ndim()).map_err(|_| too_big("rank"))?])?;
            for &d in t.shape() {
                w.write_all(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.numel());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = read_u32(r, "header length")? as usize;
        let mut header = vec![0u8; hlen];
        read_exact(r, &mut header, "header")?;
        let header = String::from_utf8(header).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let count = read_u32(r, "tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            read_exact(r, &mut b2, "name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            read_exact(r, &mut name, "name")?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let mut nd = [0u8; 1];
            read_exact(r, &mut nd, "rank")?;
            let mut shape = Vec::with_capacity(nd[0] as usize);
            for _ in 0..nd[0] {
                shape.push(read_u32(r, "dimension")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; 4 * n];
            read_exact(r, &mut raw, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} exceeds the format's field width"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_in_memory() {
        let mut ck = Checkpoint::new(r#"{"kind":"test"}"#);
        ck.push("a", Tensor::new(vec![2, 3], (0..6).map(|i| i as f32 * 0.5).collect()).unwrap());
        ck.push("b.bias", Tensor::scalar(-1.25));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_is_reported() {
        let mut ck = Checkpoint::new("");
        ck.push("w", Tensor::zeros(vec![4]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = Checkpoint::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
