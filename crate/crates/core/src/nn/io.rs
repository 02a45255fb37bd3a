//! The SSWT weights container.
//!
//! Layout, all integers little-endian: magic `SSWT`, `u32` version, `u32`
//! header length and that many header bytes, `u32` tensor count, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u32` dims and
//! the raw `f32` values.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSWT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub header: Vec<u8>,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

pub fn write<W: Write>(out: &mut W, file: &WeightsFile) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(file.header.len() as u32).to_le_bytes())?;
    out.write_all(&file.header)?;
    out.write_all(&(file.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &file.tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::MalformedManifest(format!("tensor name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut raw = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&raw)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

pub fn read<R: Read>(input: &mut R) -> Result<WeightsFile> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    parse(&buf)
}

pub fn parse(buf: &[u8]) -> Result<WeightsFile> {
    let mut c = Cursor { buf, pos: 0 };
    if buf.len() < 4 {
        return Err(Error::Truncated);
    }
    if c.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let hlen = c.u32()? as usize;
    let header = c.take(hlen)?.to_vec();
    let count = c.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| Error::MalformedManifest("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(WeightsFile { header, tensors })
}

impl WeightsFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write(&mut out, self).expect("writing to memory");
        out
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }
}
