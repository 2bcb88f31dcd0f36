//! `NNCK` checkpoint files: named little-endian `f32` tensors.
//!
//! Layout: magic `NNCK`, format version (`u32` LE), record count (`u32` LE),
//! then per record: name length (`u32` LE), UTF-8 name, rank (`u32` LE),
//! dims (`u32` LE each), raw `f32` LE payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::Network;

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape(format!("tensor `{name}` of shape {shape:?} has {} values", data.len())));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(NnError::Malformed(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push(NamedTensor { name, shape, data });
        Ok(())
    }

    /// Records every parameter of `net` under its own name.
    pub fn push_network(&mut self, net: &Network<f32>) -> Result<()> {
        for p in net.params() {
            self.push(p.name.clone(), p.shape.clone(), p.value.clone())?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    /// Overwrites the parameters of `net` with the stored tensors of the same name.
    pub fn load_network(&self, net: &mut Network<f32>) -> Result<()> {
        for p in net.params_mut() {
            let t = self.get(&p.name)?;
            if t.shape != p.shape {
                return Err(NnError::Shape(format!("`{}` stored as {:?}, network expects {:?}", p.name, t.shape, p.shape)));
            }
            p.value.copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::VersionMismatch { found: version, expected: VERSION });
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or(NnError::Truncated)?)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            ck.push(name, shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(NnError::Malformed("trailing bytes after last tensor".into()));
        }
        Ok(ck)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(NnError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(NnError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
