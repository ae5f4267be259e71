//! `MODNET01` block container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MODNET01"
//! count      u32      number of blocks
//! per block:
//!   module   u32 length + UTF-8 bytes   e.g. "robot:r1"
//!   role     u32 length + UTF-8 bytes   e.g. "dense0.weight.tanh"
//!   ndims    u32, then ndims × u64      shape
//!   payload  prod(shape) × f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MODNET01";
pub const FORMAT_VERSION: &str = "01";
const MAGIC_STEM: &[u8; 6] = b"MODNET";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlock {
    pub module: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedBlock {
    pub fn new(
        module: impl Into<String>,
        role: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let module = module.into();
        let role = role.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("block {module}/{role}"), n, data.len()));
        }
        Ok(Self {
            module,
            role,
            shape,
            data,
        })
    }

    /// Bitwise comparison (distinguishes `-0.0` from `0.0`, equal NaN payloads compare equal).
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.module == other.module
            && self.role == other.role
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub blocks: Vec<NamedBlock>,
}

impl WeightFile {
    pub fn push(&mut self, block: NamedBlock) {
        self.blocks.push(block);
    }

    pub fn find(&self, module: &str, role: &str) -> Result<&NamedBlock> {
        self.blocks
            .iter()
            .find(|b| b.module == module && b.role == role)
            .ok_or_else(|| Error::MissingBlock {
                module: module.to_string(),
                role: role.to_string(),
            })
    }

    /// Blocks belonging to `module`, in file order.
    pub fn module_blocks<'a>(&'a self, module: &'a str) -> impl Iterator<Item = &'a NamedBlock> {
        self.blocks.iter().filter(move |b| b.module == module)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            write_str(&mut out, &b.module);
            write_str(&mut out, &b.role);
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Corrupt("file shorter than the magic header".into()));
        }
        let (magic, rest) = bytes.split_at(MAGIC.len());
        if magic != MAGIC {
            if magic.starts_with(MAGIC_STEM) {
                return Err(Error::Version(String::from_utf8_lossy(&magic[6..]).into_owned()));
            }
            return Err(Error::Corrupt("bad magic".into()));
        }
        let mut r = Reader { buf: rest };
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let module = r.string()?;
            let role = r.string()?;
            let ndims = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndims.min(16));
            let mut n: usize = 1;
            for _ in 0..ndims {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Corrupt("dimension overflows usize".into()))?;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::Corrupt("shape product overflows".into()))?;
                shape.push(d);
            }
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            blocks.push(NamedBlock {
                module,
                role,
                shape,
                data,
            });
        }
        if !r.buf.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self { blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Corrupt(format!(
                "truncated: wanted {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corrupt("block name is not UTF-8".into()))
    }
}
