//! Binary checkpoint format.
//!
//! ```text
//! magic    "TDCNNCK1"                        8 bytes
//! version  u8
//! spec     u32 LE byte length + UTF-8 key=value lines
//! seed     u64 LE
//! then, per parameter, in model order:
//!   name length u16 LE, name bytes, rank u8, extents u32 LE × rank,
//!   payload f32 LE × product(extents)
//! ```
//!
//! Parameters are always stored as 32-bit reals; 64-bit models are narrowed
//! on save.

use std::fs;
use std::path::{Path, PathBuf};

use crate::arch::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MAGIC: &[u8; 8] = b"TDCNNCK1";
pub const VERSION: u8 = 1;

pub fn encode<T: Real>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let spec = model.spec().to_lines();
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    for (name, t) in model.param_names().iter().zip(model.params()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let malformed = |msg: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        msg,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "TDCNNCK1",
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let spec_len = r.u32("spec length")? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len, "spec")?)
        .map_err(|_| malformed("spec is not UTF-8".into()))?;
    let spec = ModelSpec::from_lines(spec_text).map_err(|e| malformed(e.to_string()))?;
    let seed = r.u64("seed")?;

    let mut model = Model::<f32>::zeros(spec, seed)?;
    let expected = model.params().len();
    let mut loaded = 0;
    for (name, tensor) in model.named_params_mut() {
        if r.done() {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                what: format!("expected {expected} parameters, found {loaded}"),
            });
        }
        let len = r.u16("parameter name length")? as usize;
        let found = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| malformed("parameter name is not UTF-8".into()))?;
        if found != name {
            return Err(malformed(format!("expected parameter `{name}`, found `{found}`")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        if shape != tensor.shape() {
            return Err(malformed(format!(
                "`{name}` has shape {shape:?}, spec requires {:?}",
                tensor.shape()
            )));
        }
        let payload = r.take(4 * tensor.len(), &format!("payload of `{name}`"))?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        loaded += 1;
    }
    if !r.done() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model.cast())
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode(&bytes, &path)
}
