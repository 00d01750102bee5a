//! Versioned binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  "MSCVITCK"
//! version  u32      1
//! dtype    u8       0 = f32, 1 = f64
//! config   u32 length + UTF-8 text (the effective model config)
//! step     u64
//! count    u32
//! entries  count × { name: u16 length + UTF-8, kind: u8, rank: u8,
//!                    dims: rank × u64, data: numel × dtype }
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::Model;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"MSCVITCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Param = 0,
    /// Batch-norm running statistics.
    Buffer = 1,
    /// Optimizer first moment, named after its parameter.
    Moment1 = 2,
    /// Optimizer second moment.
    Moment2 = 3,
}

impl EntryKind {
    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => EntryKind::Param,
            1 => EntryKind::Buffer,
            2 => EntryKind::Moment1,
            3 => EntryKind::Moment2,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T: Scalar> {
    pub name: String,
    pub kind: EntryKind,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: String,
    pub step: u64,
    pub entries: Vec<Entry<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.kind as u8);
            out.push(e.tensor.rank() as u8);
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in e.tensor.data() {
                match T::DTYPE {
                    DType::F32 => out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.to_f64().to_le_bytes()),
                }
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::CheckpointVersion(format!("{}: not a checkpoint (bad magic)", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion(format!(
                "{}: format version {version}, this build reads {VERSION}",
                path.display()
            )));
        }
        let dtype = r.u8()?;
        if dtype != T::DTYPE.code() {
            return Err(Error::CheckpointVersion(format!(
                "{}: stored dtype code {dtype}, expected {}",
                path.display(),
                T::DTYPE.code()
            )));
        }
        let len = r.u32()? as usize;
        let config = r.string(len)?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = r.string(len)?;
            let at = r.pos;
            let kind = EntryKind::from_code(r.u8()?).ok_or_else(|| r.err(at, "unknown entry kind"))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let at = r.pos;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(T::DTYPE.size()).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| r.err(at, "tensor larger than file"))?;
            let raw = r.take(numel * T::DTYPE.size())?;
            let data = match T::DTYPE {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            entries.push(Entry { name, kind, tensor: Tensor::from_vec(&shape, data)? });
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos as u64, "trailing bytes after last entry"));
        }
        Ok(Self { config, step, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?, path)
    }

    pub fn entries_of(&self, kind: EntryKind) -> HashMap<&str, &Tensor<T>> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| (e.name.as_str(), &e.tensor))
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: impl TryInto<u64>, detail: &str) -> Error {
        Error::Format {
            path: PathBuf::from(self.path),
            offset: offset.try_into().unwrap_or(u64::MAX),
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.pos, &format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(at, "invalid UTF-8"))
    }
}

impl<T: Scalar> Model<T> {
    /// Parameters and batch-norm running statistics.
    pub fn state_entries(&self) -> Vec<Entry<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            out.push(Entry { name: p.name.clone(), kind: EntryKind::Param, tensor: p.value.clone() })
        });
        self.visit_buffers(&mut |name, stats| {
            out.push(Entry { name: format!("{name}.running_mean"), kind: EntryKind::Buffer, tensor: stats.mean() });
            out.push(Entry { name: format!("{name}.running_var"), kind: EntryKind::Buffer, tensor: stats.var() });
        });
        out
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint<T> {
        Checkpoint { config: self.config.to_text(), step, entries: self.state_entries() }
    }

    /// Overwrites parameters and running statistics. Every one must be
    /// present with the right shape; nothing is modified on error.
    pub fn load_state(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        let params = ckpt.entries_of(EntryKind::Param);
        let buffers = ckpt.entries_of(EntryKind::Buffer);
        let lookup = |map: &HashMap<&str, &Tensor<T>>, name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            match map.get(name) {
                None => Err(Error::CheckpointShape(format!("missing tensor `{name}`"))),
                Some(t) if t.shape() != shape => Err(Error::CheckpointShape(format!(
                    "`{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                ))),
                Some(t) => Ok((*t).clone()),
            }
        };
        let mut new_params = Vec::new();
        let mut err = None;
        self.visit(&mut |p| match lookup(&params, &p.name, p.value.shape()) {
            Ok(t) => new_params.push(t),
            Err(e) => {
                err.get_or_insert(e);
            }
        });
        let mut new_stats = Vec::new();
        self.visit_buffers(&mut |name, stats| {
            let c = [stats.channels()];
            let m = lookup(&buffers, &format!("{name}.running_mean"), &c);
            let v = lookup(&buffers, &format!("{name}.running_var"), &c);
            match (m, v) {
                (Ok(m), Ok(v)) => new_stats.push((m, v)),
                (Err(e), _) | (_, Err(e)) => {
                    err.get_or_insert(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mut it = new_params.into_iter();
        self.visit_mut(&mut |p| p.value = it.next().expect("visit order is stable"));
        let mut it = new_stats.into_iter();
        let mut res = Ok(());
        self.visit_buffers(&mut |_, stats| {
            let (m, v) = it.next().expect("visit order is stable");
            if let Err(e) = stats.set(m, v) {
                res = Err(e);
            }
        });
        res
    }
}
