//! Binary checkpoints: magic, format version, a UTF-8 key-value metadata
//! block, then named little-endian arrays tagged `f32`, `c64`, `f64` or
//! `c128`. Writers emit the 64-bit tags; readers accept all four.

use std::collections::BTreeMap;
use std::path::Path;

use metaaf_core::params::{Dtype, Param, ParamSet};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"METAAFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayType {
    F32,
    C64,
    F64,
    C128,
}

impl ArrayType {
    pub fn tag(self) -> &'static str {
        match self {
            ArrayType::F32 => "f32",
            ArrayType::C64 => "c64",
            ArrayType::F64 => "f64",
            ArrayType::C128 => "c128",
        }
    }

    fn parse(tag: &str) -> Option<Self> {
        Some(match tag {
            "f32" => ArrayType::F32,
            "c64" => ArrayType::C64,
            "f64" => ArrayType::F64,
            "c128" => ArrayType::C128,
            _ => return None,
        })
    }

    pub fn is_complex(self) -> bool {
        matches!(self, ArrayType::C64 | ArrayType::C128)
    }
}

/// Complex payloads hold all real parts, then all imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub dtype: ArrayType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<Array>,
}

impl Checkpoint {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("checkpoint lacks metadata `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::Config(format!("checkpoint metadata `{key}` = {v:?} is malformed")))
    }

    pub fn push_vector(&mut self, name: &str, data: &[f64]) {
        self.arrays.push(Array { name: name.into(), dtype: ArrayType::F64, shape: vec![data.len()], data: data.to_vec() });
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks array `{name}`")))
    }

    /// Adds every parameter under `prefix`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for p in params.params() {
            self.arrays.push(Array {
                name: format!("{prefix}{}", p.name),
                dtype: match p.dtype {
                    Dtype::Real => ArrayType::F64,
                    Dtype::Complex => ArrayType::C128,
                },
                shape: vec![p.rows, p.cols],
                data: p.data.clone(),
            });
        }
    }

    /// Reads the parameters stored under `prefix` into the layout of `like`.
    pub fn params(&self, prefix: &str, like: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for p in like.params() {
            let a = self.array(&format!("{prefix}{}", p.name))?;
            let complex = p.dtype == Dtype::Complex;
            if a.dtype.is_complex() != complex || a.shape != [p.rows, p.cols] {
                return Err(Error::Config(format!(
                    "checkpoint array `{}` is {} {:?}, model expects {:?} {}x{}",
                    a.name,
                    a.dtype.tag(),
                    a.shape,
                    p.dtype,
                    p.rows,
                    p.cols
                )));
            }
            out.push(Param { name: p.name.clone(), dtype: p.dtype, rows: p.rows, cols: p.cols, data: a.data.clone() });
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let put_str = |b: &mut Vec<u8>, s: &str| {
            b.extend_from_slice(&(s.len() as u32).to_le_bytes());
            b.extend_from_slice(s.as_bytes());
        };
        b.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut b, k);
            put_str(&mut b, v);
        }
        b.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            put_str(&mut b, &a.name);
            put_str(&mut b, a.dtype.tag());
            b.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &a.data {
                match a.dtype {
                    ArrayType::F32 | ArrayType::C64 => b.extend_from_slice(&(v as f32).to_le_bytes()),
                    ArrayType::F64 | ArrayType::C128 => b.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let tag = r.string()?;
            let dtype = ArrayType::parse(&tag).ok_or_else(|| format!("array `{name}` has unknown dtype `{tag}`"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let mut n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or("array too large")?;
            if dtype.is_complex() {
                n *= 2;
            }
            let data = match dtype {
                ArrayType::F32 | ArrayType::C64 => {
                    let raw = r.take(n.checked_mul(4).ok_or("array too large")?)?;
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
                }
                ArrayType::F64 | ArrayType::C128 => {
                    let raw = r.take(n.checked_mul(8).ok_or("array too large")?)?;
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
                }
            };
            ck.arrays.push(Array { name, dtype, shape, data });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after last array".into());
        }
        Ok(ck)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match Error::io(path, e) {
            Error::Missing { path, .. } => Error::Missing { what: "checkpoint", path },
            other => other,
        })?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Writes through a temporary file so readers never see a partial checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or("truncated checkpoint")?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "metadata is not UTF-8".to_string())
    }
}
