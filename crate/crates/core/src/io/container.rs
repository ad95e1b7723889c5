//! Named-tensor binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AXSP" | version: u32 | entry count: u32
//! per entry: name len: u16 | name (UTF-8) | dtype: u8 | rank: u8 | dims: u32 * rank | payload
//! ```
//!
//! dtype codes: 0 = f64, 1 = f32, 2 = i64.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AXSP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum EntryData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl EntryData {
    pub fn dtype(&self) -> DType {
        match self {
            EntryData::F64(_) => DType::F64,
            EntryData::F32(_) => DType::F32,
            EntryData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EntryData::F64(v) => v.len(),
            EntryData::F32(v) => v.len(),
            EntryData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub dims: Vec<u32>,
    pub data: EntryData,
}

/// Ordered collection of named tensors. Entry order is preserved on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("entry name too long: {} bytes", name.len())));
        }
        let expected: usize = entry.dims.iter().map(|&d| d as usize).product();
        if entry.dims.len() > u8::MAX as usize || expected != entry.data.len() {
            return Err(Error::Format(format!("entry '{name}' dims {:?} do not match payload", entry.dims)));
        }
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, e)) => *e = entry,
            None => self.entries.push((name, entry)),
        }
        Ok(())
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let dims = t.shape().iter().map(|&d| d as u32).collect();
        let data = match T::DTYPE {
            DType::F64 => EntryData::F64(t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()),
            DType::F32 => EntryData::F32(t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()),
            DType::I64 => unreachable!("float scalars only"),
        };
        self.insert(name, Entry { dims, data })
    }

    pub fn insert_i64(&mut self, name: impl Into<String>, dims: &[usize], values: Vec<i64>) -> Result<()> {
        self.insert(
            name,
            Entry {
                dims: dims.iter().map(|&d| d as u32).collect(),
                data: EntryData::I64(values),
            },
        )
    }

    /// Reads a float entry as a tensor of `T`. The stored dtype must match `T`
    /// so values round-trip bit-exactly.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.get(name).ok_or_else(|| Error::Format(format!("missing entry '{name}'")))?;
        let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        let data: Vec<T> = match (&e.data, T::DTYPE) {
            (EntryData::F64(v), DType::F64) => v.iter().map(|&x| T::from_f64(x).expect("f64")).collect(),
            (EntryData::F32(v), DType::F32) => v.iter().map(|&x| T::from_f32(x).expect("f32")).collect(),
            (d, want) => {
                return Err(Error::Format(format!(
                    "entry '{name}' has dtype {:?}, expected {:?}",
                    d.dtype(),
                    want
                )))
            }
        };
        Tensor::new(&dims, data)
    }

    pub fn i64s(&self, name: &str) -> Result<(&[u32], &[i64])> {
        let e = self.get(name).ok_or_else(|| Error::Format(format!("missing entry '{name}'")))?;
        match &e.data {
            EntryData::I64(v) => Ok((&e.dims, v)),
            d => Err(Error::Format(format!("entry '{name}' has dtype {:?}, expected I64", d.dtype()))),
        }
    }

    /// Stores UTF-8 text as an `i64` byte vector.
    pub fn insert_text(&mut self, name: impl Into<String>, text: &str) -> Result<()> {
        let bytes: Vec<i64> = text.bytes().map(i64::from).collect();
        self.insert_i64(name, &[bytes.len()], bytes)
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let (_, v) = self.i64s(name)?;
        let bytes = v
            .iter()
            .map(|&b| u8::try_from(b).map_err(|_| Error::Format(format!("entry '{name}' is not text"))))
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| Error::Format(format!("entry '{name}' is not UTF-8")))
    }

    /// Single integer stored as a rank-1, length-1 `i64` entry.
    pub fn int(&self, name: &str) -> Result<i64> {
        match self.i64s(name)? {
            (_, [v]) => Ok(*v),
            _ => Err(Error::Format(format!("entry '{name}' is not a single integer"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.data.dtype().code());
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &e.data {
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not an AXSP container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let count = r.u32()?;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| Error::Format(format!("unknown dtype in '{name}'")))?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let count = count.ok_or_else(|| Error::Format(format!("entry '{name}' too large")))?;
            let payload = r.take(count.checked_mul(dtype.size()).ok_or_else(|| Error::Format("overflow".into()))?)?;
            let data = match dtype {
                DType::F64 => EntryData::F64(payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::F32 => EntryData::F32(payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::I64 => EntryData::I64(payload.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect()),
            };
            c.insert(name, Entry { dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
