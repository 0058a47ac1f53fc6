//! Self-describing container of named arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "IUCKPT\0\0"
//! version  u32      currently 1
//! count    u32      number of entries
//! entry*   name_len u32, name (utf-8), dtype u8, ndim u32, dims u64 x ndim,
//!          payload_len u64, payload
//! ```
//!
//! dtype: 1 = f32, 2 = f64, 3 = u64, 4 = utf-8 text. Floats are stored as raw
//! IEEE bits so save/load is bit-exact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"IUCKPT\0\0";
const FORMAT_VERSION: u32 = 1;

pub const DTYPE_U64: u8 = 3;
pub const DTYPE_TEXT: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("entry `{name}` has dtype {found}, expected {expected}")]
    DType { name: String, expected: u8, found: u8 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn push(&mut self, entry: Entry) {
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    fn get(&self, name: &str, dtype: u8) -> Result<&Entry, CheckpointError> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_owned()))?;
        if e.dtype != dtype {
            return Err(CheckpointError::DType {
                name: name.to_owned(),
                expected: dtype,
                found: e.dtype,
            });
        }
        Ok(e)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn push_real<S: Real>(&mut self, name: &str, shape: &[usize], data: impl IntoIterator<Item = S>) {
        let mut payload = Vec::new();
        for x in data {
            x.write_le(&mut payload);
        }
        debug_assert_eq!(payload.len(), shape.iter().product::<usize>() * S::WIDTH);
        self.push(Entry {
            name: name.to_owned(),
            dtype: S::DTYPE,
            shape: shape.to_vec(),
            payload,
        });
    }

    pub fn get_real<S: Real>(&self, name: &str) -> Result<(Vec<usize>, Vec<S>), CheckpointError> {
        let e = self.get(name, S::DTYPE)?;
        let n: usize = e.shape.iter().product();
        if e.payload.len() != n * S::WIDTH {
            return Err(CheckpointError::Corrupt(format!("{name}: payload length mismatch")));
        }
        let data = e.payload.chunks_exact(S::WIDTH).map(S::read_le).collect();
        Ok((e.shape.clone(), data))
    }

    pub fn push_u64(&mut self, name: &str, data: &[u64]) {
        let payload = data.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(Entry {
            name: name.to_owned(),
            dtype: DTYPE_U64,
            shape: vec![data.len()],
            payload,
        });
    }

    pub fn get_u64(&self, name: &str) -> Result<Vec<u64>, CheckpointError> {
        let e = self.get(name, DTYPE_U64)?;
        if e.payload.len() % 8 != 0 {
            return Err(CheckpointError::Corrupt(format!("{name}: payload length mismatch")));
        }
        Ok(e.payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn push_text(&mut self, name: &str, text: &str) {
        self.push(Entry {
            name: name.to_owned(),
            dtype: DTYPE_TEXT,
            shape: vec![text.len()],
            payload: text.as_bytes().to_vec(),
        });
    }

    pub fn get_text(&self, name: &str) -> Result<String, CheckpointError> {
        let e = self.get(name, DTYPE_TEXT)?;
        String::from_utf8(e.payload.clone())
            .map_err(|_| CheckpointError::Corrupt(format!("{name}: invalid utf-8")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.dtype])?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for d in &e.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&(e.payload.len() as u64).to_le_bytes())?;
            w.write_all(&e.payload)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = read_u32(&mut r)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Corrupt("entry name is not utf-8".into()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = read_u64(&mut r)? as usize;
            let mut payload = Vec::new();
            (&mut r).take(len as u64).read_to_end(&mut payload)?;
            if payload.len() != len {
                return Err(CheckpointError::Corrupt(format!("{name}: truncated payload")));
            }
            entries.push(Entry {
                name,
                dtype: dtype[0],
                shape,
                payload,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
