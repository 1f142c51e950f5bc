//! Named tensor archive: a minimal, deterministic binary container.
//!
//! Datasets and checkpoints both serialise as a flat set of named n-d arrays
//! plus one free-form JSON metadata entry. The format is deliberately dumb:
//!
//! ```text
//! magic "BMAR1\n"
//! u64 entry count
//! entries, sorted by name:
//!     u32 name length, name (UTF-8)
//!     u8 dtype (0 = f64, 1 = f32, 2 = u8)
//!     u32 rank, rank x u64 dims
//!     u64 payload length in bytes, payload (little-endian scalars, C order)
//! ```
//!
//! Entries are written in sorted name order and scalars in a fixed
//! byte order, so the same logical content always produces the same bytes —
//! the property the pipeline's reproducibility guarantees rest on.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"BMAR1\n";

/// Reserved entry name for the JSON metadata blob.
pub const META_ENTRY: &str = "__meta__";

/// One stored array. Three element types cover every artifact in the
/// pipeline: f64 for geometry and latents, f32 for network weights and
/// activations, u8 for quantised images and masks.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(ArrayD<f64>),
    F32(ArrayD<f32>),
    U8(ArrayD<u8>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F64(a) => a.shape(),
            TensorData::F32(a) => a.shape(),
            TensorData::U8(a) => a.shape(),
        }
    }

    fn dtype_tag(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::F32(_) => 1,
            TensorData::U8(_) => 2,
        }
    }
}

impl From<ArrayD<f64>> for TensorData {
    fn from(a: ArrayD<f64>) -> Self {
        TensorData::F64(a)
    }
}
impl From<ArrayD<f32>> for TensorData {
    fn from(a: ArrayD<f32>) -> Self {
        TensorData::F32(a)
    }
}
impl From<ArrayD<u8>> for TensorData {
    fn from(a: ArrayD<u8>) -> Self {
        TensorData::U8(a)
    }
}

/// An in-memory archive: named tensors plus optional JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: BTreeMap<String, TensorData>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry. Names may use any non-empty UTF-8
    /// string; `__meta__` is reserved for [`Archive::set_meta_json`].
    pub fn insert(&mut self, name: impl Into<String>, data: impl Into<TensorData>) {
        self.entries.insert(name.into(), data.into());
    }

    pub fn remove(&mut self, name: &str) -> Option<TensorData> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Entry names in their canonical (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_f64(&self, name: &str) -> Result<&ArrayD<f64>> {
        match self.entries.get(name) {
            Some(TensorData::F64(a)) => Ok(a),
            Some(_) => Err(Error::Archive(format!("entry `{name}` is not f64"))),
            None => Err(Error::MissingEntry(name.to_string())),
        }
    }

    pub fn get_f32(&self, name: &str) -> Result<&ArrayD<f32>> {
        match self.entries.get(name) {
            Some(TensorData::F32(a)) => Ok(a),
            Some(_) => Err(Error::Archive(format!("entry `{name}` is not f32"))),
            None => Err(Error::MissingEntry(name.to_string())),
        }
    }

    pub fn get_u8(&self, name: &str) -> Result<&ArrayD<u8>> {
        match self.entries.get(name) {
            Some(TensorData::U8(a)) => Ok(a),
            Some(_) => Err(Error::Archive(format!("entry `{name}` is not u8"))),
            None => Err(Error::MissingEntry(name.to_string())),
        }
    }

    /// Stores a JSON value under the reserved metadata entry.
    pub fn set_meta_json(&mut self, value: &serde_json::Value) -> Result<()> {
        let bytes = serde_json::to_vec(value)?;
        let arr = ArrayD::from_shape_vec(IxDyn(&[bytes.len()]), bytes)
            .expect("1-d shape always matches");
        self.insert(META_ENTRY, arr);
        Ok(())
    }

    /// Reads back the JSON metadata entry, if present.
    pub fn meta_json(&self) -> Result<Option<serde_json::Value>> {
        match self.entries.get(META_ENTRY) {
            None => Ok(None),
            Some(TensorData::U8(a)) => {
                let bytes: Vec<u8> = a.iter().copied().collect();
                Ok(Some(serde_json::from_slice(&bytes)?))
            }
            Some(_) => Err(Error::Archive("metadata entry is not u8".into())),
        }
    }

    /// Serialises to any writer in the canonical byte layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, data) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[data.dtype_tag()])?;
            let shape = data.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match data {
                TensorData::F64(a) => {
                    let n = a.len();
                    w.write_all(&((n * 8) as u64).to_le_bytes())?;
                    let mut buf = Vec::with_capacity(n * 8);
                    for &x in a.iter() {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
                TensorData::F32(a) => {
                    let n = a.len();
                    w.write_all(&((n * 4) as u64).to_le_bytes())?;
                    let mut buf = Vec::with_capacity(n * 4);
                    for &x in a.iter() {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
                TensorData::U8(a) => {
                    let n = a.len();
                    w.write_all(&(n as u64).to_le_bytes())?;
                    // Iterate rather than assume contiguity; views may stride.
                    let buf: Vec<u8> = a.iter().copied().collect();
                    w.write_all(&buf)?;
                }
            }
        }
        Ok(())
    }

    /// Deserialises from any reader, validating magic, dtypes, and sizes.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive("bad magic; not a tensor archive".into()));
        }
        let count = read_u64(&mut r)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 1 << 20 {
                return Err(Error::Archive("entry name too long".into()));
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Archive("entry name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 16 {
                return Err(Error::Archive(format!("rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut r)? as usize);
            }
            let elem_count: usize = dims.iter().product();
            let payload_len = read_u64(&mut r)? as usize;
            let elem_size = match tag[0] {
                0 => 8,
                1 => 4,
                2 => 1,
                t => return Err(Error::Archive(format!("unknown dtype tag {t}"))),
            };
            if payload_len != elem_count * elem_size {
                return Err(Error::Archive(format!(
                    "entry `{name}`: payload {payload_len} B does not match shape {dims:?}"
                )));
            }
            let mut payload = vec![0u8; payload_len];
            r.read_exact(&mut payload)?;
            let data = match tag[0] {
                0 => {
                    let v: Vec<f64> = payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    TensorData::F64(
                        ArrayD::from_shape_vec(IxDyn(&dims), v)
                            .map_err(|e| Error::Archive(e.to_string()))?,
                    )
                }
                1 => {
                    let v: Vec<f32> = payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    TensorData::F32(
                        ArrayD::from_shape_vec(IxDyn(&dims), v)
                            .map_err(|e| Error::Archive(e.to_string()))?,
                    )
                }
                _ => TensorData::U8(
                    ArrayD::from_shape_vec(IxDyn(&dims), payload)
                        .map_err(|e| Error::Archive(e.to_string()))?,
                ),
            };
            entries.insert(name, data);
        }
        Ok(Archive { entries })
    }

    /// Writes the archive to `path` (atomically via a sibling temp file).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp-write");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref())?;
        Self::read_from(BufReader::new(f))
    }

    /// SHA-256 of the canonical serialisation, as lowercase hex. Equal
    /// archives hash equal; used to fingerprint checkpoints and datasets.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        struct HashWriter<'a>(&'a mut Sha256);
        impl Write for HashWriter<'_> {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        self.write_to(HashWriter(&mut hasher))
            .expect("hashing cannot fail");
        hex(&hasher.finalize())
    }
}

/// Lowercase hex encoding of a byte string.
pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write as _;
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
