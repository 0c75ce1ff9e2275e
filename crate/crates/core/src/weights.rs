//! Named parameter storage, deterministic seeding and the `PRBW` file format.
//!
//! # File format
//!
//! All integers little-endian:
//!
//! ```text
//! magic   b"PRBW"
//! version u32            (= 1)
//! count   u32            number of entries
//! entry*  name_len u16, name (UTF-8), rank u8, dims u32 * rank, data f32 * prod(dims)
//! ```
//!
//! Entries are written in lexicographic name order.
//!
//! # Seeding recipe
//!
//! Element `i` of node `name` under seed `s` is
//!
//! ```text
//! h = fnv1a64(name)
//! z = s * 0x9E3779B97F4A7C15 + h * 0xC2B2AE3D27D4EB4F + (i + 1) * 0x165667B19E3779F9   (mod 2^64)
//! z ^= z >> 33; z *= 0xFF51AFD7ED558CCD; z ^= z >> 33; z *= 0xC4CEB9FE1A85EC53; z ^= z >> 33
//! u = ((z >> 40) + 0.5) / 2^24                      (f64, in (0, 1))
//! w = f32((2u - 1) * 0.1)                           (in (-0.1, 0.1))
//! ```

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::ConvSpec;

pub const MAGIC: &[u8; 4] = b"PRBW";
pub const VERSION: u32 = 1;
/// Seeded weights are drawn from `(-SEED_RANGE, SEED_RANGE)`.
pub const SEED_RANGE: f64 = 0.1;

/// Declared name and shape of one parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Appends the `weight`/`bias` pair of a convolution node to a layout.
pub(crate) fn push_conv(layout: &mut Vec<ParamSpec>, node: &str, cin: usize, cout: usize, kernel: usize) {
    layout.push(ParamSpec {
        name: format!("{node}.weight"),
        shape: vec![cout, cin, kernel, kernel],
    });
    layout.push(ParamSpec {
        name: format!("{node}.bias"),
        shape: vec![cout],
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Map from hierarchical node name to parameter array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    entries: BTreeMap<String, WeightEntry>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::weight(format!(
                "{name}: shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::weight(format!("duplicate node {name}")));
        }
        self.entries.insert(name, WeightEntry { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut WeightEntry> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<WeightEntry> {
        self.entries.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut WeightEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters stored.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.data.len()).sum()
    }

    fn fetch(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::weight(format!("missing weight {name}")))?;
        if entry.shape != shape {
            return Err(Error::weight(format!(
                "{name}: expected shape {shape:?}, found {:?}",
                entry.shape
            )));
        }
        Ok(&entry.data)
    }

    /// Borrows the square-kernel convolution stored under `node`.
    pub fn conv(
        &self,
        node: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<ConvSpec<'_>> {
        let w = self.fetch(&format!("{node}.weight"), &[cout, cin, kernel, kernel])?;
        let b = self.fetch(&format!("{node}.bias"), &[cout])?;
        ConvSpec::square(cin, cout, kernel, stride, padding, w, b)
    }

    /// Strict check against a layout: no missing, extra or reshaped entries.
    pub fn validate(&self, layout: &[ParamSpec]) -> Result<()> {
        let mut expected: BTreeMap<&str, &[usize]> = BTreeMap::new();
        for p in layout {
            expected.insert(&p.name, &p.shape);
        }
        for (name, shape) in &expected {
            match self.entries.get(*name) {
                None => return Err(Error::weight(format!("missing weight {name}"))),
                Some(e) if e.shape != *shape => {
                    return Err(Error::weight(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        e.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.entries.keys().find(|k| !expected.contains_key(k.as_str())) {
            return Err(Error::weight(format!("unexpected weight {extra} not in the model graph")));
        }
        Ok(())
    }

    /// Fills every layout entry with the documented seeded recipe.
    pub fn seeded(layout: &[ParamSpec], seed: u64) -> Self {
        let mut out = Self::new();
        for p in layout {
            let data = (0..p.numel() as u64).map(|i| seeded_value(seed, &p.name, i)).collect();
            out.entries.insert(
                p.name.clone(),
                WeightEntry {
                    shape: p.shape.clone(),
                    data,
                },
            );
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(12 + self.param_count() * 4);
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).unwrap();
        buf.write_u32::<LittleEndian>(self.entries.len() as u32).unwrap();
        for (name, e) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::weight(format!("node name too long: {name}")))?;
            let rank = u8::try_from(e.shape.len()).map_err(|_| Error::weight(format!("{name}: rank too large")))?;
            buf.write_u16::<LittleEndian>(len).unwrap();
            buf.extend_from_slice(name.as_bytes());
            buf.write_u8(rank).unwrap();
            for &d in &e.shape {
                let d = u32::try_from(d).map_err(|_| Error::weight(format!("{name}: dimension too large")))?;
                buf.write_u32::<LittleEndian>(d).unwrap();
            }
            for &v in &e.data {
                buf.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |what: &str| Error::weight(format!("truncated weight file while reading {what}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
        if &magic != MAGIC {
            return Err(Error::weight(format!("bad magic {magic:?}, expected \"PRBW\"")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| truncated("version"))?;
        if version != VERSION {
            return Err(Error::weight(format!("unsupported weight file version {version}")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(|_| truncated("entry count"))?;
        let mut out = Self::new();
        for i in 0..count {
            let len = r.read_u16::<LittleEndian>().map_err(|_| truncated("name length"))? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| truncated("name"))?;
            let name = String::from_utf8(name).map_err(|_| Error::weight(format!("entry {i}: name is not UTF-8")))?;
            let rank = r.read_u8().map_err(|_| truncated(&name))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32::<LittleEndian>().map_err(|_| truncated(&name))? as usize);
            }
            let numel: usize = shape.iter().product();
            let remaining = bytes.len() - r.position() as usize;
            if remaining < numel * 4 {
                return Err(truncated(&name));
            }
            let mut data = vec![0f32; numel];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(|_| truncated(&name))?;
            out.insert(name, shape, data)?;
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::weight("trailing bytes after the last weight entry"));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Element `index` of node `name` under `seed`; see the module docs.
pub fn seeded_value(seed: u64, name: &str, index: u64) -> f32 {
    let h = fnv1a64(name.as_bytes());
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(h.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x1656_67B1_9E37_79F9));
    z ^= z >> 33;
    z = z.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^= z >> 33;
    z = z.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^= z >> 33;
    let u = ((z >> 40) as f64 + 0.5) / (1u64 << 24) as f64;
    ((2.0 * u - 1.0) * SEED_RANGE) as f32
}
