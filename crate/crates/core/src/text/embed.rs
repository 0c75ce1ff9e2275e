//! Static word vectors with a deterministic out-of-vocabulary fallback.
//!
//! File format: a header line `d <dimension> <oov_salt>`, then one line per
//! term, `term v1 .. vd`. Blank lines and lines starting with `#` are skipped.
//!
//! Unknown terms get a unit vector drawn as follows (all arithmetic wraps):
//!
//! ```text
//! state = fnv1a64(term) ^ mix(salt + 0x9E3779B97F4A7C15)
//! next: state += 0x9E3779B97F4A7C15; return mix(state)
//! mix(z): z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
//!         z = (z ^ z>>27) * 0x94D049BB133111EB
//!         z ^ z>>31
//! v_i = 2 * ((next() >> 11) + 0.5) / 2^53 - 1          (f64)
//! vector = f32(v / |v|)                                (norm in f64)
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::weights::fnv1a64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Anything that turns a term into a fixed-length vector.
pub trait Encoder {
    fn dim(&self) -> usize;
    fn embed(&self, term: &str) -> Vec<f32>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    salt: u64,
    entries: HashMap<String, Vec<f32>>,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The fallback vector for `term`; see the module docs.
pub fn oov_vector(term: &str, dim: usize, salt: u64) -> Vec<f32> {
    let mut state = fnv1a64(term.as_bytes()) ^ mix(salt.wrapping_add(GOLDEN));
    let raw: Vec<f64> = (0..dim)
        .map(|_| {
            state = state.wrapping_add(GOLDEN);
            let u = ((mix(state) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            2.0 * u - 1.0
        })
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| (v / norm) as f32).collect()
}

pub(crate) fn parse_reals(fields: &[&str], origin: &str, line: usize) -> Result<Vec<f32>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f32>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                path: origin.into(),
                message: format!("line {line}: `{f}` is not a finite real"),
            })
        })
        .collect()
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

impl EmbeddingTable {
    pub fn new(dim: usize, salt: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be >= 1"));
        }
        Ok(EmbeddingTable {
            dim,
            salt,
            entries: HashMap::new(),
        })
    }

    pub fn insert(&mut self, term: &str, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::arg(format!("`{term}` has {} values, expected {}", v.len(), self.dim)));
        }
        if norm(&v) == 0.0 {
            return Err(Error::arg(format!("`{term}` has a zero vector")));
        }
        self.entries.insert(term.to_string(), v);
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| perr(1, "missing `d <dim> <salt>` header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (dim, salt) = match h.as_slice() {
            ["d", d, s] => (
                d.parse::<usize>().map_err(|_| perr(hl, format!("bad dimension `{d}`")))?,
                s.parse::<u64>().map_err(|_| perr(hl, format!("bad salt `{s}`")))?,
            ),
            _ => return Err(perr(hl, "expected header `d <dim> <salt>`".into())),
        };
        let mut table = EmbeddingTable::new(dim, salt).map_err(|e| perr(hl, e.to_string()))?;
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let term = fields[0];
            if fields.len() != dim + 1 {
                return Err(perr(ln, format!("`{term}` has {} values, expected {dim}", fields.len() - 1)));
            }
            if table.entries.contains_key(term) {
                return Err(perr(ln, format!("duplicate term `{term}`")));
            }
            let v = parse_reals(&fields[1..], origin, ln)?;
            table.insert(term, v).map_err(|e| perr(ln, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::parse(&text, &path.display().to_string())
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    pub fn get(&self, term: &str) -> Option<&[f32]> {
        self.entries.get(term).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Encoder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, term: &str) -> Vec<f32> {
        match self.entries.get(term) {
            Some(v) => v.clone(),
            None => oov_vector(term, self.dim, self.salt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_fallback() {
        let t = EmbeddingTable::parse("# demo\nd 3 7\ndog 1 0 0\ncat 0 1 0.5\n", "t").unwrap();
        assert_eq!(t.embed("dog"), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.embed("cat"), vec![0.0, 1.0, 0.5]);
        let a = t.embed("zebra");
        assert_eq!(a, t.embed("zebra"));
        assert_eq!(a.len(), 3);
        assert!((norm(&a) - 1.0).abs() < 1e-6);
        assert_ne!(a, t.embed("zebras"));
        let other_salt = EmbeddingTable::new(3, 8).unwrap();
        assert_ne!(a, other_salt.embed("zebra"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = EmbeddingTable::parse("d 2 0\ndog 1\n", "f.txt").unwrap_err().to_string();
        assert!(e.contains("f.txt") && e.contains("line 2"), "{e}");
        assert!(EmbeddingTable::parse("", "f").is_err());
        assert!(EmbeddingTable::parse("d x 0\n", "f").is_err());
        assert!(EmbeddingTable::parse("d 2 0\ndog 0 0\n", "f").is_err());
        assert!(EmbeddingTable::parse("d 2 0\ndog 1 nan\n", "f").is_err());
        assert!(EmbeddingTable::parse("d 2 0\ndog 1 1\ndog 1 2\n", "f").is_err());
    }
}
