//! Rule-based English lemmatizer.
//!
//! An exception table is consulted first and its lemmas are final. Otherwise
//! the first matching suffix rule fires, and rules are reapplied to the result
//! until none fires:
//!
//! | suffix | action | guard |
//! |---|---|---|
//! | `-ies` | replace by `y` | at least two letters before `ies`, else try `-s` |
//! | `-es` | drop | stem ends in `x`, `ch`, `sh`, `ss` or `zz`, else try `-s` |
//! | `-s` | drop | word longer than 3, not ending in `ss`, `us`, `is`, `ous` |
//! | `-ied` | replace by `y` | at least two letters before `ied` |
//! | `-ing`, `-ed` | drop, then undouble or restore a silent `e` | stem has a vowel; no `-eed` |
//!
//! Every stem must keep a vowel. Undoubling applies to a final `bb dd gg mm nn
//! pp rr tt`. A silent `e` comes back after a one-syllable consonant-vowel-
//! consonant stem (final letter not `w`, `x`, `y`), after a final `c`, `v` or
//! `u`, after `rg`, `dg`, `lg`, after a consonant plus `l` where the consonant
//! is one of `b c d f g k p t z`, and after a longer stem ending in `at`, `iz`,
//! `yz`, `tur` or `sur`.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BUILTIN_EXCEPTIONS: &str = include_str!("../../data/lemma_exceptions.tsv");

#[derive(Debug, Clone)]
pub struct Lemmatizer {
    exceptions: HashMap<String, String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Lemmatizer::parse(BUILTIN_EXCEPTIONS, "<builtin>").expect("builtin exception table parses")
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// `y` is a vowel except at the start of a word.
fn has_vowel(s: &[u8]) -> bool {
    s.iter().enumerate().any(|(i, &c)| is_vowel(c) || (c == b'y' && i > 0))
}

fn syllables(s: &[u8]) -> usize {
    let mut n = 0;
    let mut prev = false;
    for (i, &c) in s.iter().enumerate() {
        let v = is_vowel(c) || (c == b'y' && i > 0);
        if v && !prev {
            n += 1;
        }
        prev = v;
    }
    n
}

fn is_consonant(c: u8) -> bool {
    c.is_ascii_lowercase() && !is_vowel(c)
}

fn undouble(stem: &[u8]) -> Option<&[u8]> {
    match stem {
        [.., a, b] if a == b && b"bdgmnprt".contains(b) && stem.len() > 2 => Some(&stem[..stem.len() - 1]),
        _ => None,
    }
}

fn needs_e(stem: &[u8]) -> bool {
    let n = stem.len();
    if n < 2 {
        return false;
    }
    let last = stem[n - 1];
    if matches!(last, b'c' | b'v' | b'u') {
        return true;
    }
    let tail2 = &stem[n - 2..];
    if matches!(tail2, b"rg" | b"dg" | b"lg") {
        return true;
    }
    if last == b'l' && b"bcdfgkptz".contains(&stem[n - 2]) {
        return true;
    }
    let syl = syllables(stem);
    if syl >= 2 && (matches!(tail2, b"at" | b"iz" | b"yz") || stem.ends_with(b"tur") || stem.ends_with(b"sur")) {
        return true;
    }
    if syl == 1 && n >= 3 {
        let (c1, v, c2) = (stem[n - 3], stem[n - 2], stem[n - 1]);
        return is_consonant(c1) && is_vowel(v) && is_consonant(c2) && !matches!(c2, b'w' | b'x' | b'y');
    }
    false
}

/// Strips a verbal suffix of length `cut` and repairs the stem.
fn verbal(word: &[u8], cut: usize) -> Option<Vec<u8>> {
    let stem = &word[..word.len() - cut];
    if stem.len() < 2 || !has_vowel(stem) {
        return None;
    }
    Some(if let Some(s) = undouble(stem) {
        s.to_vec()
    } else if needs_e(stem) {
        [stem, b"e"].concat()
    } else {
        stem.to_vec()
    })
}

/// One pass of the suffix rules; `None` when no rule fires.
fn apply_rule(w: &[u8]) -> Option<Vec<u8>> {
    let n = w.len();
    if w.ends_with(b"ies") && n > 4 {
        return Some([&w[..n - 3], b"y"].concat());
    }
    if w.ends_with(b"es") && n > 3 {
        let stem = &w[..n - 2];
        let sibilant = [&b"x"[..], b"ch", b"sh", b"ss", b"zz"].iter().any(|s| stem.ends_with(s));
        if sibilant && has_vowel(stem) {
            return Some(stem.to_vec());
        }
    }
    if w.ends_with(b"s") && n > 3 {
        let guarded = [&b"ss"[..], b"us", b"is", b"ous"].iter().any(|s| w.ends_with(s));
        let stem = &w[..n - 1];
        if !guarded && has_vowel(stem) {
            return Some(stem.to_vec());
        }
        return None;
    }
    if w.ends_with(b"ied") && n > 4 {
        return Some([&w[..n - 3], b"y"].concat());
    }
    if w.ends_with(b"ing") {
        return verbal(w, 3);
    }
    if w.ends_with(b"ed") && !w.ends_with(b"eed") {
        return verbal(w, 2);
    }
    None
}

impl Lemmatizer {
    /// Parses a tab-separated `surface<TAB>lemma` table; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut exceptions = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(from), Some(to), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    path: origin.into(),
                    message: format!("line {}: expected `surface<TAB>lemma`", i + 1),
                });
            };
            if from.is_empty() || to.is_empty() {
                return Err(Error::Parse {
                    path: origin.into(),
                    message: format!("line {}: empty field", i + 1),
                });
            }
            exceptions.insert(from.to_lowercase(), to.to_lowercase());
        }
        Ok(Lemmatizer { exceptions })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lemmatizer::parse(&text, &path.display().to_string())
    }

    pub fn exceptions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.exceptions.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn lemmatize(&self, word: &str) -> String {
        let mut w = word.to_lowercase();
        loop {
            if let Some(l) = self.exceptions.get(&w) {
                return l.clone();
            }
            if !w.bytes().all(|c| c.is_ascii_lowercase()) {
                return w;
            }
            match apply_rule(w.as_bytes()) {
                Some(next) => w = String::from_utf8(next).expect("ascii"),
                None => return w,
            }
        }
    }
}
