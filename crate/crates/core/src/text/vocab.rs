//! Category vocabulary, cosine category mapping and prompt comparison.
//!
//! Vocabulary file: one class per line, `class_id name v1 .. vd`, ids dense
//! from 0 in file order. Multi-word names join their words with `_`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::embed::{norm, parse_reals};

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub class_id: usize,
    pub name: String,
    pub vector: Vec<f32>,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryVocab {
    classes: Vec<Category>,
    dim: usize,
}

impl CategoryVocab {
    /// Builds a vocabulary from `(name, vector)` pairs; ids follow list order.
    pub fn new(classes: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let dim = classes.first().map(|c| c.1.len()).ok_or_else(|| Error::arg("empty category vocabulary"))?;
        let mut out = Vec::with_capacity(classes.len());
        let mut seen = BTreeSet::new();
        for (class_id, (name, vector)) in classes.into_iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::arg(format!("class {class_id}: invalid name `{name}`")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::arg(format!("duplicate class name `{name}`")));
            }
            if vector.len() != dim {
                return Err(Error::arg(format!("class `{name}` has {} values, expected {dim}", vector.len())));
            }
            let n = norm(&vector);
            if n == 0.0 {
                return Err(Error::arg(format!("class `{name}` has a zero vector")));
            }
            out.push(Category {
                class_id,
                name,
                vector,
                norm: n,
            });
        }
        Ok(CategoryVocab { classes: out, dim })
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| Error::Parse {
                path: origin.into(),
                message: format!("line {}: {message}", i + 1),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(perr("expected `class_id name v1 .. vd`".into()));
            }
            let id: usize = fields[0].parse().map_err(|_| perr(format!("bad class id `{}`", fields[0])))?;
            if id != classes.len() {
                return Err(perr(format!("class id {id} out of order; expected {}", classes.len())));
            }
            let v = parse_reals(&fields[2..], origin, i + 1)?;
            classes.push((fields[1].to_string(), v));
        }
        CategoryVocab::new(classes).map_err(|e| Error::Parse {
            path: origin.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CategoryVocab::parse(&text, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[Category] {
        &self.classes
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        self.classes.get(class_id).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }
}

/// Cosine argmax over the vocabulary; ties go to the smaller class id.
pub fn map_to_category(v: &[f32], vocab: &CategoryVocab) -> Result<(usize, f64)> {
    if v.len() != vocab.dim {
        return Err(Error::arg(format!("query has {} values, vocabulary has {}", v.len(), vocab.dim)));
    }
    let qn = norm(v);
    if qn == 0.0 {
        return Err(Error::arg("cannot map a zero vector to a category"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for c in &vocab.classes {
        let dot: f64 = v.iter().zip(&c.vector).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        let score = dot / (qn * c.norm);
        if score > best.1 {
            best = (c.class_id, score);
        }
    }
    Ok(best)
}

/// Classes a prompt asks for, with the lemmas that admitted each one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptClassSet {
    pub class_ids: BTreeSet<usize>,
    /// Per class: `(lemma, similarity)` pairs in first-seen order.
    pub provenance: BTreeMap<usize, Vec<(String, f64)>>,
}

impl PromptClassSet {
    pub fn contains(&self, class_id: usize) -> bool {
        self.class_ids.contains(&class_id)
    }

    fn admit(&mut self, class_id: usize, lemma: &str, score: f64) {
        self.class_ids.insert(class_id);
        let entries = self.provenance.entry(class_id).or_default();
        match entries.iter_mut().find(|(l, _)| l == lemma) {
            Some(e) => e.1 = e.1.max(score),
            None => entries.push((lemma.to_string(), score)),
        }
    }
}

/// Admits a class when a lemma's best cosine reaches `tau`, when a lemma
/// equals a class name, or when two consecutive lemmas joined by `_` do.
/// Exact matches are recorded with similarity 1.
pub fn compare(lemmas: &[(String, Vec<f32>)], vocab: &CategoryVocab, tau: f64) -> Result<PromptClassSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::arg(format!("tau = {tau} must lie in (0, 1]")));
    }
    let mut set = PromptClassSet::default();
    for (i, (lemma, v)) in lemmas.iter().enumerate() {
        let (j, score) = map_to_category(v, vocab)?;
        if score >= tau {
            set.admit(j, lemma, score);
        }
        if let Some(j) = vocab.id_of(lemma) {
            set.admit(j, lemma, 1.0);
        }
        if let Some((next, _)) = lemmas.get(i + 1) {
            let bigram = format!("{lemma}_{next}");
            if let Some(j) = vocab.id_of(&bigram) {
                set.admit(j, &bigram, 1.0);
            }
        }
    }
    Ok(set)
}
