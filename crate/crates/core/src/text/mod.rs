//! Prompt to class-set pipeline: tokenize, lemmatize, embed, compare.

mod embed;
mod lemma;
mod vocab;

use std::collections::HashSet;
use std::path::Path;

pub use embed::{oov_vector, EmbeddingTable, Encoder};
pub use lemma::{Lemmatizer, BUILTIN_EXCEPTIONS};
pub use vocab::{compare, map_to_category, Category, CategoryVocab, PromptClassSet};

use crate::error::{Error, Result};

pub const BUILTIN_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Index of the piece in the prompt, counting dropped stop-words.
    pub position: usize,
}

/// Stop-word list and lemmatizer used by the prompt pipeline.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    stopwords: HashSet<String>,
    lemmatizer: Lemmatizer,
}

impl Default for TextPipeline {
    fn default() -> Self {
        TextPipeline {
            stopwords: parse_stopwords(BUILTIN_STOPWORDS),
            lemmatizer: Lemmatizer::default(),
        }
    }
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl TextPipeline {
    /// Overrides either data file; `None` keeps the shipped one.
    pub fn from_files(stopwords: Option<&Path>, exceptions: Option<&Path>) -> Result<Self> {
        let mut p = TextPipeline::default();
        if let Some(path) = stopwords {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            p.stopwords = parse_stopwords(&text);
        }
        if let Some(path) = exceptions {
            p.lemmatizer = Lemmatizer::from_file(path)?;
        }
        Ok(p)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    /// Lowercases, splits on anything that is not a letter or digit and drops
    /// stop-words.
    pub fn tokenize(&self, prompt: &str) -> Vec<Token> {
        prompt
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|p| !p.is_empty())
            .enumerate()
            .filter(|(_, p)| !self.stopwords.contains(*p))
            .map(|(position, p)| Token {
                surface: p.to_string(),
                position,
            })
            .collect()
    }

    pub fn lemmatize(&self, token: &Token) -> String {
        self.lemmatizer.lemmatize(&token.surface)
    }

    pub fn lemmatizer(&self) -> &Lemmatizer {
        &self.lemmatizer
    }

    /// The lemmas of `prompt`, in order.
    pub fn lemmas(&self, prompt: &str) -> Vec<String> {
        self.tokenize(prompt).iter().map(|t| self.lemmatize(t)).collect()
    }

    pub fn prompt_to_classes(
        &self,
        prompt: &str,
        encoder: &impl Encoder,
        vocab: &CategoryVocab,
        tau: f64,
    ) -> Result<PromptClassSet> {
        if encoder.dim() != vocab.dim() {
            return Err(Error::arg(format!(
                "embedding dimension {} does not match vocabulary dimension {}",
                encoder.dim(),
                vocab.dim()
            )));
        }
        let lemmas: Vec<(String, Vec<f32>)> = self
            .lemmas(prompt)
            .into_iter()
            .map(|l| {
                let v = encoder.embed(&l);
                (l, v)
            })
            .collect();
        compare(&lemmas, vocab, tau)
    }
}

/// [`TextPipeline::tokenize`] with the shipped stop-words.
pub fn tokenize(prompt: &str) -> Vec<Token> {
    TextPipeline::default().tokenize(prompt)
}

/// [`Lemmatizer::lemmatize`] with the shipped exception table.
pub fn lemmatize(word: &str) -> String {
    Lemmatizer::default().lemmatize(word)
}

/// The full prompt pipeline with the shipped data files.
pub fn prompt_to_classes(
    prompt: &str,
    encoder: &impl Encoder,
    vocab: &CategoryVocab,
    tau: f64,
) -> Result<PromptClassSet> {
    TextPipeline::default().prompt_to_classes(prompt, encoder, vocab, tau)
}
