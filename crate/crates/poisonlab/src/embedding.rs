//! Word-embedding table with exhaustive nearest-synonym queries.
//!
//! The on-disk format is the common text layout: one `word c1 c2 ... cd`
//! line per entry, space-separated decimal floats. Tables at desk scale
//! are small, so lookup is a linear scan over all entries.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::cosine;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Parse the text format. All vectors must share one dimension;
    /// errors carry the 1-based line number.
    pub fn parse(content: &str) -> Result<Self> {
        let mut dim = None;
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts
                .next()
                .filter(|w| !w.is_empty())
                .ok_or_else(|| Error::Embedding(format!("line {line_no}: missing word")))?;
            let vector: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| {
                        Error::Embedding(format!("line {line_no}: non-numeric component {p:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            if vector.is_empty() {
                return Err(Error::Embedding(format!("line {line_no}: no components")));
            }
            match dim {
                None => dim = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return Err(Error::Embedding(format!(
                        "line {line_no}: dimension {} does not match table dimension {d}",
                        vector.len()
                    )))
                }
                _ => {}
            }
            if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
                return Err(Error::Embedding(format!(
                    "line {line_no}: non-finite component {bad}"
                )));
            }
            if index.insert(word.to_string(), words.len()).is_some() {
                return Err(Error::Embedding(format!(
                    "line {line_no}: duplicate word {word:?}"
                )));
            }
            words.push(word.to_string());
            vectors.push(vector);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            words,
            vectors,
            index,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Exact match first, lowercase fallback second.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.resolve(word).map(|i| self.vectors[i].as_slice())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.resolve(word).is_some()
    }

    fn resolve(&self, word: &str) -> Option<usize> {
        self.index
            .get(word)
            .or_else(|| self.index.get(&word.to_lowercase()))
            .copied()
    }

    /// The `m` nearest neighbours of `word` by cosine similarity,
    /// excluding the word itself, in non-increasing similarity with ties
    /// broken lexicographically. Fewer than `m` candidates yield all of
    /// them. A missing word is an error meaning "skip this word".
    pub fn top_m_synonyms(&self, word: &str, m: usize) -> Result<Vec<String>> {
        let query_idx = self
            .resolve(word)
            .ok_or_else(|| Error::Embedding(format!("word {word:?} not in table")))?;
        let query = &self.vectors[query_idx];
        let mut scored: Vec<(f64, &str)> = self
            .words
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != query_idx)
            .map(|(i, w)| (cosine(query, &self.vectors[i]), w.as_str()))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite similarities")
                .then_with(|| a.1.cmp(b.1))
        });
        Ok(scored.into_iter().take(m).map(|(_, w)| w.to_string()).collect())
    }
}
