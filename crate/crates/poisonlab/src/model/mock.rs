//! Analytic fixture backend standing in for a trained ICL-capable model.
//!
//! Hidden layer `l` is the L2-normalized count vector of the prompt's
//! character l-grams, hashed into `dim` buckets with a seeded FNV-1a.
//! The label path parses the prompt into `input→completion` lines,
//! matches the final (query) line against the demonstration inputs by
//! top-layer cosine similarity, and emits the matched demonstration's
//! label tokens with probability 0.99 each.

use crate::error::{Error, Result};
use crate::math::{cosine, normalize_or_zero};
use crate::model::{HiddenStack, LogProbRow};
use crate::text::{TokenId, Vocabulary};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug)]
pub struct MockIcl {
    name: String,
    vocab: Vocabulary,
    layers: usize,
    dim: usize,
    seed: u64,
}

impl MockIcl {
    pub fn new(layers: usize, dim: usize, seed: u64, vocab: Vocabulary, name: String) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::Manifest("mock-icl needs layers ≥ 1 and dim ≥ 1".into()));
        }
        Ok(Self {
            name,
            vocab,
            layers,
            dim,
            seed,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.dim
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn bucket(&self, n: usize, window: &[char]) -> usize {
        let mut h = FNV_OFFSET;
        let mut absorb = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(FNV_PRIME);
            }
        };
        absorb(&self.seed.to_le_bytes());
        absorb(&(n as u64).to_le_bytes());
        let mut buf = [0u8; 4];
        for &c in window {
            absorb(c.encode_utf8(&mut buf).as_bytes());
        }
        (h % self.dim as u64) as usize
    }

    /// Normalized hashed n-gram count profile of a text. Texts shorter
    /// than `n` produce the zero vector.
    pub fn ngram_profile(&self, text: &str, n: usize) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut counts = vec![0.0; self.dim];
        if n >= 1 {
            for w in chars.windows(n) {
                counts[self.bucket(n, w)] += 1.0;
            }
        }
        normalize_or_zero(&counts)
    }

    pub fn forward_hidden(&self, tokens: &[TokenId]) -> Result<HiddenStack> {
        let text = self.vocab.detokenize(tokens)?;
        let layers: Vec<Vec<f64>> = (1..=self.layers)
            .map(|l| self.ngram_profile(&text, l))
            .collect();
        HiddenStack::new(layers, tokens)
    }

    pub fn next_token_logprobs(&self, tokens: &[TokenId]) -> Result<LogProbRow> {
        let text = self.vocab.detokenize(tokens)?;
        let parsed = PromptParse::of(&text);

        let target = parsed.and_then(|p| self.pick_target(&p));
        Ok(match target {
            Some(id) => self.near_one_row(id),
            None => self.uniform_row(),
        })
    }

    /// Next token the mock wants to emit: the unfinished part of the
    /// matched demonstration's label, or the example separator once the
    /// label is complete.
    fn pick_target(&self, parse: &PromptParse) -> Option<TokenId> {
        let query_profile = self.ngram_profile(&parse.query, self.layers);
        let mut best: Option<(f64, usize)> = None;
        for (i, (input, _)) in parse.demos.iter().enumerate() {
            let sim = cosine(&query_profile, &self.ngram_profile(input, self.layers));
            // ties go to the earliest demonstration
            if best.map(|(s, _)| sim > s).unwrap_or(true) {
                best = Some((sim, i));
            }
        }
        let (_, idx) = best?;
        let label = &parse.demos[idx].1;

        let label_tokens = self.strip_bos(self.vocab.tokenize(label).ids);
        let partial_tokens = self.strip_bos(self.vocab.tokenize(&parse.partial).ids);
        if partial_tokens.len() < label_tokens.len()
            && label_tokens[..partial_tokens.len()] == partial_tokens[..]
        {
            Some(label_tokens[partial_tokens.len()])
        } else {
            // label complete (or diverged): emit the example separator
            self.vocab.token_id("\n").or(Some(self.vocab.unk()))
        }
    }

    fn strip_bos(&self, ids: Vec<TokenId>) -> Vec<TokenId> {
        ids.into_iter().filter(|&t| t != self.vocab.bos()).collect()
    }

    fn near_one_row(&self, target: TokenId) -> LogProbRow {
        let m = self.vocab.len() - 1; // BOS is never predicted
        let mut row = vec![f64::NEG_INFINITY; self.vocab.len()];
        if m == 1 {
            row[target as usize] = 0.0;
            return LogProbRow(row);
        }
        let rest = (0.01 / (m - 1) as f64).ln();
        for (id, slot) in row.iter_mut().enumerate() {
            if id as TokenId == self.vocab.bos() {
                continue;
            }
            *slot = if id as TokenId == target { 0.99f64.ln() } else { rest };
        }
        LogProbRow(row)
    }

    fn uniform_row(&self) -> LogProbRow {
        let m = self.vocab.len() - 1;
        let p = (1.0 / m as f64).ln();
        let row = (0..self.vocab.len())
            .map(|id| if id as TokenId == self.vocab.bos() { f64::NEG_INFINITY } else { p })
            .collect();
        LogProbRow(row)
    }
}

/// Prompt split into `input→completion` demonstration lines plus the
/// final query line (with any partially emitted answer after its arrow).
struct PromptParse {
    demos: Vec<(String, String)>,
    query: String,
    partial: String,
}

impl PromptParse {
    fn of(text: &str) -> Option<Self> {
        let lines: Vec<&str> = text.split('\n').collect();
        let (last, rest) = lines.split_last()?;
        let demos: Vec<(String, String)> = rest
            .iter()
            .filter_map(|line| {
                line.split_once('→')
                    .map(|(i, c)| (i.to_string(), c.to_string()))
            })
            .collect();
        if demos.is_empty() {
            return None;
        }
        let (query, partial) = match last.split_once('→') {
            Some((q, p)) => (q.to_string(), p.to_string()),
            None => (last.to_string(), String::new()),
        };
        Some(Self {
            demos,
            query,
            partial,
        })
    }
}
