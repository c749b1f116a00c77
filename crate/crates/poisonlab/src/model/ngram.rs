//! Add-one-smoothed character n-gram model, the lab's perplexity scorer.
//!
//! Counts come from a fitting corpus (one sequence per line, each
//! BOS-prefixed by the tokenizer). The conditional distribution for a
//! context of `order − 1` tokens is
//!
//! `p(v | ctx) = (count(ctx, v) + 1) / (total(ctx) + |V∖{BOS}|)`
//!
//! over `v ∈ V∖{BOS}`; BOS itself is never predicted (probability 0).
//! With no counts at all this is the uniform scorer: every row is
//! `1 / |V∖{BOS}|`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{HiddenStack, LogProbRow};
use crate::text::{TokenId, Vocabulary};

#[derive(Debug)]
pub struct CharNgram {
    name: String,
    vocab: Vocabulary,
    order: usize,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    totals: HashMap<Vec<TokenId>, u64>,
}

impl CharNgram {
    /// Fit on a corpus, treating each line as an independent sequence.
    pub fn fit(vocab: Vocabulary, order: usize, corpus: &str, name: String) -> Result<Self> {
        if order == 0 {
            return Err(Error::Manifest("n-gram order must be ≥ 1".into()));
        }
        let mut model = Self {
            name,
            vocab,
            order,
            counts: HashMap::new(),
            totals: HashMap::new(),
        };
        for line in corpus.lines() {
            let toks = model.vocab.tokenize(line).ids;
            for t in 1..toks.len() {
                let ctx = model.context_key(&toks[..t]);
                *model
                    .counts
                    .entry(ctx.clone())
                    .or_default()
                    .entry(toks[t])
                    .or_insert(0) += 1;
                *model.totals.entry(ctx).or_insert(0) += 1;
            }
        }
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn hidden_dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Last `order − 1` tokens of the prefix, left-padded with BOS.
    fn context_key(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let want = self.order - 1;
        let mut key = Vec::with_capacity(want);
        if prefix.len() < want {
            key.resize(want - prefix.len(), self.vocab.bos());
            key.extend_from_slice(prefix);
        } else {
            key.extend_from_slice(&prefix[prefix.len() - want..]);
        }
        key
    }

    /// Smoothed conditional distribution (linear probabilities) after the
    /// given prefix.
    pub fn conditional(&self, prefix: &[TokenId]) -> Vec<f64> {
        let ctx = self.context_key(prefix);
        let m = (self.vocab.len() - 1) as f64;
        let total = self.totals.get(&ctx).copied().unwrap_or(0) as f64;
        let ctx_counts = self.counts.get(&ctx);
        (0..self.vocab.len() as TokenId)
            .map(|v| {
                if v == self.vocab.bos() {
                    return 0.0;
                }
                let c = ctx_counts.and_then(|m| m.get(&v)).copied().unwrap_or(0) as f64;
                (c + 1.0) / (total + m)
            })
            .collect()
    }

    pub fn forward_hidden(&self, tokens: &[TokenId]) -> Result<HiddenStack> {
        HiddenStack::new(vec![self.conditional(tokens)], tokens)
    }

    pub fn next_token_logprobs(&self, tokens: &[TokenId]) -> Result<LogProbRow> {
        Ok(LogProbRow(
            self.conditional(tokens).into_iter().map(f64::ln).collect(),
        ))
    }
}
