//! Defenses: perplexity scoring/filtering and a pluggable paraphrase
//! interface.
//!
//! The perplexity score of a text is its average negative log-likelihood
//! per token under a scorer backend — perturbed texts tend to score
//! higher than clean ones, which makes the score a detection signal.
//! Paraphrasing is interface-only: rewriters are external, and the
//! bundled hooks are an identity stub plus a suffix stripper used in
//! tests and demos.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{PromptSet, Provenance};
use crate::math::{centered_mean, std_error};
use crate::model::Backend;

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

/// Average negative log-likelihood per token: the mean over positions
/// `t ≥ 1` of `−log p(token_t | tokens_<t)` under the scorer.
pub fn perplexity_score(scorer: &Backend, text: &str) -> Result<f64> {
    let vocab = scorer.vocabulary();
    let tokens = vocab.tokenize(text).ids;
    if tokens.len() < 2 {
        return Err(Error::Defense("text tokenizes to nothing beyond BOS".into()));
    }
    let mut session = scorer.session();
    let mut nll = Vec::with_capacity(tokens.len() - 1);
    for t in 1..tokens.len() {
        session.set_tokens(&tokens[..t])?;
        nll.push(-session.next_token_logprobs()?.get(tokens[t])?);
    }
    Ok(centered_mean(&nll))
}

/// Per-text scores with corpus mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub per_text: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn score_pool(scorer: &Backend, pool: &PromptSet) -> Result<PerplexityReport> {
    let per_text: Vec<f64> = pool
        .members
        .iter()
        .map(|m| perplexity_score(scorer, &m.text))
        .collect::<Result<_>>()?;
    let mean = if per_text.is_empty() {
        0.0
    } else {
        per_text.iter().sum::<f64>() / per_text.len() as f64
    };
    let stderr = std_error(&per_text);
    Ok(PerplexityReport {
        per_text,
        mean,
        stderr,
    })
}

/// One rejected pool member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub score: f64,
    pub threshold: f64,
}

/// Filter a pool by perplexity. The threshold is the given quantile
/// (nearest-rank) of the scores of clean-provenance members when any
/// exist, of the whole pool otherwise; members scoring strictly above it
/// are rejected.
pub fn perplexity_filter(
    pool: &PromptSet,
    scorer: &Backend,
    quantile: f64,
) -> Result<(PromptSet, Vec<Rejection>)> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Config(format!("quantile {quantile} outside (0, 1]")));
    }
    if pool.is_empty() {
        return Err(Error::Defense("cannot filter an empty pool".into()));
    }
    let report = score_pool(scorer, pool)?;

    let reference: Vec<f64> = pool
        .members
        .iter()
        .zip(&report.per_text)
        .filter(|(m, _)| m.provenance == Provenance::Clean)
        .map(|(_, &s)| s)
        .collect();
    let reference = if reference.is_empty() {
        report.per_text.clone()
    } else {
        reference
    };
    let threshold = nearest_rank_quantile(&reference, quantile);

    let mut kept = Vec::new();
    let mut rejections = Vec::new();
    for (index, (member, &score)) in pool.members.iter().zip(&report.per_text).enumerate() {
        if score > threshold {
            rejections.push(Rejection {
                index,
                score,
                threshold,
            });
        } else {
            kept.push(member.clone());
        }
    }
    Ok((PromptSet { members: kept }, rejections))
}

/// Nearest-rank quantile: the value at 1-based rank `⌈q·n⌉` of the
/// ascending sort.
fn nearest_rank_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> Result<()> {
    let mut out = String::new();
    for r in rejections {
        out.push_str(&serde_json::to_string(r).expect("rejection serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Paraphrase interface
// ---------------------------------------------------------------------------

/// A named text → text rewriter. The lab itself never calls a language
/// model; integrators plug one in behind this trait.
pub trait ParaphraseHook: Send + Sync {
    fn name(&self) -> &str;
    fn rewrite(&self, text: &str) -> String;
}

/// The bundled stub: returns its input unchanged.
pub struct IdentityParaphrase;

impl ParaphraseHook for IdentityParaphrase {
    fn name(&self) -> &str {
        "identity"
    }

    fn rewrite(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Drops everything after the last sentence-ending punctuation mark,
/// which removes appended suffixes from texts that end in a proper
/// sentence. Texts without one pass through unchanged.
pub struct StripAfterSentenceEnd;

impl ParaphraseHook for StripAfterSentenceEnd {
    fn name(&self) -> &str {
        "strip-after-sentence-end"
    }

    fn rewrite(&self, text: &str) -> String {
        match text.rfind(['.', '!', '?']) {
            Some(pos) => text[..=pos].to_string(),
            None => text.to_string(),
        }
    }
}

/// Map every pool text through the hook; labels and provenance are
/// untouched. Hook output must stay in the ASCII ingestion domain.
pub fn apply_paraphrase(pool: &PromptSet, hook: &dyn ParaphraseHook) -> Result<PromptSet> {
    let members = pool
        .members
        .iter()
        .map(|m| {
            let text = hook.rewrite(&m.text);
            if !text.is_ascii() {
                return Err(Error::Defense(format!(
                    "paraphrase hook {:?} produced non-ASCII output",
                    hook.name()
                )));
            }
            Ok(crate::harness::PoolMember {
                text,
                label: m.label.clone(),
                provenance: m.provenance,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PromptSet { members })
}
