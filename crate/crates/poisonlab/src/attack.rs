//! The three poisoning strategies plus the random-label baseline.
//!
//! Each perturbation strategy maps a clean example to a poisoned example
//! with the label unchanged, under a budget `k`:
//!
//! - **synonym** — score words by deletion importance, pick the top
//!   `min(k, replaceable)`, then greedily commit the embedding-table
//!   synonym that maximizes the distortion objective, one word at a time
//!   in descending importance order.
//! - **character** — the same two phases over single byte positions,
//!   with the candidate pool being the whole character alphabet.
//! - **suffix** — append `k` seeded random tokens, then greedily rewrite
//!   each suffix slot with the vocabulary token that maximizes the
//!   objective.
//! - **random-label** — the baseline: keep the text, replace the label
//!   with a uniform draw over the label space.
//!
//! Tie-breaking is deterministic everywhere: importance ties go to the
//! lower unit index; candidate ties go to the lexicographically smaller
//! synonym, the earlier alphabet entry, or the smaller token id.
//! Candidates inside one greedy step may be evaluated in parallel; the
//! reduction is a fixed-order scan, so thread count never changes the
//! committed choice.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example};
use crate::distortion::{importance_scores, Granularity, ObjectiveEvaluator};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::model::Backend;
use crate::template::Template;
use crate::text::{enumerate_chars, split_words, CharacterSet, TokenId};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Synonym,
    Character,
    Suffix,
    RandomLabel,
}

impl Strategy {
    /// Report column order: the perturbation strategies after the
    /// baselines.
    pub const REPORT_ORDER: [Strategy; 4] = [
        Strategy::RandomLabel,
        Strategy::Synonym,
        Strategy::Character,
        Strategy::Suffix,
    ];
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Synonym => "synonym",
            Strategy::Character => "character",
            Strategy::Suffix => "suffix",
            Strategy::RandomLabel => "random-label",
        };
        f.write_str(s)
    }
}

fn default_budget() -> usize {
    5
}

fn default_synonym_m() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub strategy: Strategy,
    /// Maximum number of word/character replacements, or the exact
    /// number of appended suffix tokens.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Synonyms considered per selected word.
    #[serde(default = "default_synonym_m")]
    pub synonym_m: usize,
    /// When set, keeping the current unit is itself a candidate, making
    /// the objective trace non-decreasing. Off by default: the greedy
    /// algorithms always replace.
    #[serde(default)]
    pub allow_noop_candidate: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            budget: default_budget(),
            synonym_m: default_synonym_m(),
            allow_noop_candidate: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("attack budget must be ≥ 1".into()));
        }
        if self.synonym_m == 0 {
            return Err(Error::Config("synonym_m must be ≥ 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Poisoned examples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    Word,
    Char,
    Token,
}

/// One committed greedy step. `position` is a word index, a byte offset,
/// or a suffix slot depending on `kind`; `before` is the unit's value at
/// the moment the step ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub position: usize,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonedExample {
    pub original_text: String,
    pub text: String,
    pub label: String,
    pub edits: Vec<Edit>,
    /// Objective value after each committed greedy step.
    pub objective_trace: Vec<f64>,
    /// Set when the example passed through unpoisoned because its attack
    /// failed (for example, no word of the text is in the embedding table).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
}

impl PoisonedExample {
    fn passthrough(example: &Example, reason: String) -> Self {
        Self {
            original_text: example.text.clone(),
            text: example.text.clone(),
            label: example.label.clone(),
            edits: Vec::new(),
            objective_trace: Vec::new(),
            flagged: Some(reason),
        }
    }
}

// ---------------------------------------------------------------------------
// Candidate evaluation
// ---------------------------------------------------------------------------

/// Evaluate every candidate text and return the index of the best one.
/// Scores are computed in parallel (per-thread incremental sessions);
/// the winner is picked by a sequential scan: strictly greater score
/// wins, equal score keeps the earlier candidate. Callers order the
/// candidate list so that "earlier" implements the documented tie-break.
fn best_candidate(evaluator: &ObjectiveEvaluator<'_>, texts: &[String]) -> Result<(usize, f64)> {
    if texts.is_empty() {
        return Err(Error::Attack("no candidates to evaluate".into()));
    }
    let scores: Vec<f64> = texts
        .par_iter()
        .map_init(
            || evaluator.backend().session(),
            |session, text| evaluator.objective_with(session, text),
        )
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores[best]))
}

// ---------------------------------------------------------------------------
// Synonym replacement
// ---------------------------------------------------------------------------

pub fn synonym_attack(
    backend: &Backend,
    example: &Example,
    cfg: &AttackConfig,
    table: &EmbeddingTable,
    dummy_query: &str,
    template: &Template,
) -> Result<PoisonedExample> {
    cfg.validate()?;
    let seg = split_words(&example.text);
    if seg.words.is_empty() {
        return Err(Error::Attack("text has no words".into()));
    }

    // Phase 1: deletion importance over the original text, then the top
    // min(k, replaceable) positions. Words missing from the table are
    // skipped and the next-ranked word is promoted.
    let importance = importance_scores(
        backend,
        &example.text,
        &example.label,
        dummy_query,
        template,
        Granularity::Word,
    )?;
    let ranked = importance.top_k(seg.words.len());
    let selected: Vec<usize> = ranked
        .into_iter()
        .filter(|&i| table.contains(&seg.words[i].text))
        .take(cfg.budget)
        .collect();
    if selected.is_empty() {
        return Err(Error::Attack("no replaceable words".into()));
    }

    // Phase 2: greedy search, one selected word at a time in descending
    // importance order, all other words held at their current state.
    let evaluator = ObjectiveEvaluator::new(
        backend,
        &example.text,
        &example.label,
        dummy_query,
        template,
    )?;
    let mut words: Vec<String> = seg.words.iter().map(|w| w.text.clone()).collect();
    let mut edits = Vec::new();
    let mut trace = Vec::new();
    for &i in &selected {
        let mut candidates = table.top_m_synonyms(&words[i], cfg.synonym_m)?;
        if cfg.allow_noop_candidate {
            candidates.push(words[i].clone());
        }
        // lexicographic order makes the earlier-wins scan implement the
        // documented tie-break
        candidates.sort();
        candidates.dedup();
        let texts: Vec<String> = candidates
            .iter()
            .map(|s| {
                let mut w = words.clone();
                w[i] = s.clone();
                seg.render_with_words(&w)
            })
            .collect();
        let (best, score) = best_candidate(&evaluator, &texts)?;
        edits.push(Edit {
            kind: EditKind::Word,
            position: i,
            before: words[i].clone(),
            after: candidates[best].clone(),
        });
        words[i] = candidates[best].clone();
        trace.push(score);
    }

    Ok(PoisonedExample {
        original_text: example.text.clone(),
        text: seg.render_with_words(&words),
        label: example.label.clone(),
        edits,
        objective_trace: trace,
        flagged: None,
    })
}

// ---------------------------------------------------------------------------
// Character replacement
// ---------------------------------------------------------------------------

pub fn character_attack(
    backend: &Backend,
    example: &Example,
    cfg: &AttackConfig,
    charset: &CharacterSet,
    dummy_query: &str,
    template: &Template,
) -> Result<PoisonedExample> {
    cfg.validate()?;
    let chars = enumerate_chars(&example.text)?;
    if chars.is_empty() {
        return Err(Error::Attack("text has no characters".into()));
    }

    let importance = importance_scores(
        backend,
        &example.text,
        &example.label,
        dummy_query,
        template,
        Granularity::Char,
    )?;
    let selected = importance.top_k(cfg.budget.min(chars.len()));

    let evaluator = ObjectiveEvaluator::new(
        backend,
        &example.text,
        &example.label,
        dummy_query,
        template,
    )?;
    let mut current = example.text.clone().into_bytes();
    let mut edits = Vec::new();
    let mut trace = Vec::new();
    for &unit in &selected {
        let (offset, original) = chars[unit];
        // Candidates in alphabet order; the original character only
        // participates as the no-op candidate (appended last so ties
        // prefer an actual replacement of equal score only when it
        // sorts earlier in the alphabet).
        let mut candidates: Vec<char> = charset
            .chars()
            .iter()
            .copied()
            .filter(|&c| c != original)
            .collect();
        if cfg.allow_noop_candidate {
            match charset.chars().iter().position(|&c| c == original) {
                Some(pos) => candidates.insert(pos, original),
                None => candidates.push(original),
            }
        }
        if candidates.is_empty() {
            return Err(Error::Attack("character alphabet has no candidates".into()));
        }
        let texts: Vec<String> = candidates
            .iter()
            .map(|&c| {
                let mut bytes = current.clone();
                bytes[offset] = c as u8;
                String::from_utf8(bytes).expect("ASCII edit keeps UTF-8 valid")
            })
            .collect();
        let (best, score) = best_candidate(&evaluator, &texts)?;
        edits.push(Edit {
            kind: EditKind::Char,
            position: offset,
            before: original.to_string(),
            after: candidates[best].to_string(),
        });
        current[offset] = candidates[best] as u8;
        trace.push(score);
    }

    Ok(PoisonedExample {
        original_text: example.text.clone(),
        text: String::from_utf8(current).expect("ASCII edits keep UTF-8 valid"),
        label: example.label.clone(),
        edits,
        objective_trace: trace,
        flagged: None,
    })
}

// ---------------------------------------------------------------------------
// Adversarial suffix
// ---------------------------------------------------------------------------

pub fn suffix_attack(
    backend: &Backend,
    example: &Example,
    cfg: &AttackConfig,
    dummy_query: &str,
    template: &Template,
) -> Result<PoisonedExample> {
    cfg.validate()?;
    let vocab = backend.vocabulary();
    let candidates = vocab.candidate_ids();
    if candidates.is_empty() {
        return Err(Error::Attack(
            "vocabulary has no suffix candidates after excluding BOS and UNK".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut suffix: Vec<TokenId> = (0..cfg.budget)
        .map(|_| candidates[rng.gen_range(0..candidates.len())])
        .collect();

    let evaluator = ObjectiveEvaluator::new(
        backend,
        &example.text,
        &example.label,
        dummy_query,
        template,
    )?;
    let mut edits = Vec::new();
    let mut trace = Vec::new();
    for j in 0..cfg.budget {
        let before = suffix[j];
        let texts: Vec<String> = candidates
            .iter()
            .map(|&v| {
                let mut s = suffix.clone();
                s[j] = v;
                let mut text = example.text.clone();
                text.push_str(&vocab.detokenize(&s).expect("candidate ids valid"));
                text
            })
            .collect();
        // candidate order is ascending token id, so the earlier-wins
        // scan breaks ties toward the smaller id
        let (best, score) = best_candidate(&evaluator, &texts)?;
        suffix[j] = candidates[best];
        edits.push(Edit {
            kind: EditKind::Token,
            position: j,
            before: vocab.token_str(before).unwrap_or_default().to_string(),
            after: vocab.token_str(suffix[j]).unwrap_or_default().to_string(),
        });
        trace.push(score);
    }

    let mut text = example.text.clone();
    text.push_str(&vocab.detokenize(&suffix)?);
    Ok(PoisonedExample {
        original_text: example.text.clone(),
        text,
        label: example.label.clone(),
        edits,
        objective_trace: trace,
        flagged: None,
    })
}

// ---------------------------------------------------------------------------
// Random-label baseline
// ---------------------------------------------------------------------------

/// Replace the label with a uniform draw over the whole label space (the
/// true label included); the text is untouched.
pub fn random_label_flip(example: &Example, label_space: &[String], seed: u64) -> Result<PoisonedExample> {
    if label_space.len() < 2 {
        return Err(Error::Attack("label space must hold at least two labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = label_space[rng.gen_range(0..label_space.len())].clone();
    Ok(PoisonedExample {
        original_text: example.text.clone(),
        text: example.text.clone(),
        label,
        edits: Vec::new(),
        objective_trace: Vec::new(),
        flagged: None,
    })
}

// ---------------------------------------------------------------------------
// Whole-dataset poisoning
// ---------------------------------------------------------------------------

/// How the dummy query standing in for unseen test queries is chosen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DummyPolicy {
    /// One seeded draw from the dataset, reused for every example; the
    /// drawn example itself falls back to its successor so no example is
    /// ever its own dummy (a singleton dataset keeps itself).
    SeededFromDataset,
    /// A fixed, caller-provided query.
    Fixed(String),
}

/// External inputs the strategies need.
pub struct AttackResources<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub charset: &'a CharacterSet,
}

#[derive(Debug, Clone)]
pub struct PoisonRun {
    pub strategy: Strategy,
    pub examples: Vec<PoisonedExample>,
    /// Wall-clock per example. Recorded for the timing report, excluded
    /// from determinism comparisons.
    pub timings_ms: Vec<u64>,
    pub dummy_query: String,
    /// Indices whose attack failed (the example passed through flagged).
    pub errors: Vec<(usize, String)>,
}

/// Poison every example of a dataset independently, preserving order.
/// Per-example failures are collected, not fatal. Per-example seeds are
/// derived from `cfg.seed` and the example index.
pub fn poison_dataset(
    backend: &Backend,
    dataset: &Dataset,
    cfg: &AttackConfig,
    resources: &AttackResources<'_>,
    dummy_policy: &DummyPolicy,
) -> Result<PoisonRun> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot poison an empty dataset".into()));
    }
    if matches!(cfg.strategy, Strategy::Synonym) && resources.embeddings.is_none() {
        return Err(Error::Config("synonym attack needs an embedding table".into()));
    }

    let n = dataset.len();
    let dummy_idx = (mix_seed(cfg.seed, 0xd0_0d) % n as u64) as usize;
    let dummy_for = |i: usize| -> String {
        match dummy_policy {
            DummyPolicy::Fixed(q) => q.clone(),
            DummyPolicy::SeededFromDataset => {
                let idx = if i == dummy_idx { (dummy_idx + 1) % n } else { dummy_idx };
                dataset.examples[idx].text.clone()
            }
        }
    };

    let template = Template::arrow();
    let results: Vec<(PoisonedExample, u64)> = dataset
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, example)| {
            let started = Instant::now();
            let per_example = AttackConfig {
                seed: mix_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            let dummy = dummy_for(i);
            let outcome = match cfg.strategy {
                Strategy::Synonym => synonym_attack(
                    backend,
                    example,
                    &per_example,
                    resources.embeddings.expect("checked above"),
                    &dummy,
                    &template,
                ),
                Strategy::Character => character_attack(
                    backend,
                    example,
                    &per_example,
                    resources.charset,
                    &dummy,
                    &template,
                ),
                Strategy::Suffix => {
                    suffix_attack(backend, example, &per_example, &dummy, &template)
                }
                Strategy::RandomLabel => {
                    random_label_flip(example, &dataset.label_space, per_example.seed)
                }
            };
            let poisoned = outcome
                .unwrap_or_else(|e| PoisonedExample::passthrough(example, e.to_string()));
            (poisoned, started.elapsed().as_millis() as u64)
        })
        .collect();

    let mut examples = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);
    let mut errors = Vec::new();
    for (i, (ex, ms)) in results.into_iter().enumerate() {
        if let Some(reason) = &ex.flagged {
            errors.push((i, reason.clone()));
        }
        examples.push(ex);
        timings.push(ms);
    }

    Ok(PoisonRun {
        strategy: cfg.strategy,
        examples,
        timings_ms: timings,
        dummy_query: match dummy_policy {
            DummyPolicy::Fixed(q) => q.clone(),
            DummyPolicy::SeededFromDataset => dataset.examples[dummy_idx].text.clone(),
        },
        errors,
    })
}

// ---------------------------------------------------------------------------
// Poisoned-set files
// ---------------------------------------------------------------------------

/// Line format of poisoned-set record files. Timing lives in a sibling
/// file so the records themselves are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonedRecord {
    pub text: String,
    pub label: String,
    pub edits: Vec<Edit>,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
}

impl From<&PoisonedExample> for PoisonedRecord {
    fn from(p: &PoisonedExample) -> Self {
        Self {
            text: p.text.clone(),
            label: p.label.clone(),
            edits: p.edits.clone(),
            objective_trace: p.objective_trace.clone(),
            flagged: p.flagged.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub index: usize,
    pub time_ms: u64,
}

pub fn render_poisoned_records(examples: &[PoisonedExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let record = PoisonedRecord::from(ex);
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_poisoned_records(path: &Path, examples: &[PoisonedExample]) -> Result<()> {
    std::fs::write(path, render_poisoned_records(examples)).map_err(|e| Error::io(path, e))
}

pub fn read_poisoned_records(path: &Path) -> Result<Vec<PoisonedRecord>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::Dataset(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_timings(path: &Path, timings_ms: &[u64]) -> Result<()> {
    let mut out = String::new();
    for (index, &time_ms) in timings_ms.iter().enumerate() {
        let record = TimingRecord { index, time_ms };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_timings(path: &Path) -> Result<Vec<TimingRecord>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::Dataset(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
