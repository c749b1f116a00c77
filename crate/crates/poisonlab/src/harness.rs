//! In-context-learning evaluation: assemble demonstrations, score labels,
//! measure accuracy, mix poisoned pools, and run transfer evaluations.
//!
//! Label prediction ranks verbalizers: each candidate label is scored by
//! the summed log-probability of its tokens appended after the prompt,
//! teacher-forced; the argmax wins, ties going to label-list order. Shot
//! sampling is keyed by (run seed, item index), so items can be
//! evaluated in parallel without changing any result.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::math::{mix_seed, std_error};
use crate::model::Backend;
use crate::template::Template;
use crate::text::TokenId;

// ---------------------------------------------------------------------------
// Prompt sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clean,
    Poisoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolMember {
    pub text: String,
    pub label: String,
    pub provenance: Provenance,
}

/// The pool demonstrations are drawn from, possibly a clean/poisoned mix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub members: Vec<PoolMember>,
}

impl PromptSet {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            members: dataset
                .examples
                .iter()
                .map(|ex| PoolMember {
                    text: ex.text.clone(),
                    label: ex.label.clone(),
                    provenance: Provenance::Clean,
                })
                .collect(),
        }
    }

    /// A fully poisoned pool aligned 1:1 with the clean pool it came from.
    pub fn from_poisoned(records: &[crate::attack::PoisonedRecord]) -> Self {
        Self {
            members: records
                .iter()
                .map(|r| PoolMember {
                    text: r.text.clone(),
                    label: r.label.clone(),
                    provenance: Provenance::Poisoned,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.members {
            out.push_str(&serde_json::to_string(m).expect("member serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(content: &str) -> Result<Self> {
        let members = content
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| Error::Dataset(format!("pool line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }
}

/// Blend a poisoned pool into its clean counterpart. Exactly
/// `round(rate × N)` members (half-up, seeded choice without
/// replacement) take the poisoned version; everyone else stays clean.
pub fn mix_poison(
    clean: &PromptSet,
    poisoned: &PromptSet,
    rate: f64,
    seed: u64,
) -> Result<PromptSet> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("poison rate {rate} outside [0, 1]")));
    }
    if clean.len() != poisoned.len() {
        return Err(Error::Dataset(format!(
            "clean pool has {} members, poisoned pool {}",
            clean.len(),
            poisoned.len()
        )));
    }
    let n = clean.len();
    let count = (rate * n as f64 + 0.5).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x30c9));
    let chosen = sample_without_replacement(n, count.min(n), &mut rng);
    let mut members = clean.members.clone();
    for idx in chosen {
        members[idx] = PoolMember {
            provenance: Provenance::Poisoned,
            ..poisoned.members[idx].clone()
        };
    }
    Ok(PromptSet { members })
}

/// First `k` slots of a seeded partial Fisher-Yates shuffle of `0..n`.
fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for s in 0..k {
        let j = s + rng.gen_range(0..n - s);
        idx.swap(s, j);
    }
    idx.truncate(k);
    idx
}

// ---------------------------------------------------------------------------
// Prompt assembly and label scoring
// ---------------------------------------------------------------------------

/// Render shots plus the query through a template.
pub fn assemble_prompt(
    shots: &[(&str, &str)],
    query: &str,
    template: &Template,
) -> Result<String> {
    if shots.is_empty() {
        return Err(Error::Eval("a demonstration needs at least one shot".into()));
    }
    let mut out = String::new();
    for (input, output) in shots {
        out.push_str(&template.render_example(input, output));
    }
    out.push_str(&template.render_query(query));
    Ok(out)
}

/// Teacher-forced verbalizer ranking: argmax over labels of the summed
/// next-token log-probabilities of the label's tokens after the prompt.
/// Ties resolve to the earlier label in `label_space`.
pub fn predict_label(backend: &Backend, prompt: &str, label_space: &[String]) -> Result<String> {
    if label_space.is_empty() {
        return Err(Error::Eval("empty label space".into()));
    }
    let vocab = backend.vocabulary();
    let prompt_tokens = vocab.tokenize(prompt).ids;
    let mut session = backend.session();
    let mut best: Option<(f64, usize)> = None;
    for (li, label) in label_space.iter().enumerate() {
        let label_tokens: Vec<TokenId> = vocab
            .tokenize(label)
            .ids
            .into_iter()
            .filter(|&t| t != vocab.bos())
            .collect();
        if label_tokens.is_empty() {
            return Err(Error::Eval(format!("label {label:?} tokenizes to nothing")));
        }
        let mut ctx = prompt_tokens.clone();
        let mut score = 0.0;
        for &t in &label_tokens {
            session.set_tokens(&ctx)?;
            score += session.next_token_logprobs()?.get(t)?;
            ctx.push(t);
        }
        if best.map(|(s, _)| score > s).unwrap_or(true) {
            best = Some((score, li));
        }
    }
    Ok(label_space[best.expect("label space non-empty").1].clone())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Backend the evaluation ran on.
    pub backend: String,
    /// Backend the pool was poisoned against, when different.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<String>,
    pub template: String,
    pub shots: usize,
    pub runs: usize,
    pub seed: u64,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub config_digest: String,
}

impl EvalResult {
    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }
}

fn eval_digest(
    backend: &Backend,
    surrogate: Option<&str>,
    pool: &PromptSet,
    test_set: &[Example],
    template: &Template,
    shots: usize,
    runs: usize,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    h.update(backend.name().as_bytes());
    h.update([0]);
    h.update(surrogate.unwrap_or("").as_bytes());
    h.update([0]);
    h.update(pool.render().as_bytes());
    h.update(crate::dataset::render_dataset(test_set).as_bytes());
    h.update(template.example_frame.as_bytes());
    h.update([0]);
    h.update(template.query_frame.as_bytes());
    h.update([0]);
    h.update(shots.to_le_bytes());
    h.update(runs.to_le_bytes());
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Measure ICL accuracy: for each run `r` (seed `seed + r`) and each
/// test item, sample `shots` pool members without replacement (keyed by
/// run seed and item index), assemble the prompt, predict, and compare.
pub fn evaluate_icl(
    backend: &Backend,
    pool: &PromptSet,
    test_set: &[Example],
    shots: usize,
    runs: usize,
    seed: u64,
    template: &Template,
) -> Result<EvalResult> {
    evaluate_with_surrogate(backend, None, pool, test_set, shots, runs, seed, template)
}

/// [`evaluate_icl`] for a pool poisoned against a different backend; the
/// result is tagged with both identities. Texts are the transfer medium:
/// the target tokenizes them with its own vocabulary.
pub fn transfer_eval(
    surrogate_name: &str,
    target: &Backend,
    pool: &PromptSet,
    test_set: &[Example],
    shots: usize,
    runs: usize,
    seed: u64,
    template: &Template,
) -> Result<EvalResult> {
    evaluate_with_surrogate(
        target,
        Some(surrogate_name),
        pool,
        test_set,
        shots,
        runs,
        seed,
        template,
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluate_with_surrogate(
    backend: &Backend,
    surrogate: Option<&str>,
    pool: &PromptSet,
    test_set: &[Example],
    shots: usize,
    runs: usize,
    seed: u64,
    template: &Template,
) -> Result<EvalResult> {
    if shots == 0 {
        return Err(Error::Config("shots must be ≥ 1".into()));
    }
    if runs == 0 {
        return Err(Error::Config("runs must be ≥ 1".into()));
    }
    if pool.len() < shots {
        return Err(Error::Eval(format!(
            "pool of {} cannot provide {shots} shots",
            pool.len()
        )));
    }
    if test_set.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    let label_space: Vec<String> = {
        let mut labels: Vec<String> = test_set.iter().map(|e| e.label.clone()).collect();
        for m in &pool.members {
            labels.push(m.label.clone());
        }
        labels.sort();
        labels.dedup();
        labels
    };

    let mut per_run = Vec::with_capacity(runs);
    for r in 0..runs {
        let run_seed = seed + r as u64;
        let correct: usize = test_set
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(run_seed, i as u64));
                let picks = sample_without_replacement(pool.len(), shots, &mut rng);
                let shots_ref: Vec<(&str, &str)> = picks
                    .iter()
                    .map(|&p| {
                        let m = &pool.members[p];
                        (m.text.as_str(), m.label.as_str())
                    })
                    .collect();
                let prompt = assemble_prompt(&shots_ref, &item.text, template)?;
                let predicted = predict_label(backend, &prompt, &label_space)?;
                Ok(usize::from(predicted == item.label))
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        per_run.push(correct as f64 / test_set.len() as f64);
    }

    let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
    let stderr = std_error(&per_run);
    Ok(EvalResult {
        backend: backend.name().to_string(),
        surrogate: surrogate.map(str::to_string),
        template: template.name.clone(),
        shots,
        runs,
        seed,
        per_run,
        mean,
        stderr,
        config_digest: eval_digest(backend, surrogate, pool, test_set, template, shots, runs, seed),
    })
}
