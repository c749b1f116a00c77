//! The attack's mathematical core: per-layer normalized distance, the
//! min-over-layers distortion, the attack objective, and deletion-based
//! importance scores.
//!
//! For hidden vectors `h1`, `h2` the per-layer distance is
//! `‖h1/‖h1‖ − h2/‖h2‖‖₂` (zero vectors normalize to themselves), which
//! lies in `[0, 2]`. The distortion of two hidden stacks is the minimum
//! of the per-layer distances — the guaranteed change across every
//! layer — and the attack maximizes exactly that quantity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normalize_or_zero;
use crate::model::{Backend, HiddenStack, Session};
use crate::template::{build_probe_prompt, Template};
use crate::text::{split_words, WordSegmentation};

/// Per-layer normalized L2 distance. Symmetric, scale-invariant, and
/// bounded by 2.
pub fn layer_distance(h1: &[f64], h2: &[f64]) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::Eval(format!(
            "layer dimension mismatch: {} vs {}",
            h1.len(),
            h2.len()
        )));
    }
    let a = normalize_or_zero(h1);
    let b = normalize_or_zero(h2);
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(d2.sqrt())
}

/// Per-layer distances plus their minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionScore {
    pub per_layer: Vec<f64>,
    pub aggregate: f64,
}

/// Distortion between two hidden stacks of identical shape.
pub fn distortion(a: &HiddenStack, b: &HiddenStack) -> Result<DistortionScore> {
    if a.layer_count() != b.layer_count() {
        return Err(Error::Eval(format!(
            "hidden stack layer mismatch: {} vs {}",
            a.layer_count(),
            b.layer_count()
        )));
    }
    let per_layer: Vec<f64> = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| layer_distance(x, y))
        .collect::<Result<_>>()?;
    let aggregate = per_layer.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DistortionScore {
        per_layer,
        aggregate,
    })
}

/// Which text units importance scores are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Word,
    Char,
}

/// Per-unit deletion scores aligned to a segmentation.
#[derive(Debug, Clone)]
pub struct ImportanceVector {
    pub granularity: Granularity,
    pub scores: Vec<f64>,
}

impl ImportanceVector {
    /// Unit indices ordered by descending score, ties to the lower index,
    /// truncated to `k`.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite importance scores")
                .then_with(|| a.cmp(&b))
        });
        order.truncate(k);
        order
    }
}

/// Evaluates the attack objective for perturbations of one example.
///
/// The clean probe prompt's hidden stack is computed once at
/// construction; each call then renders the perturbed probe (same label,
/// same dummy query), reads its hidden stack, and returns the aggregate
/// distortion. The identity perturbation therefore scores exactly 0.
pub struct ObjectiveEvaluator<'a> {
    backend: &'a Backend,
    template: &'a Template,
    label: String,
    dummy_query: String,
    clean: HiddenStack,
}

impl<'a> ObjectiveEvaluator<'a> {
    pub fn new(
        backend: &'a Backend,
        input: &str,
        label: &str,
        dummy_query: &str,
        template: &'a Template,
    ) -> Result<Self> {
        let probe = build_probe_prompt(input, label, dummy_query, template, backend.vocabulary())?;
        let clean = backend.forward_hidden(&probe.tokens.ids)?;
        Ok(Self {
            backend,
            template,
            label: label.to_string(),
            dummy_query: dummy_query.to_string(),
            clean,
        })
    }

    pub fn backend(&self) -> &'a Backend {
        self.backend
    }

    /// Objective via a full forward pass.
    pub fn objective(&self, perturbed_text: &str) -> Result<f64> {
        let probe = build_probe_prompt(
            perturbed_text,
            &self.label,
            &self.dummy_query,
            self.template,
            self.backend.vocabulary(),
        )?;
        let stack = self.backend.forward_hidden(&probe.tokens.ids)?;
        Ok(distortion(&self.clean, &stack)?.aggregate)
    }

    /// Objective through an incremental session: the session reuses the
    /// longest shared token prefix with whatever it evaluated last.
    /// Results are bit-identical to [`objective`](Self::objective).
    pub fn objective_with(&self, session: &mut Session<'_>, perturbed_text: &str) -> Result<f64> {
        let probe = build_probe_prompt(
            perturbed_text,
            &self.label,
            &self.dummy_query,
            self.template,
            self.backend.vocabulary(),
        )?;
        session.set_tokens(&probe.tokens.ids)?;
        let stack = session.hidden_stack()?;
        Ok(distortion(&self.clean, &stack)?.aggregate)
    }
}

/// Deletion-based importance: score `i` is the objective of the text
/// with unit `i` removed (word deletion also removes one adjacent
/// separator run; deleting the only unit probes an empty input).
pub fn importance_scores(
    backend: &Backend,
    input: &str,
    label: &str,
    dummy_query: &str,
    template: &Template,
    granularity: Granularity,
) -> Result<ImportanceVector> {
    if input.is_empty() {
        return Err(Error::Attack("cannot score units of an empty text".into()));
    }
    let evaluator = ObjectiveEvaluator::new(backend, input, label, dummy_query, template)?;
    let mut session = backend.session();
    let scores = match granularity {
        Granularity::Word => {
            let seg = split_words(input);
            deletion_scores_words(&evaluator, &mut session, &seg)?
        }
        Granularity::Char => {
            let chars = crate::text::enumerate_chars(input)?;
            let mut scores = Vec::with_capacity(chars.len());
            for &(offset, c) in &chars {
                let mut deleted = String::with_capacity(input.len() - 1);
                deleted.push_str(&input[..offset]);
                deleted.push_str(&input[offset + c.len_utf8()..]);
                scores.push(evaluator.objective_with(&mut session, &deleted)?);
            }
            scores
        }
    };
    for s in &scores {
        if !s.is_finite() || *s < 0.0 {
            return Err(Error::Attack(format!("invalid importance score {s}")));
        }
    }
    Ok(ImportanceVector {
        granularity,
        scores,
    })
}

fn deletion_scores_words(
    evaluator: &ObjectiveEvaluator<'_>,
    session: &mut Session<'_>,
    seg: &WordSegmentation,
) -> Result<Vec<f64>> {
    if seg.words.is_empty() {
        return Err(Error::Attack("text has no words to score".into()));
    }
    let mut scores = Vec::with_capacity(seg.words.len());
    for i in 0..seg.words.len() {
        let deleted = seg.with_word_deleted(i);
        scores.push(evaluator.objective_with(session, &deleted)?);
    }
    Ok(scores)
}
