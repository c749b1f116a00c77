//! Model backends: anything that maps a token sequence to per-layer
//! last-token hidden states and next-token log-probabilities.
//!
//! Three backends live behind one interface:
//!
//! - `tiny-transformer` — a small decoder-only transformer loaded from a
//!   tensor container, with seeded random weights in the bundled fixtures.
//! - `mock-icl` — an analytic stand-in for an ICL-capable model: hidden
//!   layer `l` is the L2-normalized hashed character n-gram profile
//!   (n = l) of the prompt text, and label prediction copies the label of
//!   the demonstration most similar to the query at the top layer.
//! - `char-ngram` — an add-one-smoothed n-gram counting model, used as
//!   the perplexity scorer for the defense suite.
//!
//! All backends are immutable after load and pure functions of
//! (weights/counts, input tokens), so they are safe to query from many
//! threads at once.

mod mock;
mod ngram;
mod transformer;

pub use mock::MockIcl;
pub use ngram::CharNgram;
pub use transformer::{TinyTransformer, TransformerState};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{TokenId, Vocabulary};

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "tiny-transformer")]
    TinyTransformer,
    #[serde(rename = "mock-icl")]
    MockIcl,
    #[serde(rename = "char-ngram")]
    CharNgram,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BackendKind::TinyTransformer => "tiny-transformer",
            BackendKind::MockIcl => "mock-icl",
            BackendKind::CharNgram => "char-ngram",
        };
        f.write_str(s)
    }
}

fn default_order() -> usize {
    2
}

/// Architecture description stored next to the weights. Paths are
/// resolved relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: BackendKind,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub vocab_path: String,
    /// Tensor container for `tiny-transformer`, fitting corpus for
    /// `char-ngram`, unused for `mock-icl`.
    pub weights_path: Option<String>,
    pub seed: u64,
    /// Conditioning width of the `char-ngram` backend (context length is
    /// `order - 1` tokens).
    #[serde(default = "default_order")]
    pub order: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Hidden states and log-probability rows
// ---------------------------------------------------------------------------

/// Digest of a token sequence, carried on every hidden stack so results
/// can be traced back to the prompt that produced them.
pub fn prompt_hash(tokens: &[TokenId]) -> String {
    let mut hasher = Sha256::new();
    for t in tokens {
        hasher.update(t.to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// The residual-stream vector after each transformer block (or the
/// backend's analytic analogue) at the final prompt position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStack {
    pub layers: Vec<Vec<f64>>,
    pub source_prompt_hash: String,
}

impl HiddenStack {
    pub fn new(layers: Vec<Vec<f64>>, tokens: &[TokenId]) -> Result<Self> {
        for (l, v) in layers.iter().enumerate() {
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Model(format!(
                    "non-finite hidden value {bad} at layer {}",
                    l + 1
                )));
            }
        }
        Ok(Self {
            layers,
            source_prompt_hash: prompt_hash(tokens),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
}

/// Natural-log next-token probabilities over the whole vocabulary.
/// Entries may be `-inf` for tokens the backend never predicts (BOS).
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbRow(pub Vec<f64>);

impl LogProbRow {
    pub fn get(&self, id: TokenId) -> Result<f64> {
        self.0
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Model(format!("token id {id} outside log-prob row")))
    }

    /// Check the row invariants: entries ≤ 0 (within 1e-9) and
    /// exponentials summing to 1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (i, &lp) in self.0.iter().enumerate() {
            if lp > 1e-9 {
                return Err(Error::Model(format!("log-prob {lp} > 0 at id {i}")));
            }
            sum += lp.exp();
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Model(format!("log-prob row sums to {sum}, not 1")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

/// A loaded model backend. Immutable; queries never mutate state.
#[derive(Debug)]
pub enum Backend {
    TinyTransformer(TinyTransformer),
    MockIcl(MockIcl),
    CharNgram(CharNgram),
}

impl Backend {
    /// Load from a manifest file, or from a directory containing
    /// `manifest.json`. Referenced paths resolve relative to the manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        };
        let manifest = Manifest::load(&manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let name = backend_name(&manifest_path);
        Self::from_manifest(&manifest, base, name)
    }

    /// Build from an already-parsed manifest with paths resolved against
    /// `base`.
    pub fn from_manifest(manifest: &Manifest, base: &Path, name: String) -> Result<Self> {
        if manifest.layers == 0 || manifest.dim == 0 {
            return Err(Error::Manifest("layers and dim must be positive".into()));
        }
        let vocab = Vocabulary::load(&base.join(&manifest.vocab_path))?;
        match manifest.kind {
            BackendKind::TinyTransformer => {
                let weights = manifest.weights_path.as_ref().ok_or_else(|| {
                    Error::Manifest("tiny-transformer manifest needs weights_path".into())
                })?;
                let container = crate::tensor::TensorContainer::read(&base.join(weights))?;
                Ok(Backend::TinyTransformer(TinyTransformer::from_container(
                    manifest, &container, vocab, name,
                )?))
            }
            BackendKind::MockIcl => Ok(Backend::MockIcl(MockIcl::new(
                manifest.layers,
                manifest.dim,
                manifest.seed,
                vocab,
                name,
            )?)),
            BackendKind::CharNgram => {
                if manifest.layers != 1 {
                    return Err(Error::Manifest(
                        "char-ngram backends expose exactly 1 hidden layer".into(),
                    ));
                }
                if manifest.dim != vocab.len() {
                    return Err(Error::Manifest(format!(
                        "char-ngram dim {} must equal vocabulary size {}",
                        manifest.dim,
                        vocab.len()
                    )));
                }
                let corpus = match &manifest.weights_path {
                    Some(p) => {
                        let path = base.join(p);
                        std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))?
                    }
                    None => String::new(),
                };
                Ok(Backend::CharNgram(CharNgram::fit(
                    vocab,
                    manifest.order,
                    &corpus,
                    name,
                )?))
            }
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::TinyTransformer(_) => BackendKind::TinyTransformer,
            Backend::MockIcl(_) => BackendKind::MockIcl,
            Backend::CharNgram(_) => BackendKind::CharNgram,
        }
    }

    /// Identity tag used in transfer-evaluation reports.
    pub fn name(&self) -> &str {
        match self {
            Backend::TinyTransformer(m) => m.name(),
            Backend::MockIcl(m) => m.name(),
            Backend::CharNgram(m) => m.name(),
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            Backend::TinyTransformer(m) => m.layer_count(),
            Backend::MockIcl(m) => m.layer_count(),
            Backend::CharNgram(_) => 1,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Backend::TinyTransformer(m) => m.hidden_dim(),
            Backend::MockIcl(m) => m.hidden_dim(),
            Backend::CharNgram(m) => m.hidden_dim(),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        match self {
            Backend::TinyTransformer(m) => m.vocabulary(),
            Backend::MockIcl(m) => m.vocabulary(),
            Backend::CharNgram(m) => m.vocabulary(),
        }
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Model("empty token input".into()));
        }
        let vocab_len = self.vocabulary().len() as TokenId;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_len) {
            return Err(Error::Model(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Per-layer last-token hidden states for a prompt.
    pub fn forward_hidden(&self, tokens: &[TokenId]) -> Result<HiddenStack> {
        self.check_tokens(tokens)?;
        match self {
            Backend::TinyTransformer(m) => m.forward_hidden(tokens),
            Backend::MockIcl(m) => m.forward_hidden(tokens),
            Backend::CharNgram(m) => m.forward_hidden(tokens),
        }
    }

    /// Next-token log-probability row for a prompt.
    pub fn next_token_logprobs(&self, tokens: &[TokenId]) -> Result<LogProbRow> {
        self.check_tokens(tokens)?;
        match self {
            Backend::TinyTransformer(m) => m.next_token_logprobs(tokens),
            Backend::MockIcl(m) => m.next_token_logprobs(tokens),
            Backend::CharNgram(m) => m.next_token_logprobs(tokens),
        }
    }

    /// Open an incremental evaluation session. Sessions reuse whatever
    /// prefix of the previous prompt is unchanged; results are defined to
    /// be bit-identical to full re-evaluation.
    pub fn session(&self) -> Session<'_> {
        match self {
            Backend::TinyTransformer(m) => Session::Cached {
                model: m,
                state: m.new_state(),
            },
            _ => Session::Stateless {
                backend: self,
                tokens: Vec::new(),
            },
        }
    }
}

fn backend_name(manifest_path: &Path) -> String {
    if manifest_path.file_name().map(|n| n == "manifest.json").unwrap_or(false) {
        if let Some(dir) = manifest_path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "backend".into())
}

// ---------------------------------------------------------------------------
// Incremental evaluation sessions
// ---------------------------------------------------------------------------

/// Incremental evaluation handle. The transformer keeps a key/value and
/// residual cache and only recomputes the divergent tail of the prompt;
/// the analytic backends recompute from scratch (they are cheap).
pub enum Session<'a> {
    Cached {
        model: &'a TinyTransformer,
        state: TransformerState,
    },
    Stateless {
        backend: &'a Backend,
        tokens: Vec<TokenId>,
    },
}

impl Session<'_> {
    /// Replace the session prompt, reusing the longest common token
    /// prefix with the previous prompt.
    pub fn set_tokens(&mut self, tokens: &[TokenId]) -> Result<()> {
        match self {
            Session::Cached { model, state } => {
                if tokens.is_empty() {
                    return Err(Error::Model("empty token input".into()));
                }
                model.rewind_to_common_prefix(state, tokens);
                for &t in &tokens[state.len()..] {
                    model.advance(state, t)?;
                }
                Ok(())
            }
            Session::Stateless { backend, tokens: held } => {
                backend.check_tokens(tokens)?;
                held.clear();
                held.extend_from_slice(tokens);
                Ok(())
            }
        }
    }

    pub fn hidden_stack(&self) -> Result<HiddenStack> {
        match self {
            Session::Cached { model, state } => model.hidden_at_last(state),
            Session::Stateless { backend, tokens } => backend.forward_hidden(tokens),
        }
    }

    pub fn next_token_logprobs(&self) -> Result<LogProbRow> {
        match self {
            Session::Cached { model, state } => model.logprobs_at_last(state),
            Session::Stateless { backend, tokens } => backend.next_token_logprobs(tokens),
        }
    }
}
