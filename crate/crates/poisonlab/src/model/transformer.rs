//! Decoder-only transformer over f64, small enough to hand-check.
//!
//! Architecture (pre-norm): token embedding + learned positional
//! embedding; per block `x += attn(ln1(x))` then `x += mlp(ln2(x))` with
//! multi-head causal attention and a 2-layer GELU MLP of width `4·dim`;
//! a final layer norm and a tied output projection (logits are dot
//! products against the token embedding rows). Hidden states exposed to
//! the distortion metric are the post-block residual vectors at the last
//! position, before the final norm.

use crate::error::{Error, Result};
use crate::math::{dot, gelu, log_softmax, softmax_in_place};
use crate::model::{HiddenStack, LogProbRow, Manifest};
use crate::tensor::TensorContainer;
use crate::text::{TokenId, Vocabulary};

const LN_EPSILON: f64 = 1e-5;

/// Row-major matrix acting on column vectors: `y = W·x + b` with
/// `W: rows × cols`.
#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn from_tensor(t: &crate::tensor::Tensor) -> Self {
        Self {
            rows: t.shape[0],
            cols: t.shape[1],
            data: t.data.iter().map(|&v| v as f64).collect(),
        }
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| dot(&self.data[r * self.cols..(r + 1) * self.cols], x))
            .collect()
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone)]
struct Norm {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Norm {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let denom = (var + LN_EPSILON).sqrt();
        x.iter()
            .zip(self.weight.iter().zip(&self.bias))
            .map(|(v, (w, b))| (v - mean) / denom * w + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    bq: Vec<f64>,
    bk: Vec<f64>,
    bv: Vec<f64>,
    bo: Vec<f64>,
    ln2: Norm,
    w_up: Mat,
    b_up: Vec<f64>,
    w_down: Mat,
    b_down: Vec<f64>,
}

/// Loaded tiny transformer. Immutable after construction.
#[derive(Debug)]
pub struct TinyTransformer {
    name: String,
    vocab: Vocabulary,
    layers: usize,
    dim: usize,
    heads: usize,
    head_dim: usize,
    max_seq: usize,
    token_embedding: Mat,
    position_embedding: Mat,
    blocks: Vec<Block>,
    final_norm: Norm,
}

/// Per-prompt evaluation state: cached keys, values, and post-block
/// residuals for every processed position. Rewinding to a shared prefix
/// just truncates these caches; the math for the remaining positions is
/// identical to a full forward pass, so cached and uncached evaluation
/// agree bit-for-bit.
#[derive(Debug, Clone)]
pub struct TransformerState {
    tokens: Vec<TokenId>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    residuals: Vec<Vec<Vec<f64>>>,
}

impl TransformerState {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl TinyTransformer {
    pub fn from_container(
        manifest: &Manifest,
        container: &TensorContainer,
        vocab: Vocabulary,
        name: String,
    ) -> Result<Self> {
        let d = manifest.dim;
        let layers = manifest.layers;
        let heads = manifest.heads;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Manifest(format!(
                "dim {d} must divide evenly into heads {heads}"
            )));
        }
        let mlp = 4 * d;
        let vocab_size = vocab.len();

        let token_embedding = Mat::from_tensor(container.require("token_embedding", &[vocab_size, d])?);
        let pos = container
            .get("position_embedding")
            .ok_or_else(|| Error::Container("missing tensor \"position_embedding\"".into()))?;
        if pos.shape.len() != 2 || pos.shape[1] != d {
            return Err(Error::Container(format!(
                "position_embedding shape {:?} incompatible with dim {d}",
                pos.shape
            )));
        }
        let max_seq = pos.shape[0];
        let position_embedding = Mat::from_tensor(pos);

        let vec_param = |name: &str, len: usize| -> Result<Vec<f64>> {
            Ok(container
                .require(name, &[len])?
                .data
                .iter()
                .map(|&v| v as f64)
                .collect())
        };
        let norm_param = |prefix: &str| -> Result<Norm> {
            Ok(Norm {
                weight: vec_param(&format!("{prefix}.weight"), d)?,
                bias: vec_param(&format!("{prefix}.bias"), d)?,
            })
        };

        let mut blocks = Vec::with_capacity(layers);
        for i in 0..layers {
            let p = format!("blocks.{i}");
            blocks.push(Block {
                ln1: norm_param(&format!("{p}.ln1"))?,
                wq: Mat::from_tensor(container.require(&format!("{p}.attn.wq"), &[d, d])?),
                wk: Mat::from_tensor(container.require(&format!("{p}.attn.wk"), &[d, d])?),
                wv: Mat::from_tensor(container.require(&format!("{p}.attn.wv"), &[d, d])?),
                wo: Mat::from_tensor(container.require(&format!("{p}.attn.wo"), &[d, d])?),
                bq: vec_param(&format!("{p}.attn.bq"), d)?,
                bk: vec_param(&format!("{p}.attn.bk"), d)?,
                bv: vec_param(&format!("{p}.attn.bv"), d)?,
                bo: vec_param(&format!("{p}.attn.bo"), d)?,
                ln2: norm_param(&format!("{p}.ln2"))?,
                w_up: Mat::from_tensor(container.require(&format!("{p}.mlp.w_up"), &[mlp, d])?),
                b_up: vec_param(&format!("{p}.mlp.b_up"), mlp)?,
                w_down: Mat::from_tensor(container.require(&format!("{p}.mlp.w_down"), &[d, mlp])?),
                b_down: vec_param(&format!("{p}.mlp.b_down"), d)?,
            });
        }
        let final_norm = norm_param("final_norm")?;

        Ok(Self {
            name,
            vocab,
            layers,
            dim: d,
            heads,
            head_dim: d / heads,
            max_seq,
            token_embedding,
            position_embedding,
            blocks,
            final_norm,
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

    pub fn max_seq(&self) -> usize {
        self.max_seq
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn new_state(&self) -> TransformerState {
        TransformerState {
            tokens: Vec::new(),
            keys: vec![Vec::new(); self.layers],
            values: vec![Vec::new(); self.layers],
            residuals: vec![Vec::new(); self.layers],
        }
    }

    /// Truncate the state to the longest common prefix with `tokens`.
    pub(crate) fn rewind_to_common_prefix(&self, state: &mut TransformerState, tokens: &[TokenId]) {
        let common = state
            .tokens
            .iter()
            .zip(tokens)
            .take_while(|(a, b)| a == b)
            .count();
        state.tokens.truncate(common);
        for l in 0..self.layers {
            state.keys[l].truncate(common);
            state.values[l].truncate(common);
            state.residuals[l].truncate(common);
        }
    }

    /// Process one more token at the next position.
    pub(crate) fn advance(&self, state: &mut TransformerState, token: TokenId) -> Result<()> {
        let pos = state.tokens.len();
        if pos >= self.max_seq {
            return Err(Error::Model(format!(
                "prompt length {} exceeds positional table {}",
                pos + 1,
                self.max_seq
            )));
        }
        if token as usize >= self.vocab.len() {
            return Err(Error::Model(format!("token id {token} outside vocabulary")));
        }

        let mut x: Vec<f64> = self
            .token_embedding
            .row(token as usize)
            .iter()
            .zip(self.position_embedding.row(pos))
            .map(|(e, p)| e + p)
            .collect();

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        for (l, block) in self.blocks.iter().enumerate() {
            let a = block.ln1.apply(&x);
            let q = add(&block.wq.matvec(&a), &block.bq);
            let k = add(&block.wk.matvec(&a), &block.bk);
            let v = add(&block.wv.matvec(&a), &block.bv);
            state.keys[l].push(k);
            state.values[l].push(v);

            // Causal attention: the new position attends over positions
            // 0..=pos of this layer's cache.
            let mut ctx = vec![0.0; self.dim];
            for h in 0..self.heads {
                let hs = h * self.head_dim;
                let he = hs + self.head_dim;
                let mut scores: Vec<f64> = (0..=pos)
                    .map(|j| dot(&q[hs..he], &state.keys[l][j][hs..he]) * scale)
                    .collect();
                softmax_in_place(&mut scores);
                for (j, w) in scores.iter().enumerate() {
                    for (c, vv) in ctx[hs..he].iter_mut().zip(&state.values[l][j][hs..he]) {
                        *c += w * vv;
                    }
                }
            }
            let attn = add(&block.wo.matvec(&ctx), &block.bo);
            for (xi, ai) in x.iter_mut().zip(&attn) {
                *xi += ai;
            }

            let m = block.ln2.apply(&x);
            let up: Vec<f64> = add(&block.w_up.matvec(&m), &block.b_up)
                .into_iter()
                .map(gelu)
                .collect();
            let down = add(&block.w_down.matvec(&up), &block.b_down);
            for (xi, di) in x.iter_mut().zip(&down) {
                *xi += di;
            }

            state.residuals[l].push(x.clone());
        }
        state.tokens.push(token);
        Ok(())
    }

    pub(crate) fn hidden_at_last(&self, state: &TransformerState) -> Result<HiddenStack> {
        if state.tokens.is_empty() {
            return Err(Error::Model("empty token input".into()));
        }
        let layers: Vec<Vec<f64>> = (0..self.layers)
            .map(|l| state.residuals[l].last().unwrap().clone())
            .collect();
        HiddenStack::new(layers, &state.tokens)
    }

    pub(crate) fn logprobs_at_last(&self, state: &TransformerState) -> Result<LogProbRow> {
        if state.tokens.is_empty() {
            return Err(Error::Model("empty token input".into()));
        }
        let top = state.residuals[self.layers - 1].last().unwrap();
        let xf = self.final_norm.apply(top);
        let logits: Vec<f64> = (0..self.vocab.len())
            .map(|v| dot(self.token_embedding.row(v), &xf))
            .collect();
        Ok(LogProbRow(log_softmax(&logits)))
    }

    pub fn forward_hidden(&self, tokens: &[TokenId]) -> Result<HiddenStack> {
        let mut state = self.new_state();
        for &t in tokens {
            self.advance(&mut state, t)?;
        }
        self.hidden_at_last(&state)
    }

    pub fn next_token_logprobs(&self, tokens: &[TokenId]) -> Result<LogProbRow> {
        let mut state = self.new_state();
        for &t in tokens {
            self.advance(&mut state, t)?;
        }
        self.logprobs_at_last(&state)
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
