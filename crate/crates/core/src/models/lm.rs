use serde::{Deserialize, Serialize};

use super::params::{Initializer, ParamStore};
use super::{EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

/// Shape of a decoder trunk. The desk-scale ladder lives in configs, e.g.
/// `L4·d64` for the teacher and `L1·d32` for the smallest student.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("mlp_dim", self.mlp_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.max_seq_len < 2 {
            return Err(Error::config(
                "max_seq_len",
                format!("must be at least 2, got {}", self.max_seq_len),
            ));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::config(
                "model_dim",
                format!(
                    "{} is not a multiple of num_heads {}",
                    self.model_dim, self.num_heads
                ),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Closed-form parameter count:
    /// `V·d + S·d + L·(4d² + 2d·m + m + 5d) + 2d + d·V`
    /// (embeddings, per-layer attention/MLP/norms, final norm, output projection).
    pub fn parameter_count(&self) -> usize {
        let (v, s, l, d, m) = (
            self.vocab_size,
            self.max_seq_len,
            self.num_layers,
            self.model_dim,
            self.mlp_dim,
        );
        v * d + s * d + l * (4 * d * d + 2 * d * m + m + 5 * d) + 2 * d + d * v
    }

    /// Short ladder label such as `L4·d64`.
    pub fn label(&self) -> String {
        format!("L{}·d{}", self.num_layers, self.model_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Teacher,
    Student,
}

const PER_LAYER: usize = 12;

/// Offsets of a decoder trunk inside a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct TrunkLayout {
    pub base: usize,
    pub num_layers: usize,
}

impl TrunkLayout {
    pub fn tensor_count(num_layers: usize) -> usize {
        2 + PER_LAYER * num_layers + 3
    }
    fn tok_emb(&self) -> usize {
        self.base
    }
    fn pos_emb(&self) -> usize {
        self.base + 1
    }
    fn layer(&self, l: usize, k: usize) -> usize {
        self.base + 2 + PER_LAYER * l + k
    }
    fn ln_f(&self) -> (usize, usize) {
        let b = self.base + 2 + PER_LAYER * self.num_layers;
        (b, b + 1)
    }
    pub fn lm_head(&self) -> usize {
        self.base + 2 + PER_LAYER * self.num_layers + 2
    }
}

/// Builds trunk parameters in layout order.
pub(crate) fn init_trunk(config: &ModelConfig, init: &mut Initializer) -> ParamStore {
    let (v, s, d, m) = (
        config.vocab_size,
        config.max_seq_len,
        config.model_dim,
        config.mlp_dim,
    );
    let mut p = ParamStore::new();
    p.push("tok_emb", init.normal(&[v, d]));
    p.push("pos_emb", init.normal(&[s, d]));
    for l in 0..config.num_layers {
        let n = |s: &str| format!("layers.{l}.{s}");
        p.push(n("ln1.gamma"), Tensor::full(&[d], 1.0));
        p.push(n("ln1.beta"), Tensor::zeros(&[d]));
        p.push(n("attn.wq"), init.normal(&[d, d]));
        p.push(n("attn.wk"), init.normal(&[d, d]));
        p.push(n("attn.wv"), init.normal(&[d, d]));
        p.push(n("attn.wo"), init.normal(&[d, d]));
        p.push(n("ln2.gamma"), Tensor::full(&[d], 1.0));
        p.push(n("ln2.beta"), Tensor::zeros(&[d]));
        p.push(n("mlp.w1"), init.normal(&[d, m]));
        p.push(n("mlp.b1"), Tensor::zeros(&[m]));
        p.push(n("mlp.w2"), init.normal(&[m, d]));
        p.push(n("mlp.b2"), Tensor::zeros(&[d]));
    }
    p.push("ln_f.gamma", Tensor::full(&[d], 1.0));
    p.push("ln_f.beta", Tensor::zeros(&[d]));
    p.push("lm_head", init.normal(&[d, v]));
    p
}

pub(crate) fn validate_tokens(config: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: config.max_seq_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfVocab {
            token: t,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

const MASKED: f64 = -1e9;

/// Causal attention mask: position `i` sees `j ≤ i` unless `j` is padding.
fn attention_mask(tokens: &[u32]) -> Tensor {
    let t = tokens.len();
    let mut data = vec![MASKED; t * t];
    for i in 0..t {
        for j in 0..=i {
            if tokens[j] != PAD || j == i {
                data[i * t + j] = 0.0;
            }
        }
    }
    Tensor::matrix(t, t, data).expect("mask shape")
}

/// Records the trunk on `tape` and returns the final-norm hidden states `[T, d]`.
pub(crate) fn trunk_forward(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    layout: TrunkLayout,
    leaves: &[NodeId],
    tokens: &[u32],
) -> Result<NodeId> {
    validate_tokens(config, tokens)?;
    let t = tokens.len();
    let hd = config.head_dim();
    let ids: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();

    let tok = tape.embedding(leaves[layout.tok_emb()], &ids)?;
    let pos = tape.slice(leaves[layout.pos_emb()], 0, 0, t)?;
    let mut x = tape.add(tok, pos)?;
    let mask = tape.constant(attention_mask(tokens));
    let inv_sqrt = 1.0 / (hd as f64).sqrt();

    for l in 0..layout.num_layers {
        let p = |k: usize| leaves[layout.layer(l, k)];
        let h = tape.layer_norm(x, p(0), p(1))?;
        let q = tape.matmul(h, p(2))?;
        let q = tape.scale(q, inv_sqrt)?;
        let k = tape.matmul(h, p(3))?;
        let v = tape.matmul(h, p(4))?;
        let mut heads = Vec::with_capacity(config.num_heads);
        for head in 0..config.num_heads {
            let qh = tape.slice(q, 1, head * hd, hd)?;
            let kh = tape.slice(k, 1, head * hd, hd)?;
            let vh = tape.slice(v, 1, head * hd, hd)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.add(scores, mask)?;
            let attn = tape.softmax(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let o = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let o = tape.matmul(o, p(5))?;
        x = tape.add(x, o)?;

        let h = tape.layer_norm(x, p(6), p(7))?;
        let u = tape.matmul(h, p(8))?;
        let u = tape.add(u, p(9))?;
        let u = tape.gelu(u)?;
        let u = tape.matmul(u, p(10))?;
        let u = tape.add(u, p(11))?;
        x = tape.add(x, u)?;
    }
    let (g, b) = layout.ln_f();
    Ok(tape.layer_norm(x, leaves[g], leaves[b])?)
}

/// Tiny decoder-only language model.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub role: ModelRole,
}

/// Forward-pass nodes of one sequence.
pub struct LmForward {
    pub leaves: Vec<NodeId>,
    pub hidden: NodeId,
    /// Logits for the requested rows, `[rows, vocab]`.
    pub logits: NodeId,
}

impl LanguageModel {
    /// Seeded initialization: N(0, 0.02) for weights and embeddings
    /// (including the output projection), ones/zeros for norms, zero biases.
    pub fn init(config: ModelConfig, role: ModelRole) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(config.seed);
        let params = init_trunk(&config, &mut init);
        Ok(Self {
            config,
            params,
            role,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore, role: ModelRole) -> Result<Self> {
        config.validate()?;
        let reference = init_trunk(&config, &mut Initializer::new(0));
        if reference.names() != params.names()
            || reference
                .tensors()
                .iter()
                .zip(params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::config(
                "params",
                "parameter names or shapes do not match the model config",
            ));
        }
        Ok(Self {
            config,
            params,
            role,
        })
    }

    pub(crate) fn layout(&self) -> TrunkLayout {
        TrunkLayout {
            base: 0,
            num_layers: self.config.num_layers,
        }
    }

    /// Records the model on `tape`; logits are produced for rows
    /// `start..start+len` of the sequence.
    pub fn forward_on<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        tokens: &[u32],
        start: usize,
        len: usize,
    ) -> Result<LmForward> {
        let leaves = self.params.register(tape);
        let layout = self.layout();
        let hidden = trunk_forward(tape, &self.config, layout, &leaves, tokens)?;
        if len == 0 || start + len > tokens.len() {
            return Err(Error::InvalidInput(format!(
                "logit rows {start}..{} outside sequence of length {}",
                start + len,
                tokens.len()
            )));
        }
        let rows = if start == 0 && len == tokens.len() {
            hidden
        } else {
            tape.slice(hidden, 0, start, len)?
        };
        let logits = tape.matmul(rows, leaves[layout.lm_head()])?;
        Ok(LmForward {
            leaves,
            hidden,
            logits,
        })
    }

    /// Next-token logits for every position, `[T, vocab]`.
    pub fn logits(&self, tokens: &[u32]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.forward_on(&mut tape, tokens, 0, tokens.len())?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Logits for rows `start..start+len`, `[len, vocab]`.
    pub fn logit_rows(&self, tokens: &[u32], start: usize, len: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.forward_on(&mut tape, tokens, start, len)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Logits of the last position only.
    pub fn last_logits(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let n = tokens.len();
        let fwd = self.forward_on(&mut tape, tokens, n.saturating_sub(1), 1)?;
        Ok(tape.value(fwd.logits).data().to_vec())
    }

    /// Greedy (temperature 0) continuation of `prompt`. Returns the prompt
    /// followed by the generated tokens. Ties go to the lowest token id;
    /// generation stops after EOS, after `max_new` tokens, or when the
    /// sequence reaches `max_seq_len`.
    pub fn greedy_decode(&self, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
        validate_tokens(&self.config, prompt)?;
        if max_new == 0 {
            return Ok(prompt.to_vec());
        }
        if prompt.len() >= self.config.max_seq_len {
            return Err(Error::NoRoomToGenerate {
                prompt_len: prompt.len(),
                max_seq_len: self.config.max_seq_len,
            });
        }
        let mut seq = prompt.to_vec();
        for _ in 0..max_new {
            if seq.len() >= self.config.max_seq_len {
                break;
            }
            let next = argmax(&self.last_logits(&seq)?) as u32;
            seq.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(seq)
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
