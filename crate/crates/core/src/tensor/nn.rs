//! Layers built from graph primitives: linear maps, layer norm, feed-forward
//! blocks, multi-head attention and a one-layer Transformer block usable for
//! both self- and cross-attention.
//!
//! Row-vector convention throughout: a linear map is `x W + b` with `W`
//! stored as `in x out`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Training-time randomness. Evaluation mode disables dropout.
pub struct RunMode<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
    rate: f64,
}

impl RunMode<'static> {
    pub fn eval() -> Self {
        RunMode { rng: None, rate: 0.0 }
    }
}

impl<'r> RunMode<'r> {
    pub fn train(rng: &'r mut ChaCha8Rng, dropout: f64) -> Self {
        RunMode {
            rng: Some(rng),
            rate: dropout,
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn dropout(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.dropout(x, self.rate, self.rng.as_deref_mut())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = ps.xavier(format!("{name}.weight"), in_dim, out_dim, rng)?;
        let bias = if bias {
            Some(ps.zeros(format!("{name}.bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.ones(format!("{name}.gamma"), &[dim])?,
            beta: ps.zeros(format!("{name}.beta"), &[dim])?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Two linear maps with an activation in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(ps, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(ps, &format!("{name}.down"), hidden, dim, true, rng)?,
            act,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.activation(h, self.act);
        self.down.forward(g, h)
    }
}

/// Scaled dot-product attention split over `heads` column blocks.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Probe label under which every per-head attention matrix is recorded.
pub const ATTENTION_PROBE: &str = "attention";

impl MultiHeadAttention {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: Linear::new(ps, &format!("{name}.wq"), dim, dim, true, rng)?,
            wk: Linear::new(ps, &format!("{name}.wk"), dim, dim, true, rng)?,
            wv: Linear::new(ps, &format!("{name}.wv"), dim, dim, true, rng)?,
            wo: Linear::new(ps, &format!("{name}.wo"), dim, dim, true, rng)?,
            heads,
            dim,
        })
    }

    /// `query: m x d`, `key`/`value: n x d` with `n >= 1`; returns the
    /// output projection of the concatenated heads, `m x d`.
    pub fn forward(&self, g: &mut Graph<'_>, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.wq.forward(g, query)?;
        let k = self.wk.forward(g, key)?;
        let v = self.wv.forward(g, value)?;
        let dk = self.dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores)?;
            g.probe(ATTENTION_PROBE, probs);
            outs.push(g.matmul(probs, vh)?);
        }
        let cat = g.concat_cols(&outs)?;
        self.wo.forward(g, cat)
    }

    /// `query + forward(query, key, value)`.
    pub fn forward_residual(&self, g: &mut Graph<'_>, query: Var, key: Var, value: Var) -> Result<Var> {
        let a = self.forward(g, query, key, value)?;
        g.add(query, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    /// `LN(x + sublayer(x))`
    Post,
    /// `x + sublayer(LN(x))`
    Pre,
}

impl NormPlacement {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "post" => Some(NormPlacement::Post),
            "pre" => Some(NormPlacement::Pre),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormPlacement::Post => "post",
            NormPlacement::Pre => "pre",
        }
    }
}

/// One attention sublayer plus one feed-forward sublayer, each with a
/// residual connection and layer normalization.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
    pub norm: NormPlacement,
}

impl TransformerLayer {
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        norm: NormPlacement,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), dim, heads, rng)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), dim, ffn_hidden, Activation::Relu, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            norm,
        })
    }

    /// Self-attention when `memory` is `None`, otherwise cross-attention with
    /// queries from `x` and keys/values from `memory`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Option<Var>, mode: &mut RunMode<'_>) -> Result<Var> {
        let x1 = match self.norm {
            NormPlacement::Post => {
                let kv = memory.unwrap_or(x);
                let a = self.attn.forward(g, x, kv, kv)?;
                let a = mode.dropout(g, a)?;
                let s = g.add(x, a)?;
                self.ln1.forward(g, s)?
            }
            NormPlacement::Pre => {
                let h = self.ln1.forward(g, x)?;
                let kv = memory.unwrap_or(h);
                let a = self.attn.forward(g, h, kv, kv)?;
                let a = mode.dropout(g, a)?;
                g.add(x, a)?
            }
        };
        self.feed_forward(g, x1, mode)
    }

    /// The feed-forward sublayer alone, used when there is nothing to attend to.
    pub fn feed_forward(&self, g: &mut Graph<'_>, x: Var, mode: &mut RunMode<'_>) -> Result<Var> {
        match self.norm {
            NormPlacement::Post => {
                let f = self.ffn.forward(g, x)?;
                let f = mode.dropout(g, f)?;
                let s = g.add(x, f)?;
                self.ln2.forward(g, s)
            }
            NormPlacement::Pre => {
                let h = self.ln2.forward(g, x)?;
                let f = self.ffn.forward(g, h)?;
                let f = mode.dropout(g, f)?;
                g.add(x, f)
            }
        }
    }
}
