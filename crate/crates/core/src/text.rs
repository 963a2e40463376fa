//! Textual Transformer over `[cls; words]` feature sequences.

use rand::Rng;

use crate::data::TaggedSentence;
use crate::error::{Error, Result};
use crate::tensor::nn::{NormPlacement, RunMode, TransformerLayer};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Encoded sentence: `cls` is `1 x d`, `words` is `M x d`.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoding {
    pub cls: Var,
    pub words: Var,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub layers: Vec<TransformerLayer>,
    /// Learned positions for `max_len + 1` slots, when enabled.
    pub positional: Option<ParamId>,
    pub dim: usize,
}

pub struct TextEncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub norm: NormPlacement,
    pub positional: bool,
    pub max_len: usize,
}

impl TextEncoder {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, cfg: &TextEncoderConfig, rng: &mut R) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|l| {
                TransformerLayer::new(
                    ps,
                    &format!("{name}.layer{l}"),
                    cfg.dim,
                    cfg.heads,
                    cfg.ffn_hidden,
                    cfg.norm,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let positional = if cfg.positional {
            Some(ps.normal(format!("{name}.positions"), &[cfg.max_len + 1, cfg.dim], 0.02, rng)?)
        } else {
            None
        };
        Ok(Self {
            layers,
            positional,
            dim: cfg.dim,
        })
    }

    /// Encodes `cls` (`1 x d`) and `words` (`M x d`) as one sequence whose
    /// first position becomes the sentence representation.
    pub fn encode(&self, g: &mut Graph<'_>, cls: Var, words: Var, mode: &mut RunMode<'_>) -> Result<TextEncoding> {
        let (m, d) = g.dims(words);
        if d != self.dim || g.dims(cls) != (1, self.dim) {
            return Err(Error::shape(
                "encode_text",
                format!("features {:?} and {:?} for width {}", g.dims(cls), (m, d), self.dim),
            ));
        }
        let mut x = g.concat_rows(&[cls, words])?;
        if let Some(pos) = self.positional {
            let table = g.param(pos);
            let slots = g.dims(table).0;
            if m + 1 > slots {
                return Err(Error::shape(
                    "encode_text",
                    format!("{m} tokens exceed the {} positional slots", slots - 1),
                ));
            }
            let idx: Vec<usize> = (0..=m).collect();
            let p = g.gather_rows(table, &idx)?;
            x = g.add(x, p)?;
        }
        for layer in &self.layers {
            x = layer.forward(g, x, None, mode)?;
        }
        Ok(TextEncoding {
            cls: g.slice_rows(x, 0, 1)?,
            words: g.slice_rows(x, 1, m)?,
        })
    }

    pub fn encode_sentence(
        &self,
        g: &mut Graph<'_>,
        sentence: &TaggedSentence,
        mode: &mut RunMode<'_>,
    ) -> Result<TextEncoding> {
        let cls = g.constant(sentence.cls_feat.as_matrix());
        let words = g.constant(sentence.word_feats.clone());
        self.encode(g, cls, words, mode)
    }
}
