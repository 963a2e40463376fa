//! Image and detection projection, concept embeddings and the semantic
//! vision Transformer. The vision sequence carries no positions: detections
//! form an unordered set.

use rand::Rng;

use crate::data::ObjectDetection;
use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, NormPlacement, RunMode, TransformerLayer};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `img` is `1 x d`, `objects` is `N x d`.
#[derive(Debug, Clone, Copy)]
pub struct VisionSequence {
    pub img: Var,
    pub objects: Var,
}

#[derive(Debug, Clone)]
pub struct SemanticVision {
    pub image_proj: Linear,
    pub object_proj: Linear,
    pub concepts: ParamId,
    pub concept_vocab: usize,
    pub layers: Vec<TransformerLayer>,
}

pub struct VisionConfig {
    pub d: usize,
    pub d_v: usize,
    pub concept_vocab: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub norm: NormPlacement,
}

impl SemanticVision {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, cfg: &VisionConfig, rng: &mut R) -> Result<Self> {
        let image_proj = Linear::new(ps, &format!("{name}.image_proj"), cfg.d_v, cfg.d, true, rng)?;
        let object_proj = Linear::new(ps, &format!("{name}.object_proj"), cfg.d_v, cfg.d, true, rng)?;
        let concepts = ps.normal(format!("{name}.concepts"), &[cfg.concept_vocab, cfg.d], 0.1, rng)?;
        let layers = (0..cfg.layers)
            .map(|l| {
                TransformerLayer::new(
                    ps,
                    &format!("{name}.layer{l}"),
                    cfg.d,
                    cfg.heads,
                    cfg.ffn_hidden,
                    cfg.norm,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            image_proj,
            object_proj,
            concepts,
            concept_vocab: cfg.concept_vocab,
            layers,
        })
    }

    /// `1 x d_v` global image feature to `1 x d`.
    pub fn project_image(&self, g: &mut Graph<'_>, image_feat: Var) -> Result<Var> {
        self.image_proj.forward(g, image_feat)
    }

    /// Row `i` is the projected region feature plus the embedding of its
    /// concept label.
    pub fn embed_objects(&self, g: &mut Graph<'_>, objects: &[ObjectDetection]) -> Result<Var> {
        let d_v = self.object_proj.in_dim;
        let mut feats = Vec::with_capacity(objects.len() * d_v);
        let mut ids = Vec::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            if o.concept_id >= self.concept_vocab {
                return Err(Error::Data(format!(
                    "object {i}: concept id {} outside vocabulary of {}",
                    o.concept_id, self.concept_vocab
                )));
            }
            if o.feat.len() != d_v {
                return Err(Error::shape(
                    "embed_objects",
                    format!("object {i} has {} features, expected {d_v}", o.feat.len()),
                ));
            }
            feats.extend_from_slice(o.feat.data());
            ids.push(o.concept_id);
        }
        let x = g.constant(Tensor::matrix(objects.len(), d_v, feats)?);
        let proj = self.object_proj.forward(g, x)?;
        let table = g.param(self.concepts);
        let emb = g.gather_rows(table, &ids)?;
        g.add(proj, emb)
    }

    /// Encodes `[img; objects]` with the vision Transformer.
    pub fn vit_encode(&self, g: &mut Graph<'_>, seq: VisionSequence, mode: &mut RunMode<'_>) -> Result<VisionSequence> {
        let n = g.dims(seq.objects).0;
        let mut x = g.concat_rows(&[seq.img, seq.objects])?;
        for layer in &self.layers {
            x = layer.forward(g, x, None, mode)?;
        }
        Ok(VisionSequence {
            img: g.slice_rows(x, 0, 1)?,
            objects: g.slice_rows(x, 1, n)?,
        })
    }
}
