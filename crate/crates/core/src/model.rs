//! End-to-end network: text and vision encoders, spatial graph, relevance
//! per view, cross-modal rounds and the CRF head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::crf::{self, Crf, EmissionTable};
use crate::cross_modal::{CrossModal, CrossModalConfig, InteractionState, Part, DEFAULT_ORDER};
use crate::data::{spans_from_bio2, DatasetMeta, MultimodalExample, Span};
use crate::error::{Error, Result};
use crate::relevance::RelevanceView;
use crate::spatial::{build_graph, BBox, Rgcn};
use crate::tensor::nn::RunMode;
use crate::tensor::{Graph, ParamStore, Var};
use crate::text::{TextEncoder, TextEncoderConfig};
use crate::vision::{SemanticVision, VisionConfig, VisionSequence};

/// Parameter-name prefixes, in forward order.
pub const STAGES: [&str; 6] = ["text", "vision", "spatial", "relevance", "cross", "crf"];

const STAGE_PROBES: [&str; 6] = [
    "stage:text",
    "stage:vision",
    "stage:spatial",
    "stage:relevance",
    "stage:cross",
    "stage:crf",
];

#[derive(Debug, Clone)]
pub struct HamNet {
    pub text: TextEncoder,
    pub vision: SemanticVision,
    pub spatial: Rgcn,
    pub relevance: [RelevanceView; 2],
    pub cross: CrossModal,
    pub crf: Crf,
    pub d: usize,
    pub d_v: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `M x 9`
    pub emissions: Var,
    /// `M^1`, `M^2`
    pub relevance: [Var; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub spans: Vec<Span>,
    pub score: f64,
    /// Mean absolute relevance per view.
    pub relevance: [f64; 2],
}

impl HamNet {
    /// Builds the network and its freshly initialised parameters.
    pub fn new(cfg: &PipelineConfig, meta: &DatasetMeta) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        meta.validate()?;
        if cfg.d != meta.d {
            return Err(Error::Data(format!(
                "model width d={} does not match dataset feature width {}",
                cfg.d, meta.d
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamStore::new();
        let d = cfg.d;
        let ffn = cfg.ffn_mult * d;
        let norm = cfg.norm_placement()?;
        let text = TextEncoder::new(
            &mut ps,
            "text",
            &TextEncoderConfig {
                dim: d,
                heads: cfg.heads,
                layers: cfg.text_layers,
                ffn_hidden: ffn,
                norm,
                positional: cfg.text_positional,
                max_len: cfg.max_len,
            },
            &mut rng,
        )?;
        let vision = SemanticVision::new(
            &mut ps,
            "vision",
            &VisionConfig {
                d,
                d_v: meta.d_v,
                concept_vocab: meta.concept_vocab,
                heads: cfg.heads,
                layers: cfg.vit_layers,
                ffn_hidden: ffn,
                norm,
            },
            &mut rng,
        )?;
        let spatial = Rgcn::new(&mut ps, "spatial", d, cfg.rgcn_layers, cfg.activation()?, &mut rng)?;
        let mode = cfg.relevance()?;
        let relevance = [
            RelevanceView::new(&mut ps, "relevance.view1", d, mode, &mut rng)?,
            RelevanceView::new(&mut ps, "relevance.view2", d, mode, &mut rng)?,
        ];
        let cross = CrossModal::new(
            &mut ps,
            "cross",
            &CrossModalConfig {
                d,
                heads: cfg.heads,
                rounds: cfg.interaction_rounds,
                ffn_hidden: ffn,
                norm,
                gate: cfg.gate()?,
            },
            &mut rng,
        )?;
        let crf = Crf::new(&mut ps, "crf", d, cfg.bio2_constraints, &mut rng)?;
        Ok((
            Self {
                text,
                vision,
                spatial,
                relevance,
                cross,
                crf,
                d,
                d_v: meta.d_v,
                max_len: cfg.max_len,
            },
            ps,
        ))
    }

    fn check_example(&self, ex: &MultimodalExample) -> Result<()> {
        let s = &ex.sentence;
        if s.is_empty() {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        if s.len() > self.max_len {
            return Err(Error::Data(format!(
                "sentence of {} tokens exceeds max_len {}",
                s.len(),
                self.max_len
            )));
        }
        if s.word_feats.dims() != (s.len(), self.d) || s.cls_feat.len() != self.d {
            return Err(Error::Data(format!(
                "text features {:?} / {} do not match width {}",
                s.word_feats.dims(),
                s.cls_feat.len(),
                self.d
            )));
        }
        if ex.image_feat.len() != self.d_v {
            return Err(Error::Data(format!(
                "image feature has {} values, expected {}",
                ex.image_feat.len(),
                self.d_v
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<'_>, ex: &MultimodalExample, mode: &mut RunMode<'_>) -> Result<ForwardOutput> {
        self.forward_with_order(g, ex, mode, DEFAULT_ORDER)
    }

    pub fn forward_with_order(
        &self,
        g: &mut Graph<'_>,
        ex: &MultimodalExample,
        mode: &mut RunMode<'_>,
        order: [Part; 3],
    ) -> Result<ForwardOutput> {
        self.check_example(ex)?;

        let text = self.text.encode_sentence(g, &ex.sentence, mode)?;
        g.probe(STAGE_PROBES[0], text.words);

        let image = g.constant(ex.image_feat.as_matrix());
        let v_img = self.vision.project_image(g, image)?;
        let v_obj = self.vision.embed_objects(g, &ex.objects)?;
        let semantic = self.vision.vit_encode(
            g,
            VisionSequence {
                img: v_img,
                objects: v_obj,
            },
            mode,
        )?;
        g.probe(STAGE_PROBES[1], semantic.objects);
        g.probe(STAGE_PROBES[1], semantic.img);

        let boxes: Vec<BBox> = ex.objects.iter().map(|o| o.bbox).collect();
        let graph = build_graph(&boxes);
        let nodes = g.concat_rows(&[v_img, v_obj])?;
        let spatial_out = self.spatial.forward(g, &graph, nodes)?;
        g.probe(STAGE_PROBES[2], spatial_out);
        let n = boxes.len();
        let spatial = VisionSequence {
            img: g.slice_rows(spatial_out, 0, 1)?,
            objects: g.slice_rows(spatial_out, 1, n)?,
        };

        let (m1, v1) = self.relevance[0].forward(g, text.cls, semantic.img, semantic.objects)?;
        let (m2, v2) = self.relevance[1].forward(g, text.cls, spatial.img, spatial.objects)?;
        for v in [m1, m2, v1, v2] {
            g.probe(STAGE_PROBES[3], v);
        }

        let h = self.cross.bridge_text(g, text.words)?;
        let h = self
            .cross
            .interact_with_order(g, InteractionState { h, v1, v2 }, mode, order)?;
        g.probe(STAGE_PROBES[4], h);

        let emissions = self.crf.emissions(g, h)?;
        g.probe(STAGE_PROBES[5], emissions);
        Ok(ForwardOutput {
            emissions,
            relevance: [m1, m2],
        })
    }

    /// Sequence NLL of the gold labels.
    pub fn loss(&self, g: &mut Graph<'_>, ex: &MultimodalExample, mode: &mut RunMode<'_>) -> Result<Var> {
        let out = self.forward(g, ex, mode)?;
        let loss = self.crf.nll(g, out.emissions, &ex.sentence.labels)?;
        g.probe(STAGE_PROBES[5], loss);
        Ok(loss)
    }

    /// Sum of per-example losses over `batch`.
    pub fn batch_loss(&self, g: &mut Graph<'_>, batch: &[&MultimodalExample], mode: &mut RunMode<'_>) -> Result<Var> {
        let mut total: Option<Var> = None;
        for ex in batch {
            let l = self.loss(g, ex, mode)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::Data("empty batch".into()))
    }

    pub fn predict(&self, ps: &ParamStore, ex: &MultimodalExample) -> Result<Prediction> {
        let mut g = Graph::new(ps);
        let out = self.forward(&mut g, ex, &mut RunMode::eval())?;
        if let Some(stage) = first_non_finite(&g) {
            return Err(Error::NonFinite {
                stage: stage.into(),
                detail: "forward pass produced a non-finite value".into(),
            });
        }
        let em = EmissionTable::new(g.value(out.emissions).clone());
        let (labels, score) = crf::viterbi(&em, &self.crf.table(ps))?;
        let relevance = out.relevance.map(|m| {
            let v = g.value(m).data();
            v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
        });
        Ok(Prediction {
            spans: spans_from_bio2(&labels),
            labels,
            score,
            relevance,
        })
    }
}

/// Name of the first stage, in forward order, whose recorded output holds a
/// non-finite value.
pub fn first_non_finite(g: &Graph<'_>) -> Option<&'static str> {
    STAGE_PROBES.iter().zip(STAGES).find_map(|(probe, stage)| {
        g.probes(probe)
            .into_iter()
            .any(|v| !g.value(v).all_finite())
            .then_some(stage)
    })
}
