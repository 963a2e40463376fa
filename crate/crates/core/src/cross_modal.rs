//! Text bridge, gated fusion of the two vision views and the synchronous
//! cross-modal interaction rounds.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::{FeedForward, Linear, NormPlacement, RunMode, TransformerLayer};
use crate::tensor::{Activation, Graph, ParamStore, Var};

pub const ALPHA_PROBE: &str = "fusion_alpha";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionGate {
    /// `alpha = sigmoid(act(V1 W1 + V2 W2) W)`, a convex blend.
    Sigmoid,
    /// `alpha = act(V1 W1 + V2 W2) W` without squashing.
    Unbounded,
}

impl FusionGate {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(FusionGate::Sigmoid),
            "unbounded" => Some(FusionGate::Unbounded),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionGate::Sigmoid => "sigmoid",
            FusionGate::Unbounded => "unbounded",
        }
    }
}

/// Two-layer feed-forward map applied to the encoded words.
pub fn bridge_text(g: &mut Graph<'_>, bridge: &FeedForward, words: Var) -> Result<Var> {
    bridge.forward(g, words)
}

#[derive(Debug, Clone)]
pub struct ViewFusion {
    pub w_v1: Linear,
    pub w_v2: Linear,
    pub w_v: Linear,
    pub inner: Activation,
    pub gate: FusionGate,
}

impl ViewFusion {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, gate: FusionGate, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_v1: Linear::new(ps, &format!("{name}.w_v1"), d, d, false, rng)?,
            w_v2: Linear::new(ps, &format!("{name}.w_v2"), d, d, false, rng)?,
            w_v: Linear::new(ps, &format!("{name}.w_v"), d, d, false, rng)?,
            inner: Activation::Tanh,
            gate,
        })
    }

    /// `alpha * V1 + (1 - alpha) * V2`, rowwise.
    pub fn forward(&self, g: &mut Graph<'_>, v1: Var, v2: Var) -> Result<Var> {
        if g.dims(v1) != g.dims(v2) {
            return Err(Error::shape(
                "fuse_views",
                format!("{:?} vs {:?}", g.dims(v1), g.dims(v2)),
            ));
        }
        let a = self.w_v1.forward(g, v1)?;
        let b = self.w_v2.forward(g, v2)?;
        let s = g.add(a, b)?;
        let s = g.activation(s, self.inner);
        let pre = self.w_v.forward(g, s)?;
        let alpha = match self.gate {
            FusionGate::Sigmoid => g.sigmoid(pre),
            FusionGate::Unbounded => pre,
        };
        g.probe(ALPHA_PROBE, alpha);
        let left = g.mul(alpha, v1)?;
        let rest = g.one_minus(alpha);
        let right = g.mul(rest, v2)?;
        g.add(left, right)
    }
}

/// Parameters of one interaction round.
#[derive(Debug, Clone)]
pub struct InteractionRound {
    pub fusion: ViewFusion,
    pub text: TransformerLayer,
    pub view1: TransformerLayer,
    pub view2: TransformerLayer,
}

/// The three updates of a round, which may be evaluated in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Text,
    View1,
    View2,
}

pub const DEFAULT_ORDER: [Part; 3] = [Part::Text, Part::View1, Part::View2];

#[derive(Debug, Clone, Copy)]
pub struct InteractionState {
    pub h: Var,
    pub v1: Var,
    pub v2: Var,
}

#[derive(Debug, Clone)]
pub struct CrossModal {
    pub bridge: FeedForward,
    pub rounds: Vec<InteractionRound>,
}

pub struct CrossModalConfig {
    pub d: usize,
    pub heads: usize,
    pub rounds: usize,
    pub ffn_hidden: usize,
    pub norm: NormPlacement,
    pub gate: FusionGate,
}

impl CrossModal {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, cfg: &CrossModalConfig, rng: &mut R) -> Result<Self> {
        let bridge = FeedForward::new(ps, &format!("{name}.bridge"), cfg.d, cfg.d, Activation::Relu, rng)?;
        let mut rounds = Vec::with_capacity(cfg.rounds);
        for r in 0..cfg.rounds {
            let p = format!("{name}.round{r}");
            let layer = |ps: &mut ParamStore, part: &str, rng: &mut R| {
                TransformerLayer::new(
                    ps,
                    &format!("{p}.{part}"),
                    cfg.d,
                    cfg.heads,
                    cfg.ffn_hidden,
                    cfg.norm,
                    rng,
                )
            };
            rounds.push(InteractionRound {
                fusion: ViewFusion::new(ps, &format!("{p}.fusion"), cfg.d, cfg.gate, rng)?,
                text: layer(ps, "text", rng)?,
                view1: layer(ps, "view1", rng)?,
                view2: layer(ps, "view2", rng)?,
            });
        }
        Ok(Self { bridge, rounds })
    }

    pub fn bridge_text(&self, g: &mut Graph<'_>, words: Var) -> Result<Var> {
        bridge_text(g, &self.bridge, words)
    }

    pub fn interact(&self, g: &mut Graph<'_>, state: InteractionState, mode: &mut RunMode<'_>) -> Result<Var> {
        self.interact_with_order(g, state, mode, DEFAULT_ORDER)
    }

    /// Runs every round reading only the previous round's committed state;
    /// `order` fixes the evaluation order of the three parts within a round.
    pub fn interact_with_order(
        &self,
        g: &mut Graph<'_>,
        state: InteractionState,
        mode: &mut RunMode<'_>,
        order: [Part; 3],
    ) -> Result<Var> {
        let InteractionState { h, v1, v2 } = state;
        if g.dims(v1) != g.dims(v2) {
            return Err(Error::shape(
                "interact",
                format!("views {:?} and {:?}", g.dims(v1), g.dims(v2)),
            ));
        }
        let has_objects = g.dims(v1).0 > 0;
        let (mut h, mut v1, mut v2) = (h, v1, v2);
        for round in &self.rounds {
            let (mut next_h, mut next_v1, mut next_v2) = (h, v1, v2);
            for part in order {
                match part {
                    Part::Text if has_objects => {
                        let fused = round.fusion.forward(g, v1, v2)?;
                        next_h = round.text.forward(g, h, Some(fused), mode)?;
                    }
                    Part::Text => next_h = round.text.feed_forward(g, h, mode)?,
                    Part::View1 if has_objects => next_v1 = round.view1.forward(g, v1, Some(h), mode)?,
                    Part::View2 if has_objects => next_v2 = round.view2.forward(g, v2, Some(h), mode)?,
                    Part::View1 | Part::View2 => {}
                }
            }
            h = next_h;
            v1 = next_v1;
            v2 = next_v2;
        }
        Ok(h)
    }
}
