//! Per-view text-image relevance and local-global fusion of object features.
//!
//! `C = tanh(h W_ti v^T)` is a scalar, `M = tanh(h W_t + C * v W_i)` gates
//! how much of the global image feature enters each object row:
//! `V_i = [M * v, o_i] W_m + b_m`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

pub const RELEVANCE_PROBE: &str = "relevance";

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceMode {
    /// `M` has one entry per feature.
    Vector,
    /// `M` is a single number scaling the image feature.
    Scalar,
}

impl RelevanceMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vector" => Some(RelevanceMode::Vector),
            "scalar" => Some(RelevanceMode::Scalar),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelevanceMode::Vector => "vector",
            RelevanceMode::Scalar => "scalar",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelevanceView {
    pub w_ti: ParamId,
    pub w_t: Linear,
    pub w_i: Linear,
    pub fuse: Linear,
    pub mode: RelevanceMode,
    pub dim: usize,
}

impl RelevanceView {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, mode: RelevanceMode, rng: &mut R) -> Result<Self> {
        let out = match mode {
            RelevanceMode::Vector => d,
            RelevanceMode::Scalar => 1,
        };
        // small scoring weights: relevance starts near zero and training
        // has to open it
        let mut small = |suffix: &str, cols: usize| -> Result<Linear> {
            Ok(Linear {
                weight: ps.normal(format!("{name}.{suffix}"), &[d, cols], INIT_STD, rng)?,
                bias: None,
                in_dim: d,
                out_dim: cols,
            })
        };
        let w_t = small("w_t", out)?;
        let w_i = small("w_i", out)?;
        let w_ti = small("w_ti", d)?.weight;
        Ok(Self {
            w_ti,
            w_t,
            w_i,
            fuse: Linear::new(ps, &format!("{name}.fuse"), 2 * d, d, true, rng)?,
            mode,
            dim: d,
        })
    }

    /// Returns `(C, M)`: the `1 x 1` bilinear score and the relevance
    /// (`1 x d`, or `1 x 1` in scalar mode).
    pub fn score(&self, g: &mut Graph<'_>, h_cls: Var, v_img: Var) -> Result<(Var, Var)> {
        for (what, v) in [("text", h_cls), ("image", v_img)] {
            if g.dims(v) != (1, self.dim) {
                return Err(Error::shape(
                    "relevance",
                    format!("{what} feature is {:?}, expected (1, {})", g.dims(v), self.dim),
                ));
            }
        }
        let w_ti = g.param(self.w_ti);
        let hw = g.matmul(h_cls, w_ti)?;
        let prod = g.mul(hw, v_img)?;
        let bilinear = g.sum(prod);
        let c = g.tanh(bilinear);
        let t = self.w_t.forward(g, h_cls)?;
        let i = self.w_i.forward(g, v_img)?;
        let i = g.mul_scalar(i, c)?;
        let pre = g.add(t, i)?;
        let m = g.tanh(pre);
        g.probe(RELEVANCE_PROBE, m);
        Ok((c, m))
    }

    /// Fused rows `[M * v_img, objects_i] W_m + b_m`, one per object.
    pub fn fuse_local_global(&self, g: &mut Graph<'_>, m: Var, v_img: Var, objects: Var) -> Result<Var> {
        let n = g.dims(objects).0;
        let scaled = match self.mode {
            RelevanceMode::Vector => g.mul(m, v_img)?,
            RelevanceMode::Scalar => g.mul_scalar(v_img, m)?,
        };
        let global = g.broadcast_rows(scaled, n)?;
        let cat = g.concat_cols(&[global, objects])?;
        self.fuse.forward(g, cat)
    }

    /// `(M, V)` for one view.
    pub fn forward(&self, g: &mut Graph<'_>, h_cls: Var, v_img: Var, objects: Var) -> Result<(Var, Var)> {
        let (_, m) = self.score(g, h_cls, v_img)?;
        let v = self.fuse_local_global(g, m, v_img, objects)?;
        Ok((m, v))
    }
}
