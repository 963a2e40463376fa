//! Independent reference implementations used as test oracles. Everything
//! here works on plain nested vectors with explicit loops and reads
//! parameter values straight out of the store.

#![allow(dead_code)]

use std::collections::BTreeSet;

use hamnet::cross_modal::{CrossModal, FusionGate, ViewFusion};
use hamnet::spatial::{BBox, RgcnLayer, SpatialGraph};
use hamnet::tensor::nn::{LayerNorm, Linear, MultiHeadAttention, NormPlacement, TransformerLayer};
use hamnet::tensor::{Activation, ParamId, ParamStore, Tensor};
use hamnet::text::TextEncoder;
use hamnet::vision::SemanticVision;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims();
    (0..r).map(|i| (0..c).map(|j| t.get(i, j)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let cols = m.first().map_or(0, Vec::len);
    Tensor::from_rows(m, cols).unwrap()
}

pub fn max_abs_diff(a: &Mat, t: &Tensor) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), t.dims());
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - t.get(i, j)).abs());
        }
    }
    worst
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn param(ps: &ParamStore, id: ParamId) -> Mat {
    to_mat(&ps.get(id).as_matrix())
}

fn param_vec(ps: &ParamStore, id: ParamId) -> Vec<f64> {
    ps.get(id).data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn linear(ps: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    let w = param(ps, l.weight);
    let mut y = matmul(x, &w);
    if let Some(b) = l.bias {
        let b = param_vec(ps, b);
        for row in &mut y {
            for (v, bj) in row.iter_mut().zip(&b) {
                *v += bj;
            }
        }
    }
    y
}

pub fn layer_norm(ps: &ParamStore, ln: &LayerNorm, x: &Mat) -> Mat {
    let gamma = param_vec(ps, ln.gamma);
    let beta = param_vec(ps, ln.beta);
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-12).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * gamma[j] + beta[j])
                .collect()
        })
        .collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Multi-head attention with explicit per-head loops. Also returns the
/// attention matrices, one per head.
pub fn attention(ps: &ParamStore, a: &MultiHeadAttention, query: &Mat, kv: &Mat) -> (Mat, Vec<Mat>) {
    let q = linear(ps, &a.wq, query);
    let k = linear(ps, &a.wk, kv);
    let v = linear(ps, &a.wv, kv);
    let dk = a.dim / a.heads;
    let mut concat = vec![vec![0.0; a.dim]; query.len()];
    let mut probs = Vec::new();
    for h in 0..a.heads {
        let cols = h * dk..(h + 1) * dk;
        let mut p_h = Vec::new();
        for i in 0..query.len() {
            let scores: Vec<f64> = (0..kv.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for c in cols.clone() {
                concat[i][c] = (0..kv.len()).map(|j| p[j] * v[j][c]).sum();
            }
            p_h.push(p);
        }
        probs.push(p_h);
    }
    (linear(ps, &a.wo, &concat), probs)
}

fn ffn(ps: &ParamStore, layer: &TransformerLayer, x: &Mat) -> Mat {
    let h = map(&linear(ps, &layer.ffn.up, x), |v| v.max(0.0));
    linear(ps, &layer.ffn.down, &h)
}

pub fn feed_forward_block(ps: &ParamStore, layer: &TransformerLayer, x: &Mat) -> Mat {
    match layer.norm {
        NormPlacement::Post => layer_norm(ps, &layer.ln2, &add(x, &ffn(ps, layer, x))),
        NormPlacement::Pre => add(x, &ffn(ps, layer, &layer_norm(ps, &layer.ln2, x))),
    }
}

pub fn transformer(ps: &ParamStore, layer: &TransformerLayer, x: &Mat, memory: Option<&Mat>) -> Mat {
    let x1 = match layer.norm {
        NormPlacement::Post => {
            let kv = memory.unwrap_or(x);
            let (a, _) = attention(ps, &layer.attn, x, kv);
            layer_norm(ps, &layer.ln1, &add(x, &a))
        }
        NormPlacement::Pre => {
            let h = layer_norm(ps, &layer.ln1, x);
            let kv = memory.cloned().unwrap_or_else(|| h.clone());
            let (a, _) = attention(ps, &layer.attn, &h, &kv);
            add(x, &a)
        }
    };
    feed_forward_block(ps, layer, &x1)
}

/// Returns `(cls, words)`.
pub fn text_encode(ps: &ParamStore, enc: &TextEncoder, cls: &[f64], words: &Mat) -> (Vec<f64>, Mat) {
    let mut x: Mat = std::iter::once(cls.to_vec()).chain(words.iter().cloned()).collect();
    if let Some(pos) = enc.positional {
        let table = param(ps, pos);
        for (i, row) in x.iter_mut().enumerate() {
            for (v, p) in row.iter_mut().zip(&table[i]) {
                *v += p;
            }
        }
    }
    for layer in &enc.layers {
        x = transformer(ps, layer, &x, None);
    }
    let cls = x.remove(0);
    (cls, x)
}

/// Returns `(img, objects)` after the vision Transformer.
pub fn vit(ps: &ParamStore, vision: &SemanticVision, img: &[f64], objects: &Mat) -> (Vec<f64>, Mat) {
    let mut x: Mat = std::iter::once(img.to_vec()).chain(objects.iter().cloned()).collect();
    for layer in &vision.layers {
        x = transformer(ps, layer, &x, None);
    }
    let img = x.remove(0);
    (img, x)
}

pub fn fuse_views(ps: &ParamStore, f: &ViewFusion, v1: &Mat, v2: &Mat) -> (Mat, Mat) {
    let s = add(&linear(ps, &f.w_v1, v1), &linear(ps, &f.w_v2, v2));
    let s = map(&s, f64::tanh);
    let pre = linear(ps, &f.w_v, &s);
    let alpha = match f.gate {
        FusionGate::Sigmoid => map(&pre, sigmoid),
        FusionGate::Unbounded => pre,
    };
    let out = (0..v1.len())
        .map(|i| {
            (0..v1[i].len())
                .map(|j| alpha[i][j] * v1[i][j] + (1.0 - alpha[i][j]) * v2[i][j])
                .collect()
        })
        .collect();
    (out, alpha)
}

/// Bridge FFN then the interaction rounds, each round reading only the
/// previous round's values.
pub fn interact(ps: &ParamStore, cm: &CrossModal, words: &Mat, v1: &Mat, v2: &Mat) -> Mat {
    let up = map(&linear(ps, &cm.bridge.up, words), |v| v.max(0.0));
    let mut h = linear(ps, &cm.bridge.down, &up);
    let (mut a, mut b) = (v1.clone(), v2.clone());
    for round in &cm.rounds {
        if a.is_empty() {
            h = feed_forward_block(ps, &round.text, &h);
            continue;
        }
        let (fused, _) = fuse_views(ps, &round.fusion, &a, &b);
        let new_h = transformer(ps, &round.text, &h, Some(&fused));
        let new_a = transformer(ps, &round.view1, &a, Some(&h));
        let new_b = transformer(ps, &round.view2, &b, Some(&h));
        h = new_h;
        a = new_a;
        b = new_b;
    }
    h
}

/// One gated relational layer computed edge by edge.
pub fn rgcn_layer(ps: &ParamStore, layer: &RgcnLayer, graph: &SpatialGraph, v: &Mat, act: Activation) -> Mat {
    let n = v.len();
    let width = v[0].len();
    let bias = param_vec(ps, layer.bias);
    let mut pre: Mat = vec![bias.clone(); n];
    for e in &graph.edges {
        let r = e.rel.index();
        for (slot, recv, send) in [(2 * r, e.dst, e.src), (2 * r + 1, e.src, e.dst)] {
            let w = param(ps, layer.weights[slot]);
            for j in 0..width {
                pre[recv][j] += (0..width).map(|k| v[send][k] * w[k][j]).sum::<f64>();
            }
        }
    }
    let update = map(&pre, |x| act.apply(x));
    let cat: Mat = update
        .iter()
        .zip(v)
        .map(|(u, x)| u.iter().chain(x).cloned().collect())
        .collect();
    let lambda = map(&linear(ps, &layer.gate, &cat), sigmoid);
    (0..n)
        .map(|i| (0..width).map(|j| v[i][j] + lambda[i][j] * update[i][j]).collect())
        .collect()
}

/// Exhaustive enumeration over all label sequences. Returns
/// `(log Z, argmax, best score)`; among equal scores the sequence that is
/// smallest when read from the last position backwards wins.
pub fn crf_brute(em: &Mat, trans: &Mat, start: &[f64], stop: &[f64]) -> (f64, Vec<usize>, f64) {
    let m = em.len();
    let k = start.len();
    let total = k.pow(m as u32);
    let mut scores = Vec::with_capacity(total);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for code in 0..total {
        // the last position is the most significant digit, so increasing
        // codes enumerate sequences in reverse-lexicographic order
        let mut labels = vec![0; m];
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut s = start[labels[0]] + stop[labels[m - 1]];
        for i in 0..m {
            s += em[i][labels[i]];
            if i > 0 {
                s += trans[labels[i - 1]][labels[i]];
            }
        }
        scores.push(s);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((labels, s));
        }
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
    let (path, score) = best.unwrap();
    (log_z, path, score)
}

/// IoU by counting the centres of a `res x res` pixel grid over the unit
/// square.
pub fn raster_iou(a: &BBox, b: &BBox, res: usize) -> f64 {
    let span = |lo: f64, hi: f64| -> (usize, usize) {
        // pixel p has centre (p + 0.5) / res
        let first = ((lo * res as f64 - 0.5).ceil().max(0.0)) as usize;
        let last = ((hi * res as f64 - 0.5).floor().min(res as f64 - 1.0)) as isize;
        (first, (last + 1).max(first as isize) as usize)
    };
    let corners = |x: &BBox| (x.xc - x.w / 2.0, x.xc + x.w / 2.0, x.yc - x.h / 2.0, x.yc + x.h / 2.0);
    let (al, ar, at, ab) = corners(a);
    let (bl, br, bt, bb) = corners(b);
    let (ax0, ax1) = span(al, ar);
    let (ay0, ay1) = span(at, ab);
    let (bx0, bx1) = span(bl, br);
    let (by0, by1) = span(bt, bb);
    let len = |lo: usize, hi: usize| hi.saturating_sub(lo) as f64;
    let area_a = len(ax0, ax1) * len(ay0, ay1);
    let area_b = len(bx0, bx1) * len(by0, by1);
    let inter = len(ax0.max(bx0), ax1.min(bx1)) * len(ay0.max(by0), ay1.min(by1));
    inter / (area_a + area_b - inter)
}

/// Relation label from `a` to `b`, written from the box rules directly.
pub fn brute_relate(a: &BBox, b: &BBox) -> Option<String> {
    let (al, ar, at, ab) = (a.xc - a.w / 2.0, a.xc + a.w / 2.0, a.yc - a.h / 2.0, a.yc + a.h / 2.0);
    let (bl, br, bt, bb) = (b.xc - b.w / 2.0, b.xc + b.w / 2.0, b.yc - b.h / 2.0, b.yc + b.h / 2.0);
    if al <= bl && ar >= br && at <= bt && ab >= bb {
        return Some("inside".into());
    }
    if bl <= al && br >= ar && bt <= at && bb >= ab {
        return Some("cover".into());
    }
    let iw = (ar.min(br) - al.max(bl)).max(0.0);
    let ih = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = iw * ih;
    let union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter;
    if inter / union > 0.5 {
        return Some("overlap".into());
    }
    let (dx, dy) = (b.xc - a.xc, b.yc - a.yc);
    if (dx * dx + dy * dy).sqrt() >= 0.5 * 2f64.sqrt() {
        return None;
    }
    let mut angle = dy.atan2(dx).to_degrees();
    while angle < 0.0 {
        angle += 360.0;
    }
    let class = (1..=8).find(|&k| angle < 45.0 * k as f64).unwrap_or(8);
    Some(format!("class{class}"))
}

/// Edge set of the scene graph over `objects`, node 0 being the image.
pub fn brute_graph(objects: &[BBox]) -> BTreeSet<(usize, usize, String)> {
    let mut edges = BTreeSet::new();
    for i in 1..=objects.len() {
        edges.insert((0, i, "inside".to_string()));
    }
    for (i, a) in objects.iter().enumerate() {
        for (j, b) in objects.iter().enumerate() {
            if i != j {
                if let Some(rel) = brute_relate(a, b) {
                    edges.insert((i + 1, j + 1, rel));
                }
            }
        }
    }
    edges
}

pub fn graph_edges(g: &SpatialGraph) -> BTreeSet<(usize, usize, String)> {
    g.edges
        .iter()
        .map(|e| (e.src, e.dst, e.rel.name().to_string()))
        .collect()
}

/// Random box inside the unit square with sides in `[0.05, 0.6]`.
pub fn random_box<R: Rng>(rng: &mut R) -> BBox {
    let w = rng.random_range(0.05..0.6);
    let h = rng.random_range(0.05..0.6);
    let xc = rng.random_range(w / 2.0..=1.0 - w / 2.0);
    let yc = rng.random_range(h / 2.0..=1.0 - h / 2.0);
    BBox::new(xc, yc, h, w)
}
