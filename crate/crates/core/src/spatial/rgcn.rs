use rand::Rng;

use super::geometry::SpatialRelation;
use super::graph::SpatialGraph;
use crate::error::{Error, Result};
use crate::tensor::nn::Linear;
use crate::tensor::{Activation, Graph, ParamId, ParamStore, Tensor, Var};

/// One weight per (edge label, direction).
pub const NUM_EDGE_WEIGHTS: usize = 2 * SpatialRelation::COUNT;

pub const GATE_PROBE: &str = "rgcn_gate";

const DIRECTIONS: [&str; 2] = ["in", "out"];

/// Message-passing layer with a sigmoid residual gate:
/// `v' = act(sum_j v_j W_{r,dir} + b)`, `lambda = sigmoid([v', v] W_gate)`,
/// `v <- v + lambda * v'`.
#[derive(Debug, Clone)]
pub struct RgcnLayer {
    /// Indexed by `2 * relation + direction`, direction 0 for messages along
    /// an edge (received by its target) and 1 against it.
    pub weights: Vec<ParamId>,
    pub bias: ParamId,
    pub gate: Linear,
    pub act: Activation,
}

impl RgcnLayer {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, width: usize, act: Activation, rng: &mut R) -> Result<Self> {
        let mut weights = Vec::with_capacity(NUM_EDGE_WEIGHTS);
        for rel in SpatialRelation::ALL {
            for dir in DIRECTIONS {
                weights.push(ps.xavier(format!("{name}.w_{rel}_{dir}"), width, width, rng)?);
            }
        }
        let bias = ps.zeros(format!("{name}.bias"), &[width])?;
        let gate = Linear::new(ps, &format!("{name}.gate"), 2 * width, width, false, rng)?;
        Self::from_parts(weights, bias, gate, act)
    }

    pub fn from_parts(weights: Vec<ParamId>, bias: ParamId, gate: Linear, act: Activation) -> Result<Self> {
        if weights.len() != NUM_EDGE_WEIGHTS {
            return Err(Error::config(format!(
                "relational layer needs {NUM_EDGE_WEIGHTS} edge weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            gate,
            act,
        })
    }

    /// Per-slot adjacency: `adj[k][i * n + j] = 1` when node `i` receives a
    /// message from node `j` through weight `k`.
    fn adjacency(graph: &SpatialGraph) -> Vec<Option<Vec<f64>>> {
        let n = graph.num_nodes();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; NUM_EDGE_WEIGHTS];
        for e in &graph.edges {
            let r = e.rel.index();
            for (slot, (recv, send)) in [(2 * r, (e.dst, e.src)), (2 * r + 1, (e.src, e.dst))] {
                let a = adj[slot].get_or_insert_with(|| vec![0.0; n * n]);
                a[recv * n + send] += 1.0;
            }
        }
        adj
    }

    pub fn forward(&self, g: &mut Graph<'_>, graph: &SpatialGraph, v: Var) -> Result<Var> {
        let n = graph.num_nodes();
        let (rows, width) = g.dims(v);
        if rows != n {
            return Err(Error::shape(
                "rgcn",
                format!("{rows} feature rows for a graph of {n} nodes"),
            ));
        }
        let bias = g.param(self.bias);
        let mut acc = g.constant(Tensor::zeros(&[n, width]));
        for (k, a) in Self::adjacency(graph).into_iter().enumerate() {
            let Some(a) = a else { continue };
            let a = g.constant(Tensor::matrix(n, n, a)?);
            let gathered = g.matmul(a, v)?;
            let w = g.param(self.weights[k]);
            let msg = g.matmul(gathered, w)?;
            acc = g.add(acc, msg)?;
        }
        let pre = g.add_row(acc, bias)?;
        let update = g.activation(pre, self.act);
        let cat = g.concat_cols(&[update, v])?;
        let gate = self.gate.forward(g, cat)?;
        let lambda = g.sigmoid(gate);
        g.probe(GATE_PROBE, lambda);
        let gated = g.mul(lambda, update)?;
        g.add(v, gated)
    }
}

/// Stacked relational layers over `[box, feature]` node vectors of width
/// `d + 4`, followed by a linear map back to `d`.
#[derive(Debug, Clone)]
pub struct Rgcn {
    pub layers: Vec<RgcnLayer>,
    pub out: Linear,
}

impl Rgcn {
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        d: usize,
        layers: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| RgcnLayer::new(ps, &format!("{name}.layer{l}"), d + 4, act, rng))
            .collect::<Result<_>>()?;
        let out = Linear::new(ps, &format!("{name}.out"), d + 4, d, true, rng)?;
        Ok(Self { layers, out })
    }

    /// Node features `[x_c, y_c, h, w, v_i]`, with the image box for node 0.
    pub fn initial_features(&self, g: &mut Graph<'_>, graph: &SpatialGraph, visual: Var) -> Result<Var> {
        let n = graph.num_nodes();
        let data: Vec<f64> = graph.boxes.iter().flat_map(|b| b.as_array()).collect();
        let boxes = g.constant(Tensor::matrix(n, 4, data)?);
        g.concat_cols(&[boxes, visual])
    }

    /// `visual` holds the `N + 1` projected features, image first. Returns
    /// `(N + 1) x d`.
    pub fn forward(&self, g: &mut Graph<'_>, graph: &SpatialGraph, visual: Var) -> Result<Var> {
        let mut v = self.initial_features(g, graph, visual)?;
        for layer in &self.layers {
            v = layer.forward(g, graph, v)?;
        }
        self.out.forward(g, v)
    }
}
