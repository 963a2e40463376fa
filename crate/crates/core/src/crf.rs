//! Linear-chain CRF: emissions from a linear map of the word states, label
//! transitions with learned start/stop scores, log-space forward algorithm,
//! negative log-likelihood and Viterbi decoding.

use rand::Rng;

use crate::data::labels::{bio2_start_allowed, bio2_transition_allowed, NUM_LABELS};
use crate::error::{Error, Result};
use crate::tensor::nn::Linear;
use crate::tensor::{log_sum_exp, CustomOp, Graph, ParamId, ParamStore, Tensor, Var};

/// Per-position label scores, `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    pub scores: Tensor,
}

impl EmissionTable {
    pub fn new(scores: Tensor) -> Self {
        Self {
            scores: scores.as_matrix(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.rows() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.scores.cols()
    }

    fn at(&self, i: usize, k: usize) -> f64 {
        self.scores.get(i, k)
    }
}

/// Label-pair scores `trans[from][to]` plus sequence start and stop scores.
/// Forbidden moves may be `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub trans: Tensor,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl TransitionTable {
    pub fn new(trans: Tensor, start: Vec<f64>, stop: Vec<f64>) -> Result<Self> {
        let t = Self { trans, start, stop };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let k = self.start.len();
        if self.trans.dims() != (k, k) || self.stop.len() != k {
            return Err(Error::shape(
                "crf",
                format!(
                    "transitions {:?} with start {} and stop {}",
                    self.trans.dims(),
                    k,
                    self.stop.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            trans: Tensor::zeros(&[k, k]),
            start: vec![0.0; k],
            stop: vec![0.0; k],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn t(&self, from: usize, to: usize) -> f64 {
        self.trans.get(from, to)
    }
}

fn check(em: &EmissionTable, tr: &TransitionTable) -> Result<()> {
    if em.is_empty() {
        return Err(Error::shape("crf", "sequence has no positions"));
    }
    if em.num_labels() != tr.num_labels() {
        return Err(Error::shape(
            "crf",
            format!(
                "{} emission labels against {} transition labels",
                em.num_labels(),
                tr.num_labels()
            ),
        ));
    }
    Ok(())
}

/// Forward log-potentials `alpha[i][k]`: log-sum over prefixes ending in `k`.
fn forward_table(em: &EmissionTable, tr: &TransitionTable) -> Vec<Vec<f64>> {
    let (m, k) = (em.len(), em.num_labels());
    let mut alpha = vec![vec![0.0; k]; m];
    for y in 0..k {
        alpha[0][y] = tr.start[y] + em.at(0, y);
    }
    let mut buf = vec![0.0; k];
    for i in 1..m {
        for y in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha[i - 1][p] + tr.t(p, y);
            }
            alpha[i][y] = em.at(i, y) + log_sum_exp(&buf);
        }
    }
    alpha
}

/// Backward log-potentials `beta[i][k]`: log-sum over suffixes after `k` at `i`.
fn backward_table(em: &EmissionTable, tr: &TransitionTable) -> Vec<Vec<f64>> {
    let (m, k) = (em.len(), em.num_labels());
    let mut beta = vec![vec![0.0; k]; m];
    beta[m - 1].clone_from(&tr.stop);
    let mut buf = vec![0.0; k];
    for i in (0..m - 1).rev() {
        for y in 0..k {
            for (n, b) in buf.iter_mut().enumerate() {
                *b = tr.t(y, n) + em.at(i + 1, n) + beta[i + 1][n];
            }
            beta[i][y] = log_sum_exp(&buf);
        }
    }
    beta
}

fn log_z_from(alpha: &[Vec<f64>], tr: &TransitionTable) -> f64 {
    let last = alpha.last().expect("nonempty");
    let ends: Vec<f64> = last.iter().zip(&tr.stop).map(|(a, s)| a + s).collect();
    log_sum_exp(&ends)
}

/// Log of the summed exponentiated scores of all label sequences.
pub fn log_partition(em: &EmissionTable, tr: &TransitionTable) -> Result<f64> {
    check(em, tr)?;
    Ok(log_z_from(&forward_table(em, tr), tr))
}

/// Unnormalized score of one label sequence.
pub fn sequence_score(em: &EmissionTable, tr: &TransitionTable, labels: &[usize]) -> Result<f64> {
    check(em, tr)?;
    check_labels(em, labels)?;
    let mut s = tr.start[labels[0]] + tr.stop[labels[labels.len() - 1]];
    for (i, &y) in labels.iter().enumerate() {
        s += em.at(i, y);
        if i > 0 {
            s += tr.t(labels[i - 1], y);
        }
    }
    Ok(s)
}

fn check_labels(em: &EmissionTable, labels: &[usize]) -> Result<()> {
    if labels.len() != em.len() {
        return Err(Error::shape(
            "crf",
            format!("{} gold labels for {} positions", labels.len(), em.len()),
        ));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= em.num_labels()) {
        return Err(Error::Data(format!(
            "gold label {y} at position {i} is outside 0..{}",
            em.num_labels()
        )));
    }
    Ok(())
}

/// `log_partition - score(gold)`.
pub fn nll_loss(em: &EmissionTable, tr: &TransitionTable, gold: &[usize]) -> Result<f64> {
    let s = sequence_score(em, tr, gold)?;
    let z = log_partition(em, tr)?;
    // rounding can push the difference slightly below zero; NaN must survive
    let d = z - s;
    Ok(if d < 0.0 { 0.0 } else { d })
}

/// Maximum-score sequence and its score. At each backtracking step the
/// smallest label index wins among equal scores.
pub fn viterbi(em: &EmissionTable, tr: &TransitionTable) -> Result<(Vec<usize>, f64)> {
    check(em, tr)?;
    let (m, k) = (em.len(), em.num_labels());
    let mut delta = vec![vec![0.0; k]; m];
    let mut back = vec![vec![0usize; k]; m];
    for y in 0..k {
        delta[0][y] = tr.start[y] + em.at(0, y);
    }
    for i in 1..m {
        for y in 0..k {
            let mut best = (0, f64::NEG_INFINITY);
            for p in 0..k {
                let s = delta[i - 1][p] + tr.t(p, y);
                if s > best.1 {
                    best = (p, s);
                }
            }
            back[i][y] = best.0;
            delta[i][y] = em.at(i, y) + best.1;
        }
    }
    let mut last = (0, f64::NEG_INFINITY);
    for y in 0..k {
        let s = delta[m - 1][y] + tr.stop[y];
        if s > last.1 {
            last = (y, s);
        }
    }
    let mut path = vec![0; m];
    path[m - 1] = last.0;
    for i in (1..m).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok((path, last.1))
}

/// Posterior label marginals.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `M x K`, `p(y_i = k)`.
    pub unary: Vec<Vec<f64>>,
    /// `K x K`, expected transition counts summed over positions.
    pub pairwise: Vec<Vec<f64>>,
}

pub fn marginals(em: &EmissionTable, tr: &TransitionTable) -> Result<Marginals> {
    check(em, tr)?;
    let (m, k) = (em.len(), em.num_labels());
    let alpha = forward_table(em, tr);
    let beta = backward_table(em, tr);
    let log_z = log_z_from(&alpha, tr);
    let unary = (0..m)
        .map(|i| (0..k).map(|y| (alpha[i][y] + beta[i][y] - log_z).exp()).collect())
        .collect();
    let mut pairwise = vec![vec![0.0; k]; k];
    for i in 0..m.saturating_sub(1) {
        for (p, row) in pairwise.iter_mut().enumerate() {
            for (n, cell) in row.iter_mut().enumerate() {
                let lp = alpha[i][p] + tr.t(p, n) + em.at(i + 1, n) + beta[i + 1][n] - log_z;
                *cell += lp.exp();
            }
        }
    }
    Ok(Marginals { log_z, unary, pairwise })
}

/// Tape node for the sequence NLL. Inputs: emissions `M x K`, transitions
/// `K x K`, start `1 x K`, stop `1 x K`.
#[derive(Debug)]
struct CrfNll {
    gold: Vec<usize>,
}

fn tables(inputs: &[&Tensor]) -> (EmissionTable, TransitionTable) {
    let em = EmissionTable::new(inputs[0].clone());
    let tr = TransitionTable {
        trans: inputs[1].clone(),
        start: inputs[2].data().to_vec(),
        stop: inputs[3].data().to_vec(),
    };
    (em, tr)
}

impl CustomOp for CrfNll {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let up = grad.data()[0];
        let (em, tr) = tables(inputs);
        let mg = marginals(&em, &tr).expect("validated in forward");
        let (m, k) = (em.len(), em.num_labels());

        let mut d_em = Tensor::zeros(&[m, k]);
        for i in 0..m {
            for y in 0..k {
                d_em.set(i, y, mg.unary[i][y]);
            }
            let g = self.gold[i];
            d_em.set(i, g, d_em.get(i, g) - 1.0);
        }
        let mut d_tr = Tensor::zeros(&[k, k]);
        for p in 0..k {
            for n in 0..k {
                d_tr.set(p, n, mg.pairwise[p][n]);
            }
        }
        for w in self.gold.windows(2) {
            d_tr.set(w[0], w[1], d_tr.get(w[0], w[1]) - 1.0);
        }
        let mut d_start = Tensor::zeros(&[1, k]);
        let mut d_stop = Tensor::zeros(&[1, k]);
        for y in 0..k {
            d_start.set(0, y, mg.unary[0][y]);
            d_stop.set(0, y, mg.unary[m - 1][y]);
        }
        d_start.set(0, self.gold[0], d_start.get(0, self.gold[0]) - 1.0);
        d_stop.set(0, self.gold[m - 1], d_stop.get(0, self.gold[m - 1]) - 1.0);

        [d_em, d_tr, d_start, d_stop]
            .into_iter()
            .map(|t| t.map(|x| x * up))
            .collect()
    }
}

/// Adds the sequence NLL of `gold` to the tape.
pub fn nll_node(g: &mut Graph<'_>, emissions: Var, trans: Var, start: Var, stop: Var, gold: &[usize]) -> Result<Var> {
    let inputs = [emissions, trans, start, stop];
    let (em, tr) = {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| g.value(v)).collect();
        tables(&vals)
    };
    tr.validate()?;
    let loss = nll_loss(&em, &tr, gold)?;
    Ok(g.custom(
        Box::new(CrfNll { gold: gold.to_vec() }),
        &inputs,
        Tensor::full(&[1, 1], loss),
    ))
}

/// `-inf` where BIO2 forbids a transition or a start, zero elsewhere.
pub fn bio2_masks() -> (Tensor, Tensor) {
    let mut trans = Tensor::zeros(&[NUM_LABELS, NUM_LABELS]);
    let mut start = Tensor::zeros(&[1, NUM_LABELS]);
    for to in 0..NUM_LABELS {
        for from in 0..NUM_LABELS {
            if !bio2_transition_allowed(from, to) {
                trans.set(from, to, f64::NEG_INFINITY);
            }
        }
        if !bio2_start_allowed(to) {
            start.set(0, to, f64::NEG_INFINITY);
        }
    }
    (trans, start)
}

/// CRF head over the final word states.
#[derive(Debug, Clone)]
pub struct Crf {
    pub emit: Linear,
    pub trans: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub bio2_constraints: bool,
}

impl Crf {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, bio2_constraints: bool, rng: &mut R) -> Result<Self> {
        Ok(Self {
            emit: Linear::new(ps, &format!("{name}.emit"), d, NUM_LABELS, true, rng)?,
            trans: ps.zeros(format!("{name}.transitions"), &[NUM_LABELS, NUM_LABELS])?,
            start: ps.zeros(format!("{name}.start"), &[NUM_LABELS])?,
            stop: ps.zeros(format!("{name}.stop"), &[NUM_LABELS])?,
            bio2_constraints,
        })
    }

    pub fn emissions(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        self.emit.forward(g, h)
    }

    /// Transition, start and stop nodes with constraint masks applied.
    fn transition_vars(&self, g: &mut Graph<'_>) -> Result<(Var, Var, Var)> {
        let mut trans = g.param(self.trans);
        let mut start = g.param(self.start);
        let stop = g.param(self.stop);
        if self.bio2_constraints {
            let (mt, ms) = bio2_masks();
            let mt = g.constant(mt);
            let ms = g.constant(ms);
            trans = g.add(trans, mt)?;
            start = g.add(start, ms)?;
        }
        Ok((trans, start, stop))
    }

    pub fn nll(&self, g: &mut Graph<'_>, emissions: Var, gold: &[usize]) -> Result<Var> {
        let (trans, start, stop) = self.transition_vars(g)?;
        nll_node(g, emissions, trans, start, stop, gold)
    }

    /// Transition table as currently stored, with masks applied.
    pub fn table(&self, ps: &ParamStore) -> TransitionTable {
        let mut trans = ps.get(self.trans).clone();
        let mut start = ps.get(self.start).data().to_vec();
        if self.bio2_constraints {
            let (mt, ms) = bio2_masks();
            for (t, m) in trans.data_mut().iter_mut().zip(mt.data()) {
                *t += m;
            }
            for (s, m) in start.iter_mut().zip(ms.data()) {
                *s += m;
            }
        }
        TransitionTable {
            trans,
            start,
            stop: ps.get(self.stop).data().to_vec(),
        }
    }
}
