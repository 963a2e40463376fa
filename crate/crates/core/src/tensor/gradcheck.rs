use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per stage; stages with fewer values are checked exhaustively.
    pub samples_per_stage: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_stage: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageCheck {
    pub stage: String,
    pub samples: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct WorstCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub stages: Vec<StageCheck>,
    pub worst: Option<WorstCoordinate>,
}

/// Compares reverse-mode gradients of a scalar program against central
/// differences on sampled parameter coordinates.
///
/// The error measure is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn check_gradients<F>(params: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let root = f(&mut g)?;
        let value = g.scalar(root);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                stage: "gradient check".into(),
                detail: format!("objective is {value} at the unperturbed point"),
            });
        }
        let grads = g.backward(root)?;
        params
            .iter()
            .map(|(id, p)| {
                grads
                    .param(id)
                    .map(|t| t.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect::<Vec<_>>()
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let root = f(&mut g)?;
        Ok(g.scalar(root))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        stages: Vec::new(),
        worst: None,
    };

    for stage in params.stages() {
        let coords: Vec<(usize, usize)> = params
            .iter()
            .filter(|(_, p)| p.stage() == stage)
            .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id.index(), k)))
            .collect();
        let picked: Vec<usize> = if coords.len() <= opts.samples_per_stage {
            (0..coords.len()).collect()
        } else {
            let mut v = sample(&mut rng, coords.len(), opts.samples_per_stage).into_vec();
            v.sort_unstable();
            v
        };

        let mut stage_max: f64 = 0.0;
        for &c in &picked {
            let (pi, k) = coords[c];
            let id = params.iter().nth(pi).map(|(id, _)| id).expect("index in range");
            let original = params.get(id).data()[k];

            work.get_mut(id).data_mut()[k] = original + opts.epsilon;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = original - opts.epsilon;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    stage: params.param(id).name.clone(),
                    detail: format!("objective not finite when perturbing entry {k}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            stage_max = stage_max.max(rel);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(WorstCoordinate {
                    param: params.param(id).name.clone(),
                    index: k,
                    analytic: a,
                    numeric,
                });
            }
        }
        report.stages.push(StageCheck {
            stage,
            samples: picked.len(),
            max_rel_error: stage_max,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_at_three() {
        let mut ps = ParamStore::new();
        let x = ps.add("x", Tensor::vector(vec![3.0])).unwrap();
        let report = check_gradients(
            &ps,
            |g| {
                let v = g.param(x);
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        let w = report.worst.unwrap();
        assert_eq!(w.analytic, 6.0);
        assert!((w.numeric - 6.0).abs() < 1e-6);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn non_finite_perturbation_names_the_block() {
        let mut ps = ParamStore::new();
        // finite at zero, overflows once perturbed
        let x = ps.add("blk.x", Tensor::vector(vec![0.0])).unwrap();
        let err = check_gradients(
            &ps,
            |g| {
                let v = g.param(x);
                let big = g.scale(v, 1e308);
                let sq = g.mul(big, big)?;
                Ok(g.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFinite { stage, .. } => assert_eq!(stage, "blk.x"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
