//! Mini-batch training with Adam, per-epoch validation and best-checkpoint
//! retention.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{DatasetMeta, MultimodalExample};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{first_non_finite, HamNet};
use crate::tensor::nn::RunMode;
use crate::tensor::{Adam, Graph, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch at which the retained parameters were produced; 0 for the
    /// initialisation.
    pub epoch: usize,
    pub best_val_f1: f64,
    pub seed: u64,
}

/// Network, parameters and the settings that produced them.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub meta: DatasetMeta,
    pub model: HamNet,
    pub params: ParamStore,
    pub training: TrainingMeta,
}

impl TrainedModel {
    pub fn init(config: &PipelineConfig, meta: &DatasetMeta) -> Result<Self> {
        let (model, params) = HamNet::new(config, meta)?;
        Ok(Self {
            config: config.clone(),
            meta: meta.clone(),
            model,
            params,
            training: TrainingMeta {
                epoch: 0,
                best_val_f1: 0.0,
                seed: config.seed,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

/// Trains from a fresh initialisation. Returns the parameters from the epoch
/// with the best validation F1 (earliest on ties).
pub fn train(
    config: &PipelineConfig,
    meta: &DatasetMeta,
    train_set: &[MultimodalExample],
    val_set: &[MultimodalExample],
) -> Result<(TrainedModel, TrainReport)> {
    let mut current = TrainedModel::init(config, meta)?;
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: 0,
        best_val_f1: 0.0,
        stopped_early: false,
    };
    if config.epochs == 0 {
        return Ok((current, report));
    }
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }

    // separate stream from the one that initialised the parameters
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(config.learning_rate, &current.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(ParamStore, usize, f64)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_train) {
            let batch: Vec<&MultimodalExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = {
                let mut g = Graph::new(&current.params);
                let mut mode = RunMode::train(&mut rng, config.dropout);
                let root = current.model.batch_loss(&mut g, &batch, &mut mode)?;
                let loss = g.scalar(root);
                if !loss.is_finite() {
                    let stage = first_non_finite(&g).unwrap_or("crf");
                    return Err(Error::NonFinite {
                        stage: stage.into(),
                        detail: format!("loss is {loss} in epoch {epoch}"),
                    });
                }
                (loss, g.backward(root)?)
            };
            loss_sum += loss;
            grads.accumulate_into(&mut current.params);
            current.params.scale_grads(1.0 / batch.len() as f64);
            if config.clip_norm > 0.0 {
                let norm = current.params.grad_norm();
                if norm > config.clip_norm {
                    current.params.scale_grads(config.clip_norm / norm);
                }
            }
            adam.step(&mut current.params);
            current.params.zero_grad();
        }
        if let Some((_, p)) = current.params.iter().find(|(_, p)| !p.value.all_finite()) {
            return Err(Error::NonFinite {
                stage: p.stage().to_string(),
                detail: format!("parameter {} became non-finite in epoch {epoch}", p.name),
            });
        }

        let val_f1 = if val_set.is_empty() {
            0.0
        } else {
            evaluate(&current.model, &current.params, val_set)?.scores.overall.f1
        };
        let mean_loss = loss_sum / train_set.len() as f64;
        info!("epoch {epoch}: mean loss {mean_loss:.6}, val F1 {val_f1:.4}");
        report.history.push(EpochLog {
            epoch,
            mean_loss,
            val_f1,
        });

        if val_set.is_empty() || best.as_ref().is_none_or(|(_, _, f)| val_f1 > *f) {
            best = Some((current.params.clone(), epoch, val_f1));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            report.stopped_early = true;
            info!("no validation improvement for {} epochs; stopping", config.patience);
            break;
        }
    }

    let (params, epoch, f1) = best.expect("at least one epoch ran");
    current.params = params;
    current.training = TrainingMeta {
        epoch,
        best_val_f1: f1,
        seed: config.seed,
    };
    report.best_epoch = epoch;
    report.best_val_f1 = f1;
    Ok((current, report))
}
