//! Evaluation reports, prediction and the interaction-depth sweep.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::data::{entity_f1, spans_from_bio2, DatasetMeta, EntityScores, EntityType, MultimodalExample, Span};
use crate::error::{Error, Result};
use crate::model::{HamNet, Prediction};
use crate::tensor::ParamStore;
use crate::train::train;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleDiagnostics {
    pub index: usize,
    /// Mean absolute relevance for the semantic and spatial views.
    pub relevance: [f64; 2],
    pub no_objects: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub scores: EntityScores,
    pub mean_relevance: [f64; 2],
    pub text_only_examples: usize,
    pub per_example: Vec<ExampleDiagnostics>,
}

pub fn predict_all(model: &HamNet, params: &ParamStore, data: &[MultimodalExample]) -> Result<Vec<Prediction>> {
    data.iter()
        .enumerate()
        .map(|(i, ex)| {
            model.predict(params, ex).map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("example {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Entity scores of label sequences against the gold labels of `data`.
pub fn score_labels(predicted: &[Vec<usize>], data: &[MultimodalExample]) -> EntityScores {
    let pred: Vec<Vec<Span>> = predicted.iter().map(|l| spans_from_bio2(l)).collect();
    let gold: Vec<Vec<Span>> = data.iter().map(|ex| spans_from_bio2(&ex.sentence.labels)).collect();
    entity_f1(&pred, &gold)
}

pub fn evaluate(model: &HamNet, params: &ParamStore, data: &[MultimodalExample]) -> Result<EvalReport> {
    let preds = predict_all(model, params, data)?;
    let labels: Vec<Vec<usize>> = preds.iter().map(|p| p.labels.clone()).collect();
    let scores = score_labels(&labels, data);
    let per_example: Vec<ExampleDiagnostics> = preds
        .iter()
        .zip(data)
        .enumerate()
        .map(|(index, (p, ex))| ExampleDiagnostics {
            index,
            relevance: p.relevance,
            no_objects: ex.objects.is_empty(),
        })
        .collect();
    let n = per_example.len().max(1) as f64;
    let mean_relevance = [0, 1].map(|r| per_example.iter().map(|e| e.relevance[r]).sum::<f64>() / n);
    Ok(EvalReport {
        examples: data.len(),
        text_only_examples: per_example.iter().filter(|e| e.no_objects).count(),
        scores,
        mean_relevance,
        per_example,
    })
}

pub fn render_report(r: &EvalReport) -> String {
    let o = &r.scores.overall;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "examples   {} ({} without objects)",
        r.examples, r.text_only_examples
    );
    let _ = writeln!(s, "precision  {:.4}", o.precision);
    let _ = writeln!(s, "recall     {:.4}", o.recall);
    let _ = writeln!(s, "f1         {:.4}", o.f1);
    for t in EntityType::ALL {
        let p = &r.scores.per_type[&t];
        let _ = writeln!(
            s,
            "f1[{t}]{:pad$} {:.4}  ({} gold)",
            "",
            p.f1,
            p.gold,
            pad = 6 - t.name().len()
        );
    }
    let _ = writeln!(
        s,
        "relevance  semantic {:.4}  spatial {:.4}",
        r.mean_relevance[0], r.mean_relevance[1]
    );
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rounds: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
}

/// Trains and evaluates one model per interaction depth.
pub fn sweep_l(
    config: &PipelineConfig,
    meta: &DatasetMeta,
    train_set: &[MultimodalExample],
    val_set: &[MultimodalExample],
    test_set: &[MultimodalExample],
    rounds: &[usize],
) -> Result<Vec<SweepRow>> {
    if rounds.is_empty() {
        return Err(Error::config("no interaction depths to sweep"));
    }
    rounds
        .iter()
        .map(|&l| {
            let cfg = PipelineConfig {
                interaction_rounds: l,
                ..config.clone()
            };
            let (trained, report) = train(&cfg, meta, train_set, val_set)?;
            let o = evaluate(&trained.model, &trained.params, test_set)?.scores.overall;
            Ok(SweepRow {
                rounds: l,
                precision: o.precision,
                recall: o.recall,
                f1: o.f1,
                best_epoch: report.best_epoch,
            })
        })
        .collect()
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("L\tP\tR\tF1\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.4}\t{:.4}\t{:.4}", r.rounds, r.precision, r.recall, r.f1);
    }
    s
}
