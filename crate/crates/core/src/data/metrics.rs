use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::labels::{EntityType, Span};

/// Precision, recall and F1 from match counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityScores {
    pub overall: Prf,
    pub per_type: BTreeMap<EntityType, Prf>,
}

/// Exact-match, micro-averaged entity scores. A predicted span counts only
/// when both boundaries and the type agree with a gold span.
///
/// `predicted` and `gold` are aligned per sentence and must have equal length.
pub fn entity_f1(predicted: &[Vec<Span>], gold: &[Vec<Span>]) -> EntityScores {
    assert_eq!(predicted.len(), gold.len(), "prediction/gold sentence count mismatch");
    let mut counts: BTreeMap<EntityType, (usize, usize, usize)> =
        EntityType::ALL.iter().map(|&t| (t, (0, 0, 0))).collect();
    for (p, g) in predicted.iter().zip(gold) {
        let gold_set: HashSet<&Span> = g.iter().collect();
        let pred_set: HashSet<&Span> = p.iter().collect();
        for s in &pred_set {
            let c = counts.get_mut(&s.ty).expect("all types present");
            c.1 += 1;
            if gold_set.contains(s) {
                c.0 += 1;
            }
        }
        for s in &gold_set {
            counts.get_mut(&s.ty).expect("all types present").2 += 1;
        }
    }
    let (m, p, g) = counts
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    EntityScores {
        overall: Prf::from_counts(m, p, g),
        per_type: counts
            .into_iter()
            .map(|(t, (m, p, g))| (t, Prf::from_counts(m, p, g)))
            .collect(),
    }
}
