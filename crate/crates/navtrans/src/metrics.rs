//! Plan-comparison metrics.
//!
//! A predicted plan is scored against the ground truth three ways:
//!
//! * `edit_distance` — the minimal number of moves (add, delete, or swap a
//!   single behavior) turning one plan into the other; Levenshtein distance
//!   with unit costs, where "swap" means substitution.
//! * `match_at_k` — whether the prediction is within `k` moves of the gold
//!   plan (`ED ≤ k`; `M@0` is an exact match).
//! * `f1_plan` — harmonic mean of multiset precision and recall over the
//!   behaviors used, ignoring order.
//!
//! Per-sample scores are folded into a [`MetricsReport`] whose display format
//! is the usual `F1 / M@0 / M@1 / M@2 / ED` row. F1 here is the per-sample
//! average, not a corpus-wide micro-average.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Plan;

/// Minimal number of single-behavior moves (insert, delete, substitute)
/// transforming `pred` into `gold`.
pub fn edit_distance(pred: &Plan, gold: &Plan) -> usize {
    let a = &pred.behaviors;
    let b = &gold.behaviors;
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// True iff the prediction is within `k` moves of the gold plan.
pub fn match_at_k(pred: &Plan, gold: &Plan, k: usize) -> bool {
    edit_distance(pred, gold) <= k
}

fn counts(plan: &Plan) -> BTreeMap<usize, usize> {
    let mut c = BTreeMap::new();
    for &b in &plan.behaviors {
        *c.entry(b).or_insert(0) += 1;
    }
    c
}

/// Multiset F1 over behaviors: overlap m = Σ_b min(count_pred, count_gold),
/// precision m/|pred|, recall m/|gold|, harmonic mean. Zero whenever the
/// overlap is empty.
pub fn f1_plan(pred: &Plan, gold: &Plan) -> f64 {
    let gold_counts = counts(gold);
    let m: usize = counts(pred)
        .iter()
        .map(|(b, &c)| c.min(gold_counts.get(b).copied().unwrap_or(0)))
        .sum();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / pred.len() as f64;
    let r = m as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Scores for one (prediction, gold) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    pub f1: f64,
    pub ed: usize,
}

pub fn compare_plans(pred: &Plan, gold: &Plan) -> PlanComparison {
    PlanComparison {
        f1: f1_plan(pred, gold),
        ed: edit_distance(pred, gold),
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("cannot aggregate an empty record set")]
pub struct EmptyRecords;

/// Aggregate scores over an evaluation split. `f1` and the `m_at` entries
/// are percentages; `ed` is a mean move count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub m_at: [f64; 3],
    pub ed: f64,
    pub n: usize,
}

pub fn aggregate(records: &[PlanComparison]) -> Result<MetricsReport, EmptyRecords> {
    if records.is_empty() {
        return Err(EmptyRecords);
    }
    let n = records.len() as f64;
    let f1 = 100.0 * records.iter().map(|r| r.f1).sum::<f64>() / n;
    let m_at = [0, 1, 2]
        .map(|k| 100.0 * records.iter().filter(|r| r.ed <= k).count() as f64 / n);
    let ed = records.iter().map(|r| r.ed as f64).sum::<f64>() / n;
    Ok(MetricsReport {
        f1,
        m_at,
        ed,
        n: records.len(),
    })
}

impl fmt::Display for MetricsReport {
    /// `F1 / M@0 / M@1 / M@2 / ED`, two decimals each.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.2} / {:.2} / {:.2} / {:.2} / {:.2}",
            self.f1, self.m_at[0], self.m_at[1], self.m_at[2], self.ed
        )
    }
}
