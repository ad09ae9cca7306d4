//! Leave-one-out offline evaluation: per-user splits, rank metrics, and the
//! aggregate report with its retrieval-effective subset.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::model::{BehaviorEvent, InteractionSequence};
use crate::Result;

/// One user's chronological split: every click except the last two trains,
/// the second-to-last validates, the last is the held-out test item.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub user_id: String,
    pub train: Vec<BehaviorEvent>,
    pub validation: BehaviorEvent,
    pub test: BehaviorEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub splits: Vec<EvalSplit>,
    /// Users dropped for having fewer than three clicks.
    pub excluded: u64,
}

/// Builds leave-one-out splits from click events only. Each history is
/// first truncated to its most recent `max_sequence_length` clicks; users
/// left with fewer than three clicks are excluded (and counted).
pub fn leave_one_out_split<'a>(
    sequences: impl IntoIterator<Item = &'a InteractionSequence>,
    max_sequence_length: usize,
) -> SplitSet {
    let mut splits = Vec::new();
    let mut excluded = 0u64;
    for seq in sequences {
        let mut clicks: Vec<BehaviorEvent> = seq.clicked().cloned().collect();
        if clicks.len() > max_sequence_length {
            clicks.drain(..clicks.len() - max_sequence_length);
        }
        if clicks.len() < 3 {
            excluded += 1;
            continue;
        }
        let test = clicks.pop().expect("len >= 3");
        let validation = clicks.pop().expect("len >= 2");
        splits.push(EvalSplit {
            user_id: seq.user_id.clone(),
            train: clicks,
            validation,
            test,
        });
    }
    SplitSet { splits, excluded }
}

/// (MRR, NDCG, recall) at cutoff `k` for a single ranked list. With the
/// truth at 1-based rank r <= k these are 1/r, 1/log2(r+1), and 1;
/// otherwise all three are zero. Duplicate ids in `ranked` are a contract
/// violation.
pub fn metrics_at_k(ranked: &[String], truth: &str, k: usize) -> Result<(f64, f64, f64)> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for id in ranked {
        if !seen.insert(id.as_str()) {
            return Err(EngineError::Contract(format!(
                "ranked list contains duplicate id {id}"
            )));
        }
    }
    match ranked.iter().position(|id| id == truth) {
        Some(at) if at < k => {
            let rank = (at + 1) as f64;
            Ok((1.0 / rank, 1.0 / (rank + 1.0).log2(), 1.0))
        }
        _ => Ok((0.0, 0.0, 0.0)),
    }
}

/// Final ranking produced for one evaluated user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user_id: String,
    /// Whether the truth item survived first-stage candidate selection.
    pub retrieved: bool,
    pub ranked: Vec<String>,
    pub truth_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
}

/// Metrics over the users whose truth item survived candidate selection.
/// The per-metric fields are null when that subset is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub coverage: f64,
    pub mrr: Option<f64>,
    pub ndcg: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub users: usize,
    pub excluded: u64,
    pub overall: MetricTriple,
    pub effective_subset: SubsetMetrics,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|e| EngineError::Data(format!("serializing evaluation report: {e}")))?;
        body.push('\n');
        Ok(body)
    }
}

fn mean_metrics(outcomes: &[&UserOutcome], k: usize) -> Result<MetricTriple> {
    let mut sum = (0.0, 0.0, 0.0);
    for outcome in outcomes {
        let (mrr, ndcg, recall) = metrics_at_k(&outcome.ranked, &outcome.truth_id, k)?;
        sum.0 += mrr;
        sum.1 += ndcg;
        sum.2 += recall;
    }
    let m = outcomes.len() as f64;
    Ok(MetricTriple {
        mrr: sum.0 / m,
        ndcg: sum.1 / m,
        recall: sum.2 / m,
    })
}

/// Coverage and mean metrics over the retrieval-effective users.
pub fn effective_subset(outcomes: &[UserOutcome], k: usize) -> Result<SubsetMetrics> {
    let subset: Vec<&UserOutcome> = outcomes.iter().filter(|o| o.retrieved).collect();
    let coverage = if outcomes.is_empty() {
        0.0
    } else {
        subset.len() as f64 / outcomes.len() as f64
    };
    if subset.is_empty() {
        return Ok(SubsetMetrics {
            coverage,
            mrr: None,
            ndcg: None,
            recall: None,
        });
    }
    let triple = mean_metrics(&subset, k)?;
    Ok(SubsetMetrics {
        coverage,
        mrr: Some(triple.mrr),
        ndcg: Some(triple.ndcg),
        recall: Some(triple.recall),
    })
}

/// Aggregates per-user outcomes into the evaluation report. Outcomes are
/// averaged in user-id order so the summed floats (and the emitted JSON)
/// do not depend on input order.
pub fn build_report(outcomes: &[UserOutcome], k: usize, excluded: u64) -> Result<EvalReport> {
    let mut ordered: Vec<&UserOutcome> = outcomes.iter().collect();
    ordered.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let overall = if ordered.is_empty() {
        MetricTriple {
            mrr: 0.0,
            ndcg: 0.0,
            recall: 0.0,
        }
    } else {
        mean_metrics(&ordered, k)?
    };
    let sorted_owned: Vec<UserOutcome> = ordered.into_iter().cloned().collect();
    let subset = effective_subset(&sorted_owned, k)?;
    Ok(EvalReport {
        k,
        users: outcomes.len(),
        excluded,
        overall,
        effective_subset: subset,
    })
}
