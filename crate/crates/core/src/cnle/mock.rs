//! Deterministic in-process evaluator.
//!
//! Scores are token-overlap similarities between each candidate title and
//! the profile text, rescaled so the best candidate gets 1.0. Because the
//! inputs are exactly the fields that cross the wire, a server replaying
//! this function behind the cnle/1 protocol reproduces it bit for bit.

use super::{validate_response, CandidateRef, Evaluate, EvaluationRequest, EvaluationResponse};
use crate::text::{jaccard, token_set};
use crate::Result;

/// Jaccard-based scores for `candidates` against `profile_text`, rescaled
/// to put the maximum at 1.0; all-zero overlaps degrade to a uniform 0.5.
pub fn score_candidates(profile_text: &str, candidates: &[CandidateRef]) -> Vec<(String, f64)> {
    let profile_tokens = token_set(profile_text);
    let raw: Vec<f64> = candidates
        .iter()
        .map(|c| jaccard(&token_set(&c.title), &profile_tokens))
        .collect();
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    candidates
        .iter()
        .zip(&raw)
        .map(|(c, &s)| (c.id.clone(), if max > 0.0 { s / max } else { 0.5 }))
        .collect()
}

/// Builds the full mock response (scores plus argmax pick) for a request.
pub fn mock_response(request: &EvaluationRequest) -> EvaluationResponse {
    let scores = score_candidates(&request.profile_summary, &request.candidates);
    let chosen_id = scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _)| id.clone())
        .expect("requests always carry at least one candidate");
    EvaluationResponse { scores, chosen_id }
}

/// Scores a request entirely in-process.
pub fn evaluate_mock(request: &EvaluationRequest) -> Result<EvaluationResponse> {
    // Run through the shared validator so mock and remote obey one contract.
    validate_response(request, mock_response(request))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockEvaluator;

impl Evaluate for MockEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResponse> {
        evaluate_mock(request)
    }
}
