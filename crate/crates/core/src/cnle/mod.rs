//! Stage 2: prompt construction and pluggable preference evaluation.
//!
//! Four task templates turn a user profile plus candidate titles into a
//! prompt. Scoring happens either in-process ([`mock::MockEvaluator`]) or
//! over HTTP via the `cnle/1` protocol ([`remote::RemoteEvaluator`]); both
//! paths return an [`EvaluationResponse`] checked by the same validator.

pub mod mock;
pub mod remote;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::config::TaskSelection;
use crate::model::{ActionKind, Catalog, NewsItem, UserProfile};
use crate::text::truncate_title;
use crate::{EngineError, Result};

/// Hard cap on candidates per evaluation request.
pub const MAX_CANDIDATES: usize = 20;

/// The four supported recommendation task kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    InterestRole,
    DomainFocus,
    CollectionFocus,
    Behavioral,
}

impl TaskKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            TaskKind::InterestRole => "interest_role",
            TaskKind::DomainFocus => "domain_focus",
            TaskKind::CollectionFocus => "collection_focus",
            TaskKind::Behavioral => "behavioral",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        match name {
            "interest_role" => Some(TaskKind::InterestRole),
            "domain_focus" => Some(TaskKind::DomainFocus),
            "collection_focus" => Some(TaskKind::CollectionFocus),
            "behavioral" => Some(TaskKind::Behavioral),
            _ => None,
        }
    }

    pub fn template(self) -> &'static PromptTask {
        &TASKS[match self {
            TaskKind::InterestRole => 0,
            TaskKind::DomainFocus => 1,
            TaskKind::CollectionFocus => 2,
            TaskKind::Behavioral => 3,
        }]
    }
}

/// A prompt template: fixed instruction plus input/output descriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTask {
    pub kind: TaskKind,
    pub instruction: &'static str,
    pub input_spec: &'static str,
    pub output_spec: &'static str,
}

/// The four task templates, in [`TaskKind`] declaration order.
pub const TASKS: [PromptTask; 4] = [
    PromptTask {
        kind: TaskKind::InterestRole,
        instruction: "Recommend a news item and its ID from the candidate news list according to the user's interests and responsibilities.",
        input_spec: "User's interest and work tasks; the news waiting for recommendation.",
        output_spec: "The recommended news title and its ID.",
    },
    PromptTask {
        kind: TaskKind::DomainFocus,
        instruction: "Recommend a news item and its ID from the candidate news list according to the user's domain focus.",
        input_spec: "User's domain focus; news waiting for recommendation.",
        output_spec: "The recommended news title and its ID.",
    },
    PromptTask {
        kind: TaskKind::CollectionFocus,
        instruction: "Recommend a news item and its ID from the candidate news list according to the user's collection focus.",
        input_spec: "User's collection focus; news title recommendations.",
        output_spec: "The recommended news title and its ID.",
    },
    PromptTask {
        kind: TaskKind::Behavioral,
        instruction: "Recommend a news item with its ID from the candidate news list based on the user's behavioral information.",
        input_spec: "User's behavior records; news titles recommendation.",
        output_spec: "The recommended news title and its ID.",
    },
];

/// One candidate as sent to an evaluator: id plus truncated title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub id: String,
    pub title: String,
}

/// A fully rendered evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRequest {
    pub task: TaskKind,
    pub prompt: String,
    /// Plain-text profile context; this exact string crosses the wire, so
    /// the in-process mock and any faithful replay server score identically.
    pub profile_summary: String,
    pub candidates: Vec<CandidateRef>,
    /// True when collection_focus was requested but the user has no
    /// bookmarks and the task fell back to behavioral.
    pub task_fallback: bool,
}

/// Scores for every requested candidate plus the evaluator's pick.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResponse {
    pub scores: Vec<(String, f64)>,
    pub chosen_id: String,
}

/// Anything that can score an [`EvaluationRequest`].
pub trait Evaluate: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResponse>;
}

/// Picks the task kind for a user according to the configured policy.
pub fn select_task_kind(selection: TaskSelection, profile: &UserProfile) -> TaskKind {
    match selection {
        TaskSelection::Fixed(kind) => kind,
        TaskSelection::Auto => {
            if !profile.role_positioning.trim().is_empty() {
                TaskKind::InterestRole
            } else {
                TaskKind::Behavioral
            }
        }
    }
}

/// The profile text shared by all task kinds: role, domain focus, and the
/// titles of the most recent `history_cap` clicked items. Token content is
/// deliberately limited to profile-derived words — the mock evaluator's
/// scores are a pure function of this string plus the candidate titles.
pub fn profile_summary(profile: &UserProfile, catalog: &Catalog, history_cap: usize) -> String {
    let mut lines = Vec::new();
    if !profile.role_positioning.trim().is_empty() {
        lines.push(profile.role_positioning.trim().to_string());
    }
    if !profile.domain_focus.is_empty() {
        lines.push(profile.domain_focus.join(" "));
    }
    let clicked: Vec<&str> = profile
        .behavior_history
        .iter()
        .filter(|e| e.action == ActionKind::Clicked)
        .map(|e| e.news_id.as_str())
        .collect();
    let start = clicked.len().saturating_sub(history_cap);
    for id in &clicked[start..] {
        if let Some(item) = catalog.get(id) {
            lines.push(item.title.clone());
        }
    }
    lines.join("\n")
}

/// Renders the prompt for `kind` and packages it as an evaluation request.
///
/// The profile section depends on the task kind; candidates always follow as
/// a numbered `id. title` list with titles truncated to `title_cap` tokens.
/// A collection_focus request for a user without bookmarks falls back to
/// behavioral and is flagged.
pub fn render_prompt(
    kind: TaskKind,
    profile: &UserProfile,
    candidates: &[&NewsItem],
    catalog: &Catalog,
    history_cap: usize,
    title_cap: usize,
) -> Result<EvaluationRequest> {
    if candidates.is_empty() {
        return Err(EngineError::Contract(
            "render_prompt requires at least one candidate".into(),
        ));
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(EngineError::Contract(format!(
            "render_prompt got {} candidates; the cap is {MAX_CANDIDATES}",
            candidates.len()
        )));
    }

    let (kind, task_fallback) =
        if kind == TaskKind::CollectionFocus && profile.collection_list.is_empty() {
            (TaskKind::Behavioral, true)
        } else {
            (kind, false)
        };
    let template = kind.template();

    let mut profile_section = String::new();
    match kind {
        TaskKind::InterestRole => {
            profile_section.push_str(&format!("Role: {}\n", profile.role_positioning.trim()));
            profile_section.push_str(&format!("Focus: {}\n", profile.domain_focus.join(", ")));
        }
        TaskKind::DomainFocus => {
            profile_section.push_str(&format!("Focus: {}\n", profile.domain_focus.join(", ")));
        }
        TaskKind::CollectionFocus => {
            profile_section.push_str("Collection:\n");
            for id in &profile.collection_list {
                if let Some(item) = catalog.get(id) {
                    profile_section
                        .push_str(&format!("- {}\n", truncate_title(&item.title, title_cap)));
                }
            }
        }
        TaskKind::Behavioral => {
            profile_section.push_str("Recent behavior:\n");
            let start = profile.behavior_history.len().saturating_sub(history_cap);
            for e in &profile.behavior_history[start..] {
                let verb = match e.action {
                    ActionKind::Clicked => "clicked",
                    ActionKind::ShownNotClicked => "shown",
                };
                match catalog.get(&e.news_id) {
                    Some(item) => profile_section.push_str(&format!(
                        "- {verb} {}: {}\n",
                        e.news_id,
                        truncate_title(&item.title, title_cap)
                    )),
                    None => profile_section.push_str(&format!("- {verb} {}\n", e.news_id)),
                }
            }
        }
    }

    let refs: Vec<CandidateRef> = candidates
        .iter()
        .map(|item| CandidateRef {
            id: item.id.clone(),
            title: truncate_title(&item.title, title_cap),
        })
        .collect();

    let mut prompt = format!(
        "Task: {}\nInput: {}\nOutput: {}\n\n{}\nCandidates:\n",
        template.instruction, template.input_spec, template.output_spec, profile_section
    );
    for (i, c) in refs.iter().enumerate() {
        prompt.push_str(&format!("{}. {}. {}\n", i + 1, c.id, c.title));
    }

    Ok(EvaluationRequest {
        task: kind,
        prompt,
        profile_summary: profile_summary(profile, catalog, history_cap),
        candidates: refs,
        task_fallback,
    })
}

/// Enforces the response contract shared by every transport: scores must
/// cover exactly the requested candidates, out-of-range scores are clamped
/// with a warning, and `chosen_id` must be the (clamped) argmax with ties
/// going to the lowest id.
pub fn validate_response(
    request: &EvaluationRequest,
    mut response: EvaluationResponse,
) -> Result<EvaluationResponse> {
    use std::collections::HashSet;

    let requested: HashSet<&str> = request.candidates.iter().map(|c| c.id.as_str()).collect();
    let mut seen = HashSet::new();
    for (id, score) in &mut response.scores {
        if !requested.contains(id.as_str()) {
            return Err(EngineError::Protocol(format!(
                "response scored unknown id {id}"
            )));
        }
        if !seen.insert(id.clone()) {
            return Err(EngineError::Protocol(format!("response scored {id} twice")));
        }
        if !score.is_finite() {
            return Err(EngineError::Protocol(format!(
                "response score for {id} is not finite"
            )));
        }
        if *score < 0.0 || *score > 1.0 {
            log::warn!("evaluator score {score} for {id} outside [0, 1]; clamping");
            *score = score.clamp(0.0, 1.0);
        }
    }
    if response.scores.len() != request.candidates.len() {
        return Err(EngineError::Protocol(format!(
            "response scored {} of {} requested candidates",
            response.scores.len(),
            request.candidates.len()
        )));
    }

    let expected = response
        .scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _)| id.clone())
        .expect("non-empty scores");
    if response.chosen_id != expected {
        return Err(EngineError::Protocol(format!(
            "chosen_id {} is not the argmax {expected}",
            response.chosen_id
        )));
    }
    Ok(response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BehaviorEvent;

    fn item(id: &str, title: &str) -> NewsItem {
        NewsItem {
            id: id.into(),
            title: title.into(),
            body: None,
            category: "sports".into(),
            subcategory: None,
            source: "wire".into(),
            publish_time: 0,
            click_count: 0,
            impression_count: 0,
        }
    }

    fn catalog() -> Catalog {
        Catalog::new(vec![
            item("n1", "Football finals tonight"),
            item("n2", "Stock markets rally"),
            item("n3", "Chess超 championship recap here"),
        ])
        .unwrap()
    }

    fn profile() -> UserProfile {
        UserProfile {
            user_id: "u1".into(),
            role_positioning: "sports editor".into(),
            domain_focus: vec!["sports".into()],
            collection_list: vec![],
            behavior_history: vec![BehaviorEvent {
                news_id: "n1".into(),
                timestamp: 10,
                action: ActionKind::Clicked,
                impression_id: None,
            }],
        }
    }

    fn request(candidates: &[&NewsItem]) -> EvaluationRequest {
        render_prompt(
            TaskKind::DomainFocus,
            &profile(),
            candidates,
            &catalog(),
            20,
            32,
        )
        .unwrap()
    }

    #[test]
    fn domain_focus_prompt_contains_instruction_focus_and_candidates() {
        let cat = catalog();
        let cands = [cat.get("n1").unwrap(), cat.get("n2").unwrap()];
        let req = request(&cands);
        assert!(req.prompt.contains("according to the user's domain focus"));
        assert!(req.prompt.contains("sports"));
        assert!(req.prompt.contains("1. n1. Football finals tonight"));
        assert!(req.prompt.contains("2. n2. Stock markets rally"));
        assert!(!req.task_fallback);
    }

    #[test]
    fn render_is_deterministic() {
        let cat = catalog();
        let cands = [cat.get("n1").unwrap(), cat.get("n2").unwrap()];
        assert_eq!(request(&cands), request(&cands));
    }

    #[test]
    fn candidate_cap_is_enforced() {
        let items: Vec<NewsItem> = (0..21).map(|i| item(&format!("m{i}"), "t word")).collect();
        let refs: Vec<&NewsItem> = items.iter().collect();
        let err =
            render_prompt(TaskKind::Behavioral, &profile(), &refs, &catalog(), 20, 32).unwrap_err();
        assert!(err.to_string().contains("cap"));

        let none: Vec<&NewsItem> = vec![];
        assert!(
            render_prompt(TaskKind::Behavioral, &profile(), &none, &catalog(), 20, 32).is_err()
        );
    }

    #[test]
    fn collection_focus_falls_back_to_behavioral_when_empty() {
        let cat = catalog();
        let cands = [cat.get("n1").unwrap()];
        let req =
            render_prompt(TaskKind::CollectionFocus, &profile(), &cands, &cat, 20, 32).unwrap();
        assert_eq!(req.task, TaskKind::Behavioral);
        assert!(req.task_fallback);
        assert!(req.prompt.contains("behavioral information"));

        let mut p = profile();
        p.collection_list = vec!["n2".into()];
        let req = render_prompt(TaskKind::CollectionFocus, &p, &cands, &cat, 20, 32).unwrap();
        assert_eq!(req.task, TaskKind::CollectionFocus);
        assert!(!req.task_fallback);
        assert!(req.prompt.contains("Stock markets rally"));
    }

    #[test]
    fn titles_are_truncated_in_candidates() {
        let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let long_item = item("n9", &long.join(" "));
        let binding = [&long_item];
        let req = render_prompt(
            TaskKind::Behavioral,
            &profile(),
            &binding,
            &catalog(),
            20,
            32,
        )
        .unwrap();
        assert_eq!(req.candidates[0].title.split_whitespace().count(), 32);
    }

    #[test]
    fn behavioral_section_lists_recent_records() {
        let cat = catalog();
        let mut p = profile();
        p.behavior_history.push(BehaviorEvent {
            news_id: "n2".into(),
            timestamp: 20,
            action: ActionKind::ShownNotClicked,
            impression_id: Some("imp1".into()),
        });
        let cands = [cat.get("n3").unwrap()];
        let req = render_prompt(TaskKind::Behavioral, &p, &cands, &cat, 20, 32).unwrap();
        assert!(req.prompt.contains("- clicked n1: Football finals tonight"));
        assert!(req.prompt.contains("- shown n2: Stock markets rally"));
    }

    #[test]
    fn task_kind_selection_policy() {
        let mut p = profile();
        assert_eq!(
            select_task_kind(TaskSelection::Auto, &p),
            TaskKind::InterestRole
        );
        p.role_positioning = String::new();
        assert_eq!(
            select_task_kind(TaskSelection::Auto, &p),
            TaskKind::Behavioral
        );
        assert_eq!(
            select_task_kind(TaskSelection::Fixed(TaskKind::DomainFocus), &p),
            TaskKind::DomainFocus
        );
    }

    #[test]
    fn validator_clamps_out_of_range_scores() {
        let cat = catalog();
        let req = request(&[cat.get("n1").unwrap(), cat.get("n2").unwrap()]);
        let resp = EvaluationResponse {
            scores: vec![("n1".into(), 1.7), ("n2".into(), -0.2)],
            chosen_id: "n1".into(),
        };
        let out = validate_response(&req, resp).unwrap();
        assert_eq!(out.scores, vec![("n1".into(), 1.0), ("n2".into(), 0.0)]);
    }

    #[test]
    fn validator_rejects_unknown_missing_duplicate_and_bad_argmax() {
        let cat = catalog();
        let req = request(&[cat.get("n1").unwrap(), cat.get("n2").unwrap()]);

        let unknown = EvaluationResponse {
            scores: vec![("n1".into(), 0.5), ("nx".into(), 0.5)],
            chosen_id: "n1".into(),
        };
        assert!(validate_response(&req, unknown).is_err());

        let missing = EvaluationResponse {
            scores: vec![("n1".into(), 0.5)],
            chosen_id: "n1".into(),
        };
        assert!(validate_response(&req, missing).is_err());

        let duplicate = EvaluationResponse {
            scores: vec![("n1".into(), 0.5), ("n1".into(), 0.4)],
            chosen_id: "n1".into(),
        };
        assert!(validate_response(&req, duplicate).is_err());

        let wrong_argmax = EvaluationResponse {
            scores: vec![("n1".into(), 0.9), ("n2".into(), 0.1)],
            chosen_id: "n2".into(),
        };
        assert!(validate_response(&req, wrong_argmax).is_err());
    }

    #[test]
    fn validator_breaks_argmax_ties_toward_lowest_id() {
        let cat = catalog();
        let req = request(&[cat.get("n1").unwrap(), cat.get("n2").unwrap()]);
        let tie = EvaluationResponse {
            scores: vec![("n2".into(), 0.5), ("n1".into(), 0.5)],
            chosen_id: "n1".into(),
        };
        assert!(validate_response(&req, tie).is_ok());
    }
}
