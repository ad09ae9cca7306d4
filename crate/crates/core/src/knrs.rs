//! Stage 1: multi-feature value scoring and rapid candidate selection.
//!
//! Every candidate gets five features in [0, 1] — relevance, source
//! credibility, timeliness, online attention, novelty — fused by a weighted
//! sum into a value score. Selection keeps the top `keep_fraction` share of
//! the scored pool and returns at most `top_k` of those.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::KnrsConfig;
use crate::model::{
    ActionKind, Catalog, InteractionSequence, NewsItem, ScoredCandidate, UserProfile,
};
use crate::text::{jaccard, token_set, tokenize};
use crate::{EngineError, Result};

/// Weights for the five value features, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnrsWeights {
    pub w: [f64; 5],
}

impl KnrsWeights {
    pub fn new(w: [f64; 5]) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(EngineError::Config(
                "knrs weights must be finite and non-negative".into(),
            ));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(EngineError::Config(
                "at least one knrs weight must be positive".into(),
            ));
        }
        Ok(KnrsWeights { w })
    }
}

/// Scalar knobs for feature computation and selection.
#[derive(Debug, Clone, PartialEq)]
pub struct KnrsParams {
    pub weights: KnrsWeights,
    pub half_life_hours: f64,
    pub smoothing: f64,
    pub keep_fraction: f64,
    pub top_k: usize,
    pub popularity_window_hours: f64,
}

impl KnrsParams {
    pub fn from_config(cfg: &KnrsConfig) -> Result<Self> {
        Ok(KnrsParams {
            weights: KnrsWeights::new(cfg.weights)?,
            half_life_hours: cfg.half_life_hours,
            smoothing: cfg.smoothing,
            keep_fraction: cfg.keep_fraction,
            top_k: cfg.top_k,
            popularity_window_hours: cfg.popularity_window_hours,
        })
    }
}

/// Source → credibility score table; unknown sources score 0.5.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CredibilityTable {
    scores: BTreeMap<String, f64>,
}

impl CredibilityTable {
    pub fn empty() -> Self {
        CredibilityTable::default()
    }

    /// Parses a two-column TSV: source, score in [0, 1].
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut scores = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (source, score) = match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(v), None) if !s.is_empty() => (s, v),
                _ => {
                    return Err(EngineError::Config(format!(
                        "credibility table line {}: expected source<TAB>score",
                        lineno + 1
                    )))
                }
            };
            let value: f64 = score.trim().parse().map_err(|_| {
                EngineError::Config(format!("credibility table line {}: bad score", lineno + 1))
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(EngineError::Config(format!(
                    "credibility table line {}: score {value} outside [0, 1]",
                    lineno + 1
                )));
            }
            scores.insert(source.to_string(), value);
        }
        Ok(CredibilityTable { scores })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(EngineError::io(format!(
            "reading credibility table {}",
            path.display()
        )))?;
        CredibilityTable::from_tsv(&text)
    }

    pub fn score(&self, source: &str) -> f64 {
        self.scores.get(source).copied().unwrap_or(0.5)
    }
}

/// Per-item click/show timestamps supporting sliding-window popularity counts.
#[derive(Debug, Clone, Default)]
pub struct PopularitySignals {
    clicks: HashMap<String, Vec<i64>>,
    shows: HashMap<String, Vec<i64>>,
}

impl PopularitySignals {
    pub fn empty() -> Self {
        PopularitySignals::default()
    }

    pub fn build<'a>(sequences: impl IntoIterator<Item = &'a InteractionSequence>) -> Self {
        let mut signals = PopularitySignals::default();
        for seq in sequences {
            for e in &seq.items {
                let bucket = match e.action {
                    ActionKind::Clicked => &mut signals.clicks,
                    ActionKind::ShownNotClicked => &mut signals.shows,
                };
                bucket
                    .entry(e.news_id.clone())
                    .or_default()
                    .push(e.timestamp);
            }
        }
        for v in signals
            .clicks
            .values_mut()
            .chain(signals.shows.values_mut())
        {
            v.sort_unstable();
        }
        signals
    }

    /// (clicks, impressions) for `news_id` in the half-open window
    /// `[now - window, now)`. An impression is any exposure, clicked or not.
    pub fn counts(&self, news_id: &str, now: i64, window_hours: f64) -> (u64, u64) {
        let window = (window_hours * 3600.0).round() as i64;
        let start = now.saturating_sub(window);
        let in_window = |times: Option<&Vec<i64>>| -> u64 {
            match times {
                None => 0,
                Some(ts) => {
                    let lo = ts.partition_point(|&t| t < start);
                    let hi = ts.partition_point(|&t| t < now);
                    (hi - lo) as u64
                }
            }
        };
        let clicks = in_window(self.clicks.get(news_id));
        let shows = in_window(self.shows.get(news_id));
        (clicks, clicks + shows)
    }
}

/// Computes the five value features for (user, item) at time `now`.
///
/// `recent_history` is the user's most recent clicked items (already capped).
pub fn compute_value_features(
    user: &UserProfile,
    item: &NewsItem,
    signals: &PopularitySignals,
    credibility: &CredibilityTable,
    now: i64,
    recent_history: &[&NewsItem],
    params: &KnrsParams,
) -> [f64; 5] {
    // f1: relevance — Jaccard between the user's interest tokens (domain
    // focus plus history titles) and the item's category/subcategory/title.
    let mut user_tokens = std::collections::BTreeSet::new();
    for label in &user.domain_focus {
        user_tokens.extend(tokenize(label));
    }
    for h in recent_history {
        user_tokens.extend(tokenize(&h.title));
    }
    let mut item_tokens = token_set(&item.category);
    if let Some(sub) = &item.subcategory {
        item_tokens.extend(tokenize(sub));
    }
    item_tokens.extend(tokenize(&item.title));
    let f1 = jaccard(&user_tokens, &item_tokens);

    // f2: source credibility table lookup.
    let f2 = credibility.score(&item.source);

    // f3: exponential time decay with the configured half-life. A publish
    // time in the future is tolerated as clock skew and clamped to 1.0.
    let dt = now - item.publish_time;
    let f3 = if dt < 0 {
        log::warn!(
            "news {} published {}s after now={}; clamping timeliness to 1.0",
            item.id,
            -dt,
            now
        );
        1.0
    } else {
        let hours = dt as f64 / 3600.0;
        (-(hours / params.half_life_hours)).exp2()
    };

    // f4: smoothed click-through over the recency window.
    let (clicks, impressions) = signals.counts(&item.id, now, params.popularity_window_hours);
    let denom = impressions as f64 + params.smoothing;
    let f4 = if denom > 0.0 {
        (clicks as f64 / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };

    // f5: novelty — one minus the closest title similarity to recent history.
    let item_title = token_set(&item.title);
    let max_sim = recent_history
        .iter()
        .map(|h| jaccard(&token_set(&h.title), &item_title))
        .fold(0.0f64, f64::max);
    let f5 = 1.0 - max_sim;

    let features = [f1, f2, f3, f4, f5];
    debug_assert!(
        features.iter().all(|f| (0.0..=1.0).contains(f)),
        "feature outside [0,1]"
    );
    features
}

/// Weighted sum of the five features.
pub fn value_score(features: &[f64; 5], weights: &KnrsWeights) -> f64 {
    weights.w.iter().zip(features).map(|(w, f)| w * f).sum()
}

/// Scores every never-clicked catalog item for `user`, keeps the
/// `⌈keep_fraction · n⌉` highest-value items, and returns at most `top_k`
/// of those, ordered by (value desc, id asc).
pub fn select_candidates(
    user: &UserProfile,
    catalog: &Catalog,
    signals: &PopularitySignals,
    credibility: &CredibilityTable,
    now: i64,
    recent_history: &[&NewsItem],
    params: &KnrsParams,
) -> Vec<ScoredCandidate> {
    let clicked: HashSet<&str> = user
        .behavior_history
        .iter()
        .filter(|e| e.action == ActionKind::Clicked)
        .map(|e| e.news_id.as_str())
        .collect();

    let mut scored: Vec<ScoredCandidate> = catalog
        .iter()
        .filter(|item| !clicked.contains(item.id.as_str()))
        .map(|item| {
            let features = compute_value_features(
                user,
                item,
                signals,
                credibility,
                now,
                recent_history,
                params,
            );
            ScoredCandidate {
                news_id: item.id.clone(),
                knrs_features: features,
                knrs_value: value_score(&features, &params.weights),
                cnle_score: 0.0,
                vans_prediction: 0.0,
            }
        })
        .collect();

    if scored.is_empty() {
        return scored;
    }
    scored.sort_by(|a, b| {
        b.knrs_value
            .total_cmp(&a.knrs_value)
            .then_with(|| a.news_id.cmp(&b.news_id))
    });
    let keep = (params.keep_fraction * scored.len() as f64).ceil() as usize;
    scored.truncate(keep.min(params.top_k));
    scored
}
