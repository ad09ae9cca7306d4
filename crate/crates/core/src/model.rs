//! Domain types shared by every stage, plus chronological sequence assembly.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{EngineError, Result};

/// What a user did with a news item in one exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Clicked,
    ShownNotClicked,
}

/// One news article with metadata and popularity counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcategory: Option<String>,
    pub source: String,
    /// UTC epoch seconds.
    pub publish_time: i64,
    pub click_count: u64,
    pub impression_count: u64,
}

impl NewsItem {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(EngineError::Data("news item with empty id".into()));
        }
        if self.click_count > self.impression_count {
            return Err(EngineError::Data(format!(
                "news {}: click_count {} exceeds impression_count {}",
                self.id, self.click_count, self.impression_count
            )));
        }
        Ok(())
    }
}

/// One behavior record inside a user's chronological sequence.
///
/// `impression_id` groups the records that were shown together in a single
/// exposure; imported pre-log history items carry `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub news_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impression_id: Option<String>,
}

/// A raw (user, event) pair prior to grouping into sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBehaviorRecord {
    pub user_id: String,
    pub news_id: String,
    pub timestamp: i64,
    pub action: ActionKind,
    pub impression_id: Option<String>,
}

/// A user's chronologically ordered behavior records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: String,
    pub items: Vec<BehaviorEvent>,
}

impl InteractionSequence {
    /// Number of clicked records (the sequence length in the modeling sense).
    pub fn click_len(&self) -> usize {
        self.items
            .iter()
            .filter(|e| e.action == ActionKind::Clicked)
            .count()
    }

    pub fn clicked(&self) -> impl Iterator<Item = &BehaviorEvent> {
        self.items
            .iter()
            .filter(|e| e.action == ActionKind::Clicked)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_id.is_empty() {
            return Err(EngineError::Data("sequence with empty user id".into()));
        }
        for w in self.items.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(EngineError::Data(format!(
                    "sequence {}: timestamps not non-decreasing",
                    self.user_id
                )));
            }
        }
        Ok(())
    }
}

/// A user profile: role text, top category interests, bookmarks, and the
/// full behavior history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Free text describing the user's role; empty when unknown.
    pub role_positioning: String,
    /// Top categories by click frequency, most frequent first (at most 3).
    pub domain_focus: Vec<String>,
    /// Bookmarked news ids, sorted; empty when the source has no bookmarks.
    pub collection_list: Vec<String>,
    pub behavior_history: Vec<BehaviorEvent>,
}

/// A candidate flowing through the pipeline, accumulating per-stage scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub news_id: String,
    /// The five selector features, each in [0, 1].
    pub knrs_features: [f64; 5],
    /// Weighted feature sum used for stage-1 filtering.
    pub knrs_value: f64,
    /// Evaluator preference score in [0, 1].
    pub cnle_score: f64,
    /// Final CherryRec score (set by the ranking stage).
    pub vans_prediction: f64,
}

/// An id-indexed, id-sorted collection of news items.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<NewsItem>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(mut items: Vec<NewsItem>) -> Result<Self> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            item.validate()?;
            if index.insert(item.id.clone(), i).is_some() {
                return Err(EngineError::Data(format!("duplicate news id {}", item.id)));
            }
        }
        Ok(Catalog { items, index })
    }

    pub fn get(&self, id: &str) -> Option<&NewsItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Items in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &NewsItem> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn into_items(self) -> Vec<NewsItem> {
        self.items
    }
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

/// Result of [`build_sequences`].
#[derive(Debug, Clone)]
pub struct SequenceBuild {
    /// One sequence per user, sorted by user id.
    pub sequences: Vec<InteractionSequence>,
    /// Records dropped because they referenced ids missing from the catalog.
    pub dropped_unknown_news: u64,
}

/// Groups raw records into per-user sequences sorted by timestamp.
///
/// Records referencing news ids absent from `catalog` are dropped and
/// counted. Timestamp ties keep their input order (stable sort).
pub fn build_sequences(catalog: &Catalog, records: Vec<RawBehaviorRecord>) -> SequenceBuild {
    let mut dropped = 0u64;
    let mut by_user: BTreeMap<String, Vec<BehaviorEvent>> = BTreeMap::new();
    for rec in records {
        if !catalog.contains(&rec.news_id) {
            dropped += 1;
            continue;
        }
        by_user.entry(rec.user_id).or_default().push(BehaviorEvent {
            news_id: rec.news_id,
            timestamp: rec.timestamp,
            action: rec.action,
            impression_id: rec.impression_id,
        });
    }
    let sequences = by_user
        .into_iter()
        .map(|(user_id, mut items)| {
            items.sort_by_key(|e| e.timestamp);
            InteractionSequence { user_id, items }
        })
        .collect();
    SequenceBuild {
        sequences,
        dropped_unknown_news: dropped,
    }
}

/// Returns the most recent `cap` clicked records of `seq`, order preserved.
pub fn truncate_history(seq: &InteractionSequence, cap: usize) -> InteractionSequence {
    let clicked: Vec<BehaviorEvent> = seq.clicked().cloned().collect();
    let start = clicked.len().saturating_sub(cap);
    InteractionSequence {
        user_id: seq.user_id.clone(),
        items: clicked[start..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn news(id: &str) -> NewsItem {
        NewsItem {
            id: id.into(),
            title: format!("title {id}"),
            body: None,
            category: "cat".into(),
            subcategory: None,
            source: "src".into(),
            publish_time: 0,
            click_count: 0,
            impression_count: 0,
        }
    }

    fn catalog(ids: &[&str]) -> Catalog {
        Catalog::new(ids.iter().map(|id| news(id)).collect()).unwrap()
    }

    fn rec(user: &str, id: &str, t: i64) -> RawBehaviorRecord {
        RawBehaviorRecord {
            user_id: user.into(),
            news_id: id.into(),
            timestamp: t,
            action: ActionKind::Clicked,
            impression_id: None,
        }
    }

    fn seq_of(user: &str, clicks: &[(&str, i64)]) -> InteractionSequence {
        InteractionSequence {
            user_id: user.into(),
            items: clicks
                .iter()
                .map(|(id, t)| BehaviorEvent {
                    news_id: (*id).into(),
                    timestamp: *t,
                    action: ActionKind::Clicked,
                    impression_id: None,
                })
                .collect(),
        }
    }

    #[test]
    fn build_sequences_sorts_by_timestamp() {
        let cat = catalog(&["n1", "n2"]);
        let out = build_sequences(&cat, vec![rec("u1", "n2", 30), rec("u1", "n1", 10)]);
        assert_eq!(out.sequences.len(), 1);
        let ids: Vec<&str> = out.sequences[0]
            .items
            .iter()
            .map(|e| e.news_id.as_str())
            .collect();
        assert_eq!(ids, ["n1", "n2"]);
        assert_eq!(out.dropped_unknown_news, 0);
    }

    #[test]
    fn build_sequences_drops_unknown_ids() {
        let cat = catalog(&["n1"]);
        let out = build_sequences(&cat, vec![rec("u1", "n1", 1), rec("u1", "n9", 2)]);
        assert_eq!(out.dropped_unknown_news, 1);
        assert_eq!(out.sequences[0].items.len(), 1);
    }

    #[test]
    fn build_sequences_counts_users_and_lengths() {
        let cat = catalog(&["n1", "n2", "n3", "n4"]);
        let mut records = Vec::new();
        for u in ["u1", "u2", "u3"] {
            for (i, n) in ["n1", "n2", "n3", "n4"].iter().enumerate() {
                records.push(rec(u, n, i as i64));
            }
        }
        let out = build_sequences(&cat, records);
        assert_eq!(out.sequences.len(), 3);
        assert!(out.sequences.iter().all(|s| s.items.len() == 4));
    }

    #[test]
    fn build_sequences_is_order_independent_and_idempotent() {
        let cat = catalog(&["n1", "n2", "n3"]);
        let records = vec![
            rec("u2", "n3", 5),
            rec("u1", "n1", 2),
            rec("u1", "n2", 1),
            rec("u2", "n1", 4),
        ];
        let mut shuffled = records.clone();
        shuffled.reverse();
        let a = build_sequences(&cat, records);
        let b = build_sequences(&cat, shuffled);
        assert_eq!(a.sequences, b.sequences);

        // Re-running on the flattened output changes nothing.
        let flat: Vec<RawBehaviorRecord> = a
            .sequences
            .iter()
            .flat_map(|s| {
                s.items.iter().map(|e| RawBehaviorRecord {
                    user_id: s.user_id.clone(),
                    news_id: e.news_id.clone(),
                    timestamp: e.timestamp,
                    action: e.action,
                    impression_id: e.impression_id.clone(),
                })
            })
            .collect();
        let again = build_sequences(&cat, flat);
        assert_eq!(a.sequences, again.sequences);
    }

    #[test]
    fn build_sequences_breaks_timestamp_ties_by_input_order() {
        let cat = catalog(&["n1", "n2"]);
        let out = build_sequences(&cat, vec![rec("u1", "n2", 7), rec("u1", "n1", 7)]);
        let ids: Vec<&str> = out.sequences[0]
            .items
            .iter()
            .map(|e| e.news_id.as_str())
            .collect();
        assert_eq!(ids, ["n2", "n1"]);
    }

    #[test]
    fn truncate_history_keeps_most_recent_cap() {
        let clicks: Vec<(String, i64)> = (0..25).map(|i| (format!("n{i}"), i as i64)).collect();
        let refs: Vec<(&str, i64)> = clicks.iter().map(|(s, t)| (s.as_str(), *t)).collect();
        let seq = seq_of("u1", &refs);

        let t20 = truncate_history(&seq, 20);
        assert_eq!(t20.items.len(), 20);
        assert_eq!(t20.items[0].news_id, "n5");
        assert_eq!(t20.items[19].news_id, "n24");

        let short = seq_of("u1", &refs[..5]);
        assert_eq!(truncate_history(&short, 20).items.len(), 5);

        let t21 = truncate_history(&seq_of("u1", &refs[..21]), 20);
        assert_eq!(t21.items[0].news_id, "n1");
        assert_eq!(t21.items.len(), 20);
    }

    #[test]
    fn truncate_history_is_a_suffix_of_clicks() {
        let refs: Vec<(String, i64)> = (0..13).map(|i| (format!("n{i}"), i as i64)).collect();
        let refs: Vec<(&str, i64)> = refs.iter().map(|(s, t)| (s.as_str(), *t)).collect();
        let seq = seq_of("u1", &refs);
        for cap in [1usize, 3, 13, 40] {
            let t = truncate_history(&seq, cap);
            assert_eq!(t.items.len(), cap.min(13));
            let clicks: Vec<_> = seq.clicked().cloned().collect();
            assert_eq!(t.items[..], clicks[clicks.len() - t.items.len()..]);
        }
    }

    #[test]
    fn catalog_rejects_duplicates_and_bad_counters() {
        let err = Catalog::new(vec![news("n1"), news("n1")]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        let mut bad = news("n2");
        bad.click_count = 3;
        bad.impression_count = 2;
        assert!(Catalog::new(vec![bad]).is_err());
    }

    #[test]
    fn catalog_iterates_in_id_order() {
        let cat = catalog(&["n3", "n1", "n2"]);
        let ids: Vec<&str> = cat.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["n1", "n2", "n3"]);
        assert!(cat.get("n2").is_some());
        assert!(cat.get("nx").is_none());
    }

    #[test]
    fn sequence_validation_checks_monotonic_timestamps() {
        let good = seq_of("u1", &[("n1", 1), ("n2", 1), ("n3", 2)]);
        assert!(good.validate().is_ok());
        let bad = seq_of("u1", &[("n1", 5), ("n2", 1)]);
        assert!(bad.validate().is_err());
    }
}
