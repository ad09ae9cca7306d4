//! End-to-end orchestration: candidate selection, batched evaluator calls,
//! fused ranking, training over historical impressions, and the offline
//! leave-one-out evaluation loop.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cnle::mock::MockEvaluator;
use crate::cnle::remote::RemoteEvaluator;
use crate::cnle::{
    render_prompt, select_task_kind, Evaluate, EvaluationRequest, EvaluationResponse, TaskKind,
    MAX_CANDIDATES,
};
use crate::config::{EngineConfig, EvaluatorKind};
use crate::error::EngineError;
use crate::eval::{build_report, leave_one_out_split, EvalReport, UserOutcome};
use crate::ingest::{rank_domain_focus, DatasetSnapshot};
use crate::knrs::{
    compute_value_features, select_candidates, CredibilityTable, KnrsParams, PopularitySignals,
};
use crate::model::{ActionKind, BehaviorEvent, Catalog, NewsItem, ScoredCandidate, UserProfile};
use crate::vans::{
    fit_auxiliary, rank_candidates, select_fusion_weights, standardize, train_poly,
    AuxiliaryParams, EnsembleModel, TrainOptions, TrainingRecord, ValidationGroup, VansModel,
};
use crate::Result;

// ---------------------------------------------------------------------------
// Evaluator plumbing
// ---------------------------------------------------------------------------

/// Instantiates the evaluator named by the configuration.
pub fn build_evaluator(config: &EngineConfig) -> Result<Box<dyn Evaluate>> {
    match config.cnle.evaluator {
        EvaluatorKind::Mock => Ok(Box::new(MockEvaluator)),
        EvaluatorKind::Remote => Ok(Box::new(RemoteEvaluator::from_config(&config.cnle)?)),
    }
}

/// Evaluates all requests on up to `concurrency` worker threads. The result
/// vector is index-aligned with `requests`, so concurrency never changes
/// the outcome, only the wall-clock time.
pub fn evaluate_batch(
    evaluator: &dyn Evaluate,
    requests: &[EvaluationRequest],
    concurrency: usize,
) -> Vec<Result<EvaluationResponse>> {
    if requests.is_empty() {
        return Vec::new();
    }
    let workers = concurrency.max(1).min(requests.len());
    if workers == 1 {
        return requests.iter().map(|r| evaluator.evaluate(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<EvaluationResponse>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let outcome = evaluator.evaluate(&requests[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("every request slot is filled before the scope ends")
        })
        .collect()
}

/// Splits `items` into evaluator-sized chunks (first occurrence wins on
/// duplicates) and renders one request per chunk.
fn chunked_requests(
    task: TaskKind,
    profile: &UserProfile,
    items: &[&NewsItem],
    catalog: &Catalog,
    config: &EngineConfig,
) -> Result<Vec<EvaluationRequest>> {
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&NewsItem> = items
        .iter()
        .copied()
        .filter(|i| seen.insert(i.id.as_str()))
        .collect();
    unique
        .chunks(MAX_CANDIDATES)
        .map(|chunk| {
            render_prompt(
                task,
                profile,
                chunk,
                catalog,
                config.history_cap,
                config.title_token_cap,
            )
        })
        .collect()
}

/// Runs a set of (unit, request) jobs through the evaluator and merges the
/// returned scores into one id → score map per unit.
fn score_jobs(
    evaluator: &dyn Evaluate,
    jobs: Vec<(usize, EvaluationRequest)>,
    units: usize,
    concurrency: usize,
) -> Result<Vec<HashMap<String, f64>>> {
    let requests: Vec<EvaluationRequest> = jobs.iter().map(|(_, r)| r.clone()).collect();
    let responses = evaluate_batch(evaluator, &requests, concurrency);
    let mut scores: Vec<HashMap<String, f64>> = (0..units).map(|_| HashMap::new()).collect();
    for ((unit, _), response) in jobs.into_iter().zip(responses) {
        let response = response?;
        for (id, score) in response.scores {
            scores[unit].insert(id, score);
        }
    }
    Ok(scores)
}

fn feature_row(features: [f64; 5], cnle: f64) -> Vec<f64> {
    vec![
        features[0],
        features[1],
        features[2],
        features[3],
        features[4],
        cnle,
    ]
}

// ---------------------------------------------------------------------------
// Per-user context reconstruction
// ---------------------------------------------------------------------------

/// The user as they looked at a past moment: profile focus recomputed from
/// the clicks visible then, with role and collection kept as stored.
fn profile_at(
    stored: &UserProfile,
    visible_clicks: &[&BehaviorEvent],
    catalog: &Catalog,
) -> Result<UserProfile> {
    let mut categories = Vec::with_capacity(visible_clicks.len());
    for event in visible_clicks {
        let item = catalog.get(&event.news_id).ok_or_else(|| {
            EngineError::Data(format!("history references unknown item {}", event.news_id))
        })?;
        categories.push(item.category.as_str());
    }
    Ok(UserProfile {
        user_id: stored.user_id.clone(),
        role_positioning: stored.role_positioning.clone(),
        domain_focus: rank_domain_focus(categories),
        collection_list: stored.collection_list.clone(),
        behavior_history: visible_clicks.iter().map(|e| (*e).clone()).collect(),
    })
}

/// The last `cap` clicks resolved to catalog items.
fn recent_items<'a>(
    visible_clicks: &[&BehaviorEvent],
    cap: usize,
    catalog: &'a Catalog,
) -> Vec<&'a NewsItem> {
    let start = visible_clicks.len().saturating_sub(cap);
    visible_clicks[start..]
        .iter()
        .filter_map(|e| catalog.get(&e.news_id))
        .collect()
}

fn load_credibility(config: &EngineConfig) -> Result<CredibilityTable> {
    match &config.knrs.credibility_table {
        Some(path) => CredibilityTable::load(path),
        None => Ok(CredibilityTable::empty()),
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GroupRole {
    Train,
    Validation,
    Test,
}

struct ImpressionGroup {
    role: GroupRole,
    /// The validation click id when `role` is `Validation`.
    truth_id: Option<String>,
    /// (item id, knrs features, label) per event, in event order.
    rows: Vec<(String, [f64; 5], f64)>,
}

/// (item id, raw fusion features) per candidate of one validation group.
type RawFusionRows = Vec<(String, Vec<f64>)>;

/// Fits the scoring stage on historical impressions. Each impression is a
/// labeled group (clicked = 1, shown = 0) with features computed from the
/// state of the world strictly before the impression; the impression
/// containing the held-out test click is excluded, and the one containing
/// the validation click supplies early stopping and fusion-weight data.
pub fn train(
    snapshot: &DatasetSnapshot,
    config: &EngineConfig,
    evaluator: &dyn Evaluate,
) -> Result<VansModel> {
    config.validate()?;
    let params = KnrsParams::from_config(&config.knrs)?;
    let credibility = load_credibility(config)?;
    let signals = PopularitySignals::build(snapshot.sequences.values());
    let split_set = leave_one_out_split(snapshot.sequences.values(), config.max_sequence_length);

    let mut groups: Vec<ImpressionGroup> = Vec::new();
    let mut jobs: Vec<(usize, EvaluationRequest)> = Vec::new();

    for split in &split_set.splits {
        let stored = snapshot
            .profiles
            .get(&split.user_id)
            .ok_or_else(|| EngineError::Data(format!("no profile for user {}", split.user_id)))?;
        let sequence = &snapshot.sequences[&split.user_id];
        let task = select_task_kind(config.cnle.task, stored);

        // All clicks the split may reveal, in order.
        let mut split_clicks: Vec<&BehaviorEvent> = split.train.iter().collect();
        split_clicks.push(&split.validation);
        split_clicks.push(&split.test);

        // Impression groups in first-appearance order.
        let mut order: Vec<&str> = Vec::new();
        let mut by_impression: HashMap<&str, Vec<&BehaviorEvent>> = HashMap::new();
        for event in &sequence.items {
            if let Some(id) = &event.impression_id {
                let bucket = by_impression.entry(id.as_str()).or_default();
                if bucket.is_empty() {
                    order.push(id.as_str());
                }
                bucket.push(event);
            }
        }

        for impression_id in order {
            let events = &by_impression[impression_id];
            let timestamp = events
                .iter()
                .map(|e| e.timestamp)
                .min()
                .expect("non-empty group");
            let role = if events.iter().any(|e| **e == split.test) {
                GroupRole::Test
            } else if events.iter().any(|e| **e == split.validation) {
                GroupRole::Validation
            } else {
                GroupRole::Train
            };
            if role == GroupRole::Test {
                continue; // held out entirely
            }

            let visible: Vec<&BehaviorEvent> = split_clicks
                .iter()
                .copied()
                .filter(|e| e.timestamp < timestamp)
                .collect();
            let profile = profile_at(stored, &visible, &snapshot.catalog)?;
            let recent = recent_items(&visible, config.history_cap, &snapshot.catalog);

            let mut rows = Vec::with_capacity(events.len());
            let mut items: Vec<&NewsItem> = Vec::with_capacity(events.len());
            for event in events.iter() {
                let item = snapshot.catalog.get(&event.news_id).ok_or_else(|| {
                    EngineError::Data(format!(
                        "impression references unknown item {}",
                        event.news_id
                    ))
                })?;
                let features = compute_value_features(
                    &profile,
                    item,
                    &signals,
                    &credibility,
                    timestamp,
                    &recent,
                    &params,
                );
                let label = match event.action {
                    ActionKind::Clicked => 1.0,
                    ActionKind::ShownNotClicked => 0.0,
                };
                rows.push((item.id.clone(), features, label));
                items.push(item);
            }

            let unit = groups.len();
            for request in chunked_requests(task, &profile, &items, &snapshot.catalog, config)? {
                jobs.push((unit, request));
            }
            groups.push(ImpressionGroup {
                role,
                truth_id: (role == GroupRole::Validation).then(|| split.validation.news_id.clone()),
                rows,
            });
        }
    }

    let scores = score_jobs(evaluator, jobs, groups.len(), config.cnle.concurrency)?;

    // Assemble raw rows.
    let mut train_rows: Vec<Vec<f64>> = Vec::new();
    let mut train_labels: Vec<f64> = Vec::new();
    let mut val_rows: Vec<Vec<f64>> = Vec::new();
    let mut val_labels: Vec<f64> = Vec::new();
    let mut fusion_raw: Vec<(String, RawFusionRows)> = Vec::new();
    for (group, group_scores) in groups.iter().zip(&scores) {
        let mut fusion_rows = Vec::new();
        for (id, features, label) in &group.rows {
            let cnle = *group_scores.get(id).ok_or_else(|| {
                EngineError::Protocol(format!("evaluator returned no score for candidate {id}"))
            })?;
            let row = feature_row(*features, cnle);
            match group.role {
                GroupRole::Train => {
                    train_rows.push(row);
                    train_labels.push(*label);
                }
                GroupRole::Validation => {
                    val_rows.push(row.clone());
                    val_labels.push(*label);
                    fusion_rows.push((id.clone(), row));
                }
                GroupRole::Test => unreachable!("test groups are skipped"),
            }
        }
        if let Some(truth) = &group.truth_id {
            fusion_raw.push((truth.clone(), fusion_rows));
        }
    }

    if train_rows.is_empty() {
        return Err(EngineError::Data(
            "no training impressions: every impression is held out or the log has none".into(),
        ));
    }

    let (standardizer, z_train) = standardize(&train_rows)?;
    let z_val = standardizer.transform(&val_rows)?;
    let validation = if val_rows.is_empty() {
        None
    } else {
        Some((z_val.as_slice(), val_labels.as_slice()))
    };

    let opts = TrainOptions::from_config(&config.vans);
    let poly = train_poly(&z_train, &train_labels, &opts, validation)?;
    let aux = AuxiliaryParams::from_config(&config.vans);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (forest, svr) = fit_auxiliary(&z_train, &train_labels, &aux, &opts, validation, &mut rng)?;

    let mut fusion_groups = Vec::with_capacity(fusion_raw.len());
    for (truth_id, rows) in fusion_raw {
        let mut standardized = Vec::with_capacity(rows.len());
        for (id, row) in rows {
            standardized.push((id, standardizer.apply(&row)?));
        }
        fusion_groups.push(ValidationGroup {
            truth_id,
            rows: standardized,
        });
    }
    let fusion = select_fusion_weights(&poly, &forest, &svr, &fusion_groups, config.eval_k)?;

    let training = TrainingRecord {
        seed: config.seed,
        learning_rate: config.vans.learning_rate,
        l2: config.vans.l2,
        max_epochs: config.vans.max_epochs,
        patience: config.vans.patience,
        check_every: config.vans.check_every,
        trees: config.vans.trees,
        tree_depth: config.vans.tree_depth,
        svr_epsilon: config.vans.svr_epsilon,
        train_rows: train_rows.len(),
        validation_rows: val_rows.len(),
    };
    VansModel::new(
        standardizer,
        EnsembleModel {
            poly,
            forest,
            svr,
            fusion,
        },
        training,
    )
}

// ---------------------------------------------------------------------------
// Offline evaluation
// ---------------------------------------------------------------------------

/// Scores the trained model under the leave-one-out protocol: for each kept
/// user the engine ranks candidates as of the moment just before their last
/// click, and the report aggregates rank metrics over all users plus the
/// subset whose truth item survived candidate selection.
pub fn evaluate_snapshot(
    snapshot: &DatasetSnapshot,
    config: &EngineConfig,
    evaluator: &dyn Evaluate,
    model: &VansModel,
) -> Result<EvalReport> {
    config.validate()?;
    model.validate()?;
    let params = KnrsParams::from_config(&config.knrs)?;
    let credibility = load_credibility(config)?;
    let signals = PopularitySignals::build(snapshot.sequences.values());
    let split_set = leave_one_out_split(snapshot.sequences.values(), config.max_sequence_length);

    struct Pending {
        user_id: String,
        truth_id: String,
        retrieved: bool,
        candidates: Vec<ScoredCandidate>,
    }

    let mut pending: Vec<Pending> = Vec::with_capacity(split_set.splits.len());
    let mut jobs: Vec<(usize, EvaluationRequest)> = Vec::new();
    for split in &split_set.splits {
        let stored = snapshot
            .profiles
            .get(&split.user_id)
            .ok_or_else(|| EngineError::Data(format!("no profile for user {}", split.user_id)))?;
        let now = split.test.timestamp;
        let visible: Vec<&BehaviorEvent> = split
            .train
            .iter()
            .chain(std::iter::once(&split.validation))
            .collect();
        let profile = profile_at(stored, &visible, &snapshot.catalog)?;
        let recent = recent_items(&visible, config.history_cap, &snapshot.catalog);
        let candidates = select_candidates(
            &profile,
            &snapshot.catalog,
            &signals,
            &credibility,
            now,
            &recent,
            &params,
        );
        let retrieved = candidates.iter().any(|c| c.news_id == split.test.news_id);
        let unit = pending.len();
        if !candidates.is_empty() {
            let task = select_task_kind(config.cnle.task, &profile);
            let items: Vec<&NewsItem> = candidates
                .iter()
                .map(|c| {
                    snapshot.catalog.get(&c.news_id).ok_or_else(|| {
                        EngineError::Data(format!("candidate {} missing from catalog", c.news_id))
                    })
                })
                .collect::<Result<_>>()?;
            for request in chunked_requests(task, &profile, &items, &snapshot.catalog, config)? {
                jobs.push((unit, request));
            }
        }
        pending.push(Pending {
            user_id: split.user_id.clone(),
            truth_id: split.test.news_id.clone(),
            retrieved,
            candidates,
        });
    }

    let scores = score_jobs(evaluator, jobs, pending.len(), config.cnle.concurrency)?;

    let mut outcomes = Vec::with_capacity(pending.len());
    for (entry, entry_scores) in pending.into_iter().zip(scores) {
        let mut candidates = entry.candidates;
        for candidate in &mut candidates {
            candidate.cnle_score = *entry_scores.get(&candidate.news_id).ok_or_else(|| {
                EngineError::Protocol(format!(
                    "evaluator returned no score for candidate {}",
                    candidate.news_id
                ))
            })?;
        }
        let ranked = rank_candidates(model, &mut candidates)?;
        outcomes.push(UserOutcome {
            user_id: entry.user_id,
            retrieved: entry.retrieved,
            ranked,
            truth_id: entry.truth_id,
        });
    }
    build_report(&outcomes, config.eval_k, split_set.excluded)
}

// ---------------------------------------------------------------------------
// Serving
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Recommendation {
    pub news_id: String,
    pub title: String,
    pub score: f64,
}

/// Ranks fresh items for one user with the full three-stage pipeline.
/// `now` defaults to just after the newest event in the snapshot.
#[allow(clippy::too_many_arguments)]
pub fn recommend(
    snapshot: &DatasetSnapshot,
    model: &VansModel,
    config: &EngineConfig,
    evaluator: &dyn Evaluate,
    signals: &PopularitySignals,
    credibility: &CredibilityTable,
    user_id: &str,
    k: usize,
    now: Option<i64>,
) -> Result<Vec<Recommendation>> {
    let profile = snapshot
        .profiles
        .get(user_id)
        .ok_or_else(|| EngineError::NotFound(format!("user {user_id} not found")))?;
    let now = now.unwrap_or_else(|| snapshot.max_event_timestamp().map_or(0, |t| t + 1));

    let clicks: Vec<&BehaviorEvent> = profile
        .behavior_history
        .iter()
        .filter(|e| e.action == ActionKind::Clicked)
        .collect();
    let recent = recent_items(&clicks, config.history_cap, &snapshot.catalog);
    let mut candidates = select_candidates(
        profile,
        &snapshot.catalog,
        signals,
        credibility,
        now,
        &recent,
        &params_from(config)?,
    );
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let task = select_task_kind(config.cnle.task, profile);
    let items: Vec<&NewsItem> = candidates
        .iter()
        .map(|c| {
            snapshot.catalog.get(&c.news_id).ok_or_else(|| {
                EngineError::Data(format!("candidate {} missing from catalog", c.news_id))
            })
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, EvaluationRequest)> =
        chunked_requests(task, profile, &items, &snapshot.catalog, config)?
            .into_iter()
            .map(|r| (0usize, r))
            .collect();
    let scores = score_jobs(evaluator, jobs, 1, config.cnle.concurrency)?;
    for candidate in &mut candidates {
        candidate.cnle_score = *scores[0].get(&candidate.news_id).ok_or_else(|| {
            EngineError::Protocol(format!(
                "evaluator returned no score for candidate {}",
                candidate.news_id
            ))
        })?;
    }
    let ranked = rank_candidates(model, &mut candidates)?;
    let mut out = Vec::with_capacity(k.min(ranked.len()));
    for candidate in candidates.into_iter().take(k) {
        let title = snapshot
            .catalog
            .get(&candidate.news_id)
            .map(|i| i.title.clone())
            .unwrap_or_default();
        out.push(Recommendation {
            news_id: candidate.news_id,
            title,
            score: candidate.vans_prediction,
        });
    }
    Ok(out)
}

fn params_from(config: &EngineConfig) -> Result<KnrsParams> {
    KnrsParams::from_config(&config.knrs)
}

/// A loaded snapshot, model, and evaluator ready to serve recommendations,
/// with popularity signals and the credibility table prepared once.
pub struct Engine {
    snapshot: DatasetSnapshot,
    model: VansModel,
    config: EngineConfig,
    evaluator: Box<dyn Evaluate>,
    signals: PopularitySignals,
    credibility: CredibilityTable,
}

impl Engine {
    pub fn new(snapshot: DatasetSnapshot, model: VansModel, config: EngineConfig) -> Result<Self> {
        let evaluator = build_evaluator(&config)?;
        Engine::with_evaluator(snapshot, model, config, evaluator)
    }

    pub fn with_evaluator(
        snapshot: DatasetSnapshot,
        model: VansModel,
        config: EngineConfig,
        evaluator: Box<dyn Evaluate>,
    ) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        snapshot.validate()?;
        let signals = PopularitySignals::build(snapshot.sequences.values());
        let credibility = load_credibility(&config)?;
        Ok(Engine {
            snapshot,
            model,
            config,
            evaluator,
            signals,
            credibility,
        })
    }

    pub fn recommend(
        &self,
        user_id: &str,
        k: usize,
        now: Option<i64>,
    ) -> Result<Vec<Recommendation>> {
        recommend(
            &self.snapshot,
            &self.model,
            &self.config,
            self.evaluator.as_ref(),
            &self.signals,
            &self.credibility,
            user_id,
            k,
            now,
        )
    }

    pub fn snapshot(&self) -> &DatasetSnapshot {
        &self.snapshot
    }

    pub fn model(&self) -> &VansModel {
        &self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }
}
