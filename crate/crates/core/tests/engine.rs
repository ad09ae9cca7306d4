//! The library surface as an external consumer uses it: parse TSV logs,
//! persist and reload the snapshot and the model, train, evaluate, and
//! answer recommendation queries through the `Engine` facade.

use cherryrec_core::cnle::mock::MockEvaluator;
use cherryrec_core::ingest::{ingest_dataset, DatasetSnapshot};
use cherryrec_core::model::ActionKind;
use cherryrec_core::pipeline::{evaluate_snapshot, train, Engine};
use cherryrec_core::synth::{generate, SynthSpec};
use cherryrec_core::vans::VansModel;
use cherryrec_core::EngineConfig;

fn spec() -> SynthSpec {
    SynthSpec {
        users: 18,
        news: 150,
        categories: 6,
        impressions_per_user: 6,
        shown_per_impression: 4,
        seed: 3,
    }
}

fn config() -> EngineConfig {
    let mut cfg = EngineConfig::default();
    // ~360 training rows; the summed loss needs a step sized to the corpus.
    cfg.vans.learning_rate = 3e-5;
    cfg
}

#[test]
fn logs_to_recommendations_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&spec()).unwrap();
    let (news, behaviors, roles) = corpus.write_to_dir(&dir.path().join("logs")).unwrap();

    // Ingest with 1-core filtering, then round-trip the snapshot through disk.
    let snapshot = ingest_dataset(&news, &behaviors, Some(&roles), 1).unwrap();
    assert_eq!(snapshot.info.stats.behavior_rows, 18 * 6);
    let snap_dir = dir.path().join("snap");
    snapshot.save(&snap_dir).unwrap();
    let snapshot = DatasetSnapshot::load(&snap_dir).unwrap();
    assert_eq!(snapshot.profiles.len(), 18);
    assert_eq!(snapshot.sequences.len(), 18);

    // Train, persist, reload: the model must survive disk unchanged.
    let cfg = config();
    let model = train(&snapshot, &cfg, &MockEvaluator).unwrap();
    let model_dir = dir.path().join("model");
    model.save(&model_dir).unwrap();
    let model = VansModel::load_dir(&model_dir).unwrap();
    assert!(model.training.train_rows > 0);

    // The offline report covers every user with enough history.
    let report = evaluate_snapshot(&snapshot, &cfg, &MockEvaluator, &model).unwrap();
    assert_eq!(report.k, cfg.eval_k);
    assert_eq!(report.users, 18);
    assert_eq!(report.excluded, 0);
    for value in [
        report.overall.mrr,
        report.overall.ndcg,
        report.overall.recall,
    ] {
        assert!(
            (0.0..=1.0).contains(&value),
            "metric {value} outside [0, 1]"
        );
    }

    // Serve recommendations through the facade.
    let user_id = snapshot.profiles.keys().next().unwrap().clone();
    let clicked: Vec<String> = snapshot.profiles[&user_id]
        .behavior_history
        .iter()
        .filter(|e| e.action == ActionKind::Clicked)
        .map(|e| e.news_id.clone())
        .collect();
    let engine = Engine::new(snapshot, model, cfg).unwrap();

    let recs = engine.recommend(&user_id, 5, None).unwrap();
    assert!(!recs.is_empty() && recs.len() <= 5);
    for pair in recs.windows(2) {
        assert!(
            pair[0].score >= pair[1].score,
            "scores must be non-increasing"
        );
    }
    for rec in &recs {
        assert!(
            !clicked.contains(&rec.news_id),
            "{} was already read",
            rec.news_id
        );
        assert!(engine.snapshot().catalog.get(&rec.news_id).is_some());
    }

    // Identical queries answer identically.
    let repeat = engine.recommend(&user_id, 5, None).unwrap();
    assert_eq!(
        serde_json::to_string(&recs).unwrap(),
        serde_json::to_string(&repeat).unwrap()
    );

    // Unknown readers are a NotFound error, not a panic or an empty list.
    assert!(matches!(
        engine.recommend("nobody", 5, None),
        Err(cherryrec_core::EngineError::NotFound(_))
    ));
}
