//! Batch subcommands: ingest, train, eval, recommend.

use std::fs;
use std::path::{Path, PathBuf};

use cherryrec_core::config::EngineConfig;
use cherryrec_core::ingest::{ingest_dataset, DatasetSnapshot};
use cherryrec_core::pipeline::{build_evaluator, evaluate_snapshot, train, Engine};
use cherryrec_core::vans::VansModel;
use cherryrec_core::{EngineError, Result};

pub struct IngestOpts<'a> {
    pub news: &'a Path,
    pub behaviors: &'a Path,
    pub roles: Option<&'a Path>,
    pub k_core: usize,
    pub out: &'a Path,
}

/// Parses raw TSV logs into a validated snapshot directory and prints the
/// resulting manifest to stdout.
pub fn run_ingest(opts: &IngestOpts) -> Result<()> {
    let snapshot = ingest_dataset(opts.news, opts.behaviors, opts.roles, opts.k_core)?;
    fs::create_dir_all(opts.out)
        .map_err(EngineError::io(format!("creating {}", opts.out.display())))?;
    snapshot.save(opts.out)?;
    let manifest = serde_json::to_string_pretty(&snapshot.info)
        .map_err(|e| EngineError::Data(format!("serializing manifest: {e}")))?;
    println!("{manifest}");
    Ok(())
}

/// Fits the scoring stage on a snapshot and writes the model file.
pub fn run_train(data: &Path, out: &Path, config: &EngineConfig) -> Result<()> {
    let snapshot = DatasetSnapshot::load(data)?;
    let evaluator = build_evaluator(config)?;
    let model = train(&snapshot, config, evaluator.as_ref())?;
    fs::create_dir_all(out).map_err(EngineError::io(format!("creating {}", out.display())))?;
    let path = model.save(out)?;
    let record = serde_json::to_string_pretty(&model.training)
        .map_err(|e| EngineError::Data(format!("serializing training record: {e}")))?;
    log::info!("model written to {}", path.display());
    println!("{record}");
    Ok(())
}

/// Runs the leave-one-out evaluation and prints (or writes) the report.
pub fn run_eval(
    data: &Path,
    model_dir: &Path,
    out: Option<&Path>,
    config: &EngineConfig,
) -> Result<()> {
    let snapshot = DatasetSnapshot::load(data)?;
    let model = VansModel::load_dir(model_dir)?;
    let evaluator = build_evaluator(config)?;
    let report = evaluate_snapshot(&snapshot, config, evaluator.as_ref(), &model)?;
    let body = report.to_json()?;
    match out {
        Some(path) => {
            fs::write(path, &body).map_err(EngineError::io(format!(
                "writing report {}",
                path.display()
            )))?;
            log::info!("report written to {}", path.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

pub struct RecommendOpts<'a> {
    pub data: &'a Path,
    pub model_dir: &'a Path,
    pub user_id: &'a str,
    pub k: usize,
    pub now: Option<i64>,
}

/// Prints the top-k recommendations for one user as a JSON array.
pub fn run_recommend(opts: &RecommendOpts, config: &EngineConfig) -> Result<()> {
    if opts.k == 0 {
        return Err(EngineError::Config("k must be at least 1".into()));
    }
    let engine = load_engine(opts.data, opts.model_dir, config.clone())?;
    let recommendations = engine.recommend(opts.user_id, opts.k, opts.now)?;
    let body = serde_json::to_string_pretty(&recommendations)
        .map_err(|e| EngineError::Data(format!("serializing recommendations: {e}")))?;
    println!("{body}");
    Ok(())
}

/// Loads snapshot + model into a ready-to-serve engine.
pub fn load_engine(data: &Path, model_dir: &Path, config: EngineConfig) -> Result<Engine> {
    let snapshot = DatasetSnapshot::load(data)?;
    let model = VansModel::load_dir(model_dir)?;
    Engine::new(snapshot, model, config)
}

/// Resolves the engine config from an explicit path or the environment.
pub fn resolve_config(explicit: Option<&PathBuf>) -> Result<EngineConfig> {
    EngineConfig::resolve(explicit.map(|p| p.as_path()))
}
