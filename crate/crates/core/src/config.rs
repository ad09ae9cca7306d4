//! Engine configuration: defaults, strict key = value parsing, validation.

use std::path::{Path, PathBuf};

use crate::cnle::TaskKind;
use crate::{EngineError, Result};

/// Environment variable consulted when no explicit config path is given.
pub const ENV_CONFIG: &str = "CHERRYREC_CONFIG";

/// The config file format version this build understands.
pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub seed: u64,
    /// Most recent clicked items considered as history context.
    pub history_cap: usize,
    /// Whitespace-token cap applied to titles in prompts and requests.
    pub title_token_cap: usize,
    /// Cutoff k for offline evaluation metrics.
    pub eval_k: usize,
    /// Clicked-sequence length cap applied at split time.
    pub max_sequence_length: usize,
    pub knrs: KnrsConfig,
    pub cnle: CnleConfig,
    pub vans: VansConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnrsConfig {
    /// Weights for the five value features, in feature order.
    pub weights: [f64; 5],
    pub half_life_hours: f64,
    pub smoothing: f64,
    pub keep_fraction: f64,
    pub top_k: usize,
    /// Sliding window over which popularity counters are aggregated.
    pub popularity_window_hours: f64,
    /// Optional TSV mapping source → credibility score.
    pub credibility_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatorKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackKind {
    None,
    Mock,
}

/// How the prompt task kind is chosen per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelection {
    /// Behavioral by default; interest_role when the profile has a role.
    Auto,
    /// Always request this kind (collection_focus still falls back to
    /// behavioral when the user has no bookmarks).
    Fixed(TaskKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnleConfig {
    pub evaluator: EvaluatorKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Maximum in-flight remote requests during batch evaluation.
    pub concurrency: usize,
    pub fallback: FallbackKind,
    pub task: TaskSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VansConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Non-improving validation checks tolerated before early stop.
    pub patience: usize,
    /// Epochs between validation checks.
    pub check_every: usize,
    pub trees: usize,
    pub tree_depth: usize,
    pub svr_epsilon: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 42,
            history_cap: 20,
            title_token_cap: 32,
            eval_k: 5,
            max_sequence_length: 400,
            knrs: KnrsConfig {
                weights: [0.2; 5],
                half_life_hours: 24.0,
                smoothing: 10.0,
                keep_fraction: 0.05,
                top_k: 20,
                popularity_window_hours: 168.0,
                credibility_table: None,
            },
            cnle: CnleConfig {
                evaluator: EvaluatorKind::Mock,
                endpoint: None,
                timeout_ms: 10_000,
                retries: 3,
                concurrency: 4,
                fallback: FallbackKind::None,
                task: TaskSelection::Auto,
            },
            vans: VansConfig {
                learning_rate: 0.001,
                l2: 0.01,
                max_epochs: 500,
                patience: 20,
                check_every: 50,
                trees: 16,
                tree_depth: 4,
                svr_epsilon: 0.1,
            },
        }
    }
}

impl std::str::FromStr for EngineConfig {
    type Err = EngineError;

    /// Parses a `key = value` config file body. Unknown keys and a missing
    /// or unsupported `config_version` are rejected.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        let mut saw_version = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                EngineError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(EngineError::Config(format!(
                    "line {}: empty value for {key}",
                    lineno + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| EngineError::Config(format!("line {}: {e}", lineno + 1)))?;
            if key == "config_version" {
                saw_version = true;
            }
        }
        if !saw_version {
            return Err(EngineError::Config(
                "missing required key config_version".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EngineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(EngineError::io(format!(
            "reading config {}",
            path.display()
        )))?;
        text.parse()
    }

    /// Resolves the effective config: explicit path, then `CHERRYREC_CONFIG`,
    /// then built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(path) = explicit {
            return EngineConfig::from_file(path);
        }
        if let Ok(env_path) = std::env::var(ENV_CONFIG) {
            if !env_path.is_empty() {
                return EngineConfig::from_file(Path::new(&env_path));
            }
        }
        Ok(EngineConfig::default())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        match key {
            "config_version" => {
                let v: u64 = num(key, value)?;
                if v != CONFIG_VERSION {
                    return Err(format!(
                        "unsupported config_version {v} (expected {CONFIG_VERSION})"
                    ));
                }
            }
            "seed" => self.seed = num(key, value)?,
            "history_cap" => self.history_cap = num(key, value)?,
            "title_token_cap" => self.title_token_cap = num(key, value)?,
            "eval_k" => self.eval_k = num(key, value)?,
            "max_sequence_length" => self.max_sequence_length = num(key, value)?,
            "knrs_w1" => self.knrs.weights[0] = num(key, value)?,
            "knrs_w2" => self.knrs.weights[1] = num(key, value)?,
            "knrs_w3" => self.knrs.weights[2] = num(key, value)?,
            "knrs_w4" => self.knrs.weights[3] = num(key, value)?,
            "knrs_w5" => self.knrs.weights[4] = num(key, value)?,
            "knrs_half_life_hours" => self.knrs.half_life_hours = num(key, value)?,
            "knrs_smoothing" => self.knrs.smoothing = num(key, value)?,
            "knrs_keep_fraction" => self.knrs.keep_fraction = num(key, value)?,
            "knrs_top_k" => self.knrs.top_k = num(key, value)?,
            "knrs_popularity_window_hours" => self.knrs.popularity_window_hours = num(key, value)?,
            "knrs_credibility_table" => self.knrs.credibility_table = Some(PathBuf::from(value)),
            "cnle_evaluator" => {
                self.cnle.evaluator = match value {
                    "mock" => EvaluatorKind::Mock,
                    "remote" => EvaluatorKind::Remote,
                    other => return Err(format!("invalid cnle_evaluator {other:?}")),
                }
            }
            "cnle_endpoint" => self.cnle.endpoint = Some(value.to_string()),
            "cnle_timeout_ms" => self.cnle.timeout_ms = num(key, value)?,
            "cnle_retries" => self.cnle.retries = num(key, value)?,
            "cnle_concurrency" => self.cnle.concurrency = num(key, value)?,
            "cnle_fallback" => {
                self.cnle.fallback = match value {
                    "none" => FallbackKind::None,
                    "mock" => FallbackKind::Mock,
                    other => return Err(format!("invalid cnle_fallback {other:?}")),
                }
            }
            "cnle_task" => {
                self.cnle.task = match value {
                    "auto" => TaskSelection::Auto,
                    other => TaskSelection::Fixed(
                        TaskKind::from_wire(other)
                            .ok_or_else(|| format!("invalid cnle_task {other:?}"))?,
                    ),
                }
            }
            "vans_learning_rate" => self.vans.learning_rate = num(key, value)?,
            "vans_l2" => self.vans.l2 = num(key, value)?,
            "vans_max_epochs" => self.vans.max_epochs = num(key, value)?,
            "vans_patience" => self.vans.patience = num(key, value)?,
            "vans_check_every" => self.vans.check_every = num(key, value)?,
            "vans_trees" => self.vans.trees = num(key, value)?,
            "vans_tree_depth" => self.vans.tree_depth = num(key, value)?,
            "vans_svr_epsilon" => self.vans.svr_epsilon = num(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(EngineError::Config(msg));
        let k = &self.knrs;
        if k.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return err("knrs weights must be finite and non-negative".into());
        }
        if k.weights.iter().all(|w| *w == 0.0) {
            return err("at least one knrs weight must be positive".into());
        }
        if !(k.keep_fraction > 0.0 && k.keep_fraction <= 1.0) {
            return err(format!(
                "knrs_keep_fraction must be in (0, 1], got {}",
                k.keep_fraction
            ));
        }
        if k.top_k == 0 {
            return err("knrs_top_k must be at least 1".into());
        }
        if !(k.half_life_hours.is_finite() && k.half_life_hours > 0.0) {
            return err("knrs_half_life_hours must be positive".into());
        }
        if !(k.smoothing.is_finite() && k.smoothing >= 0.0) {
            return err("knrs_smoothing must be non-negative".into());
        }
        if !(k.popularity_window_hours.is_finite() && k.popularity_window_hours > 0.0) {
            return err("knrs_popularity_window_hours must be positive".into());
        }
        let c = &self.cnle;
        if c.evaluator == EvaluatorKind::Remote && c.endpoint.is_none() {
            return err("cnle_evaluator = remote requires cnle_endpoint".into());
        }
        if c.timeout_ms == 0 {
            return err("cnle_timeout_ms must be positive".into());
        }
        if c.concurrency == 0 {
            return err("cnle_concurrency must be at least 1".into());
        }
        let v = &self.vans;
        if !(v.learning_rate > 0.0 && v.learning_rate.is_finite()) {
            return err("vans_learning_rate must be positive".into());
        }
        if !(v.l2 >= 0.0 && v.l2.is_finite()) {
            return err("vans_l2 must be non-negative".into());
        }
        if v.max_epochs == 0 || v.check_every == 0 || v.trees == 0 {
            return err(
                "vans_max_epochs, vans_check_every and vans_trees must be at least 1".into(),
            );
        }
        if !(v.svr_epsilon.is_finite() && v.svr_epsilon >= 0.0) {
            return err("vans_svr_epsilon must be non-negative".into());
        }
        if self.history_cap == 0 || self.title_token_cap == 0 || self.eval_k == 0 {
            return err("history_cap, title_token_cap and eval_k must be at least 1".into());
        }
        if self.max_sequence_length < 3 {
            return err("max_sequence_length must be at least 3".into());
        }
        Ok(())
    }
}
