//! cherryrec-core: a two-stage news recommendation engine.
//!
//! The engine runs three stages over a frozen dataset snapshot:
//!
//! 1. **KnRS** (Knowledge-aware News Rapid Selector) — scores every candidate
//!    with five cheap value features, drops the bottom 95%, and keeps the
//!    top 20.
//! 2. **CnLE** (Content-aware News LLM Evaluator) — renders a prompt per task
//!    kind and obtains a per-candidate preference score, either from the
//!    deterministic in-process mock or from a remote server speaking the
//!    `cnle/1` wire protocol.
//! 3. **VaNS** (Value-aware News Scorer) — standardizes the six features,
//!    applies a trained polynomial regressor plus two auxiliary learners,
//!    fuses them with simplex weights into the CherryRec score, and ranks.
//!
//! [`pipeline`] wires the stages together for serving, training, and the
//! leave-one-out offline evaluation protocol implemented in [`eval`].

pub mod cnle;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod knrs;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod text;
pub mod vans;

pub use config::EngineConfig;
pub use error::EngineError;

pub type Result<T> = std::result::Result<T, EngineError>;
