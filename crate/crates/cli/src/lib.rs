//! Command implementations and HTTP servers behind the `cherryrec` binary.

pub mod commands;
pub mod mock_llm;
pub mod serve;

/// Process exit codes: 0 success, 1 usage, 2 bad input data, 3 runtime.
pub fn exit_code(error: &cherryrec_core::EngineError) -> i32 {
    use cherryrec_core::EngineError::*;
    match error {
        Config(_) | Data(_) | NotFound(_) => 2,
        Protocol(_) | Evaluator(_) | Training(_) | Contract(_) | Io { .. } => 3,
    }
}
