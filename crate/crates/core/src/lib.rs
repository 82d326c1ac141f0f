//! Autonomous-parking reinforcement-learning workbench.
//!
//! A self-contained desk-scale simulator and trainer for the fixed-slot
//! parking task: a kinematic bicycle vehicle with raycast range sensors,
//! three reward strategies (goal-only, dense proximity, milestone-augmented),
//! an on-policy clipped-surrogate trainer and an off-policy soft-Q trainer,
//! plus deployment metrics and Welch/Cohen statistics for comparing runs.
//!
//! Everything is double precision and deterministic: a run is fully
//! determined by its config file and master seed.

pub mod env;
pub mod evalstats;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod offpom;
pub mod onpom;
pub mod rewards;
pub mod rng;
pub mod vehicle;

use thiserror::Error;

// The training loops allocate large short-lived batch buffers; the default
// glibc allocator round-trips those through mmap, which dominates the
// off-policy update at batch size 512.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad layout / experiment configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Non-finite or otherwise unusable action.
    #[error("invalid action: {0}")]
    InvalidAction(String),
    /// API misuse (e.g. stepping a finished episode).
    #[error("usage error: {0}")]
    Usage(String),
    /// Mismatched tensor / array shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A loss or target became non-finite; the update was aborted.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Degenerate statistical input (e.g. two zero-variance series).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// A rollout worker failed; carries the environment instance id.
    #[error("worker {instance} failed: {msg}")]
    Worker { instance: u64, msg: String },
    /// Parse failure in a metrics/trace file, with 1-based line number.
    #[error("parse error in {file} at line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
