//! Fidelity scoring, repair feedback and the repair loop.

mod feedback;
mod repair;
mod score;
mod synth;

use std::time::Duration;

use thiserror::Error;

use crate::diff::EngineError;

pub use feedback::{
    render_feedback, render_feedback_capped, FeedbackEntry, FeedbackReport, DEFAULT_FEEDBACK_CAP,
};
pub use repair::{
    assess, evaluate_golden, repair_loop, repair_loop_with, Evaluation, RepairHistory,
    RepairIteration, RepairOptions, RepairStop,
};
pub use score::{mean_score, score, score_set, FidelityScore, Weights};
pub use synth::{
    suspects, BuiltinSynthesizer, ExternalSynthesizer, SynthesisRequest, Synthesizer,
    DEFAULT_SYNTH_TIMEOUT, SYNTH_TIMEOUT_ENV,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// A synthesizer produced no usable proposal.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SynthesizerError {
    #[error("synthesizer timed out after {0:?}")]
    Timeout(Duration),
    #[error("synthesizer exited with {0}")]
    ExitStatus(String),
    #[error("malformed proposal: {0}")]
    Malformed(String),
    #[error("cannot run synthesizer: {0}")]
    Spawn(String),
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("repair budget must be at least 1")]
    InvalidBudget,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
