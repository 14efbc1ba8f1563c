use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    render_feedback, score, mean_score, FeedbackReport, FidelityScore, RepairError,
    SynthesisRequest, Synthesizer, Weights,
};
use crate::candidate::{CandidateConfig, CandidateModel};
use crate::diff::{lockstep_run, EngineError, GoldenTarget, RunOptions, RunReport};
use crate::isa::Program;
use crate::SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStop {
    Converged,
    BudgetExhausted,
    NoImprovement,
}

/// One evaluated (or failed) proposal. Iteration 1 is the initial config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairIteration {
    pub iteration: u32,
    pub config: CandidateConfig,
    pub score: Option<FidelityScore>,
    pub accepted: bool,
    /// Synthesizer failure, if the iteration produced no proposal.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairHistory {
    pub schema_version: u32,
    pub synthesizer: String,
    pub iterations: Vec<RepairIteration>,
    pub stop_reason: RepairStop,
    pub final_config: CandidateConfig,
    pub final_score: FidelityScore,
}

impl RepairHistory {
    /// Aggregates of accepted iterations, in order.
    pub fn accepted_scores(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter(|i| i.accepted)
            .filter_map(|i| i.score.map(|s| s.aggregate))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepairOptions {
    /// Maximum iterations, counting the evaluation of the initial config.
    pub max_iterations: u32,
    pub weights: Weights,
    pub run: RunOptions,
}

/// Result of evaluating one config over the program set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub reports: Vec<RunReport>,
    pub score: FidelityScore,
    pub feedback: Vec<FeedbackReport>,
}

/// Runs `config` against the in-process golden reference over `programs`,
/// in parallel, returning reports in program order.
pub fn evaluate_golden(
    config: &CandidateConfig,
    programs: &[Program],
    run: &RunOptions,
) -> Result<Vec<RunReport>, EngineError> {
    programs
        .par_iter()
        .map(|p| {
            let mut reference = GoldenTarget::new();
            let mut candidate = CandidateModel::instantiate(config);
            lockstep_run(&mut reference, &mut candidate, p, run)
        })
        .collect()
}

/// Scores and renders a set of reports.
pub fn assess(reports: Vec<RunReport>, weights: &Weights) -> Result<Evaluation, RepairError> {
    let scores = reports
        .iter()
        .map(|r| score(r, None, weights))
        .collect::<Result<Vec<_>, _>>()?;
    let feedback = reports
        .iter()
        .zip(&scores)
        .map(|(r, s)| {
            let mut f = render_feedback(r);
            f.score = Some(*s);
            f
        })
        .collect();
    Ok(Evaluation {
        score: mean_score(&scores, weights),
        reports,
        feedback,
    })
}

/// Greedy repair over the golden reference.
pub fn repair_loop(
    initial: &CandidateConfig,
    synthesizer: &mut dyn Synthesizer,
    programs: &[Program],
    options: &RepairOptions,
) -> Result<(CandidateConfig, RepairHistory), RepairError> {
    let run = options.run;
    repair_loop_with(initial, synthesizer, options, &mut |c| {
        evaluate_golden(c, programs, &run)
    })
}

/// Greedy repair with a caller-supplied evaluator.
///
/// Each iteration evaluates one config. A proposal is accepted only if its
/// aggregate is strictly lower than the current one. The loop stops when
/// the current aggregate is 0, when the budget is spent, or when the
/// synthesizer repeats the current config or an already rejected one.
pub fn repair_loop_with(
    initial: &CandidateConfig,
    synthesizer: &mut dyn Synthesizer,
    options: &RepairOptions,
    evaluate: &mut dyn FnMut(&CandidateConfig) -> Result<Vec<RunReport>, EngineError>,
) -> Result<(CandidateConfig, RepairHistory), RepairError> {
    if options.max_iterations == 0 {
        return Err(RepairError::InvalidBudget);
    }
    options.weights.validate()?;
    let mut current = initial.clone();
    let mut eval = assess(evaluate(&current)?, &options.weights)?;
    let mut iterations = vec![RepairIteration {
        iteration: 1,
        config: current.clone(),
        score: Some(eval.score),
        accepted: true,
        error: None,
    }];
    let mut next_version = current.version + 1;
    let mut rejected: Vec<CandidateConfig> = Vec::new();

    let stop = loop {
        if eval.score.is_perfect() {
            break RepairStop::Converged;
        }
        if iterations.len() as u32 >= options.max_iterations {
            break RepairStop::BudgetExhausted;
        }
        let iteration = iterations.len() as u32 + 1;
        let request = SynthesisRequest {
            schema_version: SCHEMA_VERSION,
            iteration,
            config: current.clone(),
            score: eval.score,
            feedback: eval.feedback.clone(),
            rejected: rejected.clone(),
        };
        let mut proposal = match synthesizer.propose(&request) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("iteration {iteration}: {e}");
                iterations.push(RepairIteration {
                    iteration,
                    config: current.clone(),
                    score: None,
                    accepted: false,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let repeat = proposal.same_knobs(&current) || rejected.iter().any(|r| r.same_knobs(&proposal));
        proposal.version = next_version;
        next_version += 1;
        let candidate_eval = assess(evaluate(&proposal)?, &options.weights)?;
        let accepted = candidate_eval.score.aggregate < eval.score.aggregate;
        iterations.push(RepairIteration {
            iteration,
            config: proposal.clone(),
            score: Some(candidate_eval.score),
            accepted,
            error: None,
        });
        if accepted {
            current = proposal;
            eval = candidate_eval;
            rejected.clear();
        } else {
            rejected.push(proposal);
            if repeat {
                break RepairStop::NoImprovement;
            }
        }
    };
    let history = RepairHistory {
        schema_version: SCHEMA_VERSION,
        synthesizer: synthesizer.describe(),
        iterations,
        stop_reason: stop,
        final_config: current.clone(),
        final_score: eval.score,
    };
    Ok((current, history))
}
