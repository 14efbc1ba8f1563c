use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScoringError;
use crate::diff::{Field, RunReport};
use crate::isa::TraceEvent;
use crate::SCHEMA_VERSION;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Per-dimension weights. Nonnegative and summing to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub register_trace_delta: f64,
    pub memory_trace_delta: f64,
    pub timing_deviation: f64,
    pub state_transition_mismatch: f64,
    pub fault_response_divergence: f64,
    pub resource_profile_delta: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights::from_array([1.0 / 6.0; 6])
    }
}

#[derive(Deserialize)]
struct WeightsDoc {
    schema_version: u32,
    #[serde(flatten)]
    weights: Weights,
}

impl Weights {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.register_trace_delta,
            self.memory_trace_delta,
            self.timing_deviation,
            self.state_transition_mismatch,
            self.fault_response_divergence,
            self.resource_profile_delta,
        ]
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        Weights {
            register_trace_delta: w[0],
            memory_trace_delta: w[1],
            timing_deviation: w[2],
            state_transition_mismatch: w[3],
            fault_response_divergence: w[4],
            resource_profile_delta: w[5],
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let w = self.to_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ScoringError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(ScoringError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Reads a TOML document with `schema_version` and the six weights.
    pub fn from_toml(text: &str) -> Result<Self, ScoringError> {
        let doc: WeightsDoc =
            toml::from_str(text).map_err(|e| ScoringError::InvalidWeights(e.message().to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(ScoringError::InvalidWeights(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        doc.weights.validate()?;
        Ok(doc.weights)
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScoringError::InvalidWeights(format!("{}: {e}", path.display())))?;
        Weights::from_toml(&text)
    }

    /// The weights with the fault dimension's share spread proportionally
    /// over the others. All-zero if nothing else carries weight.
    fn without_fault(self) -> Self {
        let mut w = self.to_array();
        let rest = 1.0 - w[4];
        w[4] = 0.0;
        if rest <= 0.0 {
            return Weights::from_array([0.0; 6]);
        }
        for x in w.iter_mut() {
            *x /= rest;
        }
        Weights::from_array(w)
    }
}

/// Per-dimension divergence in [0, 1] and their weighted sum. 0 is a
/// perfect match.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub register_trace_delta: f64,
    pub memory_trace_delta: f64,
    pub timing_deviation: f64,
    pub state_transition_mismatch: f64,
    pub fault_response_divergence: f64,
    pub resource_profile_delta: f64,
    pub aggregate: f64,
    /// Weights actually applied, after any redistribution.
    pub weights: Weights,
}

impl FidelityScore {
    pub fn dimensions(&self) -> [f64; 6] {
        [
            self.register_trace_delta,
            self.memory_trace_delta,
            self.timing_deviation,
            self.state_transition_mismatch,
            self.fault_response_divergence,
            self.resource_profile_delta,
        ]
    }

    fn from_dimensions(d: [f64; 6], weights: Weights) -> Self {
        let aggregate = d
            .iter()
            .zip(weights.to_array())
            .map(|(d, w)| d * w)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        FidelityScore {
            register_trace_delta: d[0],
            memory_trace_delta: d[1],
            timing_deviation: d[2],
            state_transition_mismatch: d[3],
            fault_response_divergence: d[4],
            resource_profile_delta: d[5],
            aggregate,
            weights,
        }
    }

    pub fn is_perfect(&self) -> bool {
        self.aggregate == 0.0
    }
}

fn ratio(count: u64, opportunities: u64) -> f64 {
    (count as f64 / opportunities.max(1) as f64).min(1.0)
}

fn relative_difference(a: u64, b: u64) -> f64 {
    a.abs_diff(b) as f64 / a.max(b).max(1) as f64
}

fn resource_profile(trace: &[TraceEvent]) -> (u64, u64) {
    let executed = trace.iter().filter(|e| e.executed).count() as u64;
    let footprint: BTreeSet<u32> = trace
        .iter()
        .flat_map(|e| e.mem_writes.iter().map(|w| w.addr))
        .collect();
    (executed, footprint.len() as u64)
}

/// Scores one run.
///
/// Opportunity counts per step: 16 register cells (R0..R14 and pc), one
/// memory cell per step, and 6 transition cells (four flags, pc, fault).
/// Without `fault_divergence` the fault dimension is 0 and its weight is
/// redistributed.
pub fn score(
    report: &RunReport,
    fault_divergence: Option<f64>,
    weights: &Weights,
) -> Result<FidelityScore, ScoringError> {
    weights.validate()?;
    let (mut regs, mut mem, mut transitions) = (0u64, 0u64, 0u64);
    for d in &report.discrepancies {
        match d.field {
            Field::Reg(_) => regs += 1,
            Field::Pc => {
                regs += 1;
                transitions += 1;
            }
            Field::Memory(_) => mem += 1,
            Field::Flag(_) | Field::Fault => transitions += 1,
        }
    }
    let steps = report.steps;
    let (ref_exec, ref_foot) = resource_profile(&report.reference_trace);
    let (cand_exec, cand_foot) = resource_profile(&report.candidate_trace);
    let resource =
        (relative_difference(ref_exec, cand_exec) + relative_difference(ref_foot, cand_foot)) / 2.0;
    let (fault, weights) = match fault_divergence {
        Some(f) => (f.clamp(0.0, 1.0), *weights),
        None => (0.0, weights.without_fault()),
    };
    Ok(FidelityScore::from_dimensions(
        [
            ratio(regs, steps * 16),
            ratio(mem, steps),
            report.metrics.timing_deviation.clamp(0.0, 1.0),
            ratio(transitions, steps * 6),
            fault,
            resource,
        ],
        weights,
    ))
}

/// Dimension-wise mean over a program set. An empty set scores 0.
pub fn mean_score(scores: &[FidelityScore], weights: &Weights) -> FidelityScore {
    let Some(first) = scores.first() else {
        return FidelityScore::from_dimensions([0.0; 6], *weights);
    };
    let mut d = [0.0; 6];
    for s in scores {
        for (acc, x) in d.iter_mut().zip(s.dimensions()) {
            *acc += x;
        }
    }
    let n = scores.len() as f64;
    for x in d.iter_mut() {
        *x /= n;
    }
    let mut mean = FidelityScore::from_dimensions(d, first.weights);
    mean.aggregate = scores.iter().map(|s| s.aggregate).sum::<f64>() / n;
    mean
}

/// Scores each report and averages.
pub fn score_set(
    reports: &[RunReport],
    fault_divergence: Option<f64>,
    weights: &Weights,
) -> Result<FidelityScore, ScoringError> {
    weights.validate()?;
    let scores = reports
        .iter()
        .map(|r| score(r, fault_divergence, weights))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_score(&scores, weights))
}
