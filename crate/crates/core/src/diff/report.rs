use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Discrepancy, FieldMask, TraceDeltaMetrics};
use crate::candidate::CandidateConfig;
use crate::isa::{FaultKind, ProgramId, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    FailFast,
    RunToBudget,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// The reference reached the program's exit address.
    Completed,
    BudgetExhausted,
    /// Fail-fast stop after the step with index `seq`.
    FirstDivergence { seq: u64 },
    /// A side faulted at `seq`; both sides are stopped there.
    Error {
        seq: u64,
        reference: Option<FaultKind>,
        candidate: Option<FaultKind>,
    },
}

/// Everything a lockstep run observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub program: ProgramId,
    pub candidate: CandidateConfig,
    pub budget: u64,
    pub mode: RunMode,
    pub mask: FieldMask,
    /// Step indices processed, including one that faulted.
    pub steps: u64,
    /// Ordered by (seq, field).
    pub discrepancies: Vec<Discrepancy>,
    pub reference_trace: Vec<TraceEvent>,
    pub candidate_trace: Vec<TraceEvent>,
    pub stop_reason: StopReason,
    pub metrics: TraceDeltaMetrics,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn first_discrepancy(&self) -> Option<&Discrepancy> {
        self.discrepancies.first()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Line-delimited form: a header record, one record per trace event
    /// (reference first, then candidate), and a footer with the outcome.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![json!({
            "record": "header",
            "schema_version": self.schema_version,
            "program": self.program,
            "candidate": self.candidate,
            "budget": self.budget,
            "mode": self.mode,
            "mask": self.mask,
        })];
        for (side, trace) in [
            ("reference", &self.reference_trace),
            ("candidate", &self.candidate_trace),
        ] {
            for ev in trace {
                lines.push(json!({ "record": "event", "side": side, "event": ev }));
            }
        }
        lines.push(json!({
            "record": "footer",
            "schema_version": self.schema_version,
            "steps": self.steps,
            "stop_reason": self.stop_reason,
            "discrepancies": self.discrepancies,
            "metrics": self.metrics,
        }));
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}
