use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{FeedbackEntry, FeedbackReport, FidelityScore, SynthesizerError};
use crate::candidate::{CandidateConfig, Knob};
use crate::diff::Field;
use crate::isa::{decode, Condition, Op, Operand2};
use crate::SCHEMA_VERSION;

/// Default per-iteration limit for an external synthesizer.
pub const DEFAULT_SYNTH_TIMEOUT: Duration = Duration::from_secs(30);

/// Environment variable overriding [`DEFAULT_SYNTH_TIMEOUT`], in seconds.
pub const SYNTH_TIMEOUT_ENV: &str = "HARNESS_SYNTH_TIMEOUT_SECS";

/// What a synthesizer is given each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub schema_version: u32,
    pub iteration: u32,
    pub config: CandidateConfig,
    pub score: FidelityScore,
    /// One report per program, in program-set order.
    pub feedback: Vec<FeedbackReport>,
    /// Proposals already rejected for `config`.
    pub rejected: Vec<CandidateConfig>,
}

impl SynthesisRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthesizerError> {
        let req: SynthesisRequest =
            serde_json::from_str(text).map_err(|e| SynthesizerError::Malformed(e.to_string()))?;
        if req.schema_version != SCHEMA_VERSION {
            return Err(SynthesizerError::Malformed(format!(
                "unsupported schema_version {}",
                req.schema_version
            )));
        }
        Ok(req)
    }
}

/// Proposes a revised candidate configuration.
pub trait Synthesizer {
    fn propose(&mut self, request: &SynthesisRequest) -> Result<CandidateConfig, SynthesizerError>;

    fn describe(&self) -> String;
}

/// Knobs that could explain `entry`, most likely first.
pub fn suspects(entry: &FeedbackEntry) -> Vec<Knob> {
    let Ok(instr) = decode(entry.instr_word) else {
        return vec![Knob::PcStep8, Knob::BranchOffsetOffBy4, Knob::CondEqNeSwapped];
    };
    let eq_ne = matches!(instr.cond, Condition::Eq | Condition::Ne);
    let mut out = Vec::new();
    if eq_ne {
        out.push(Knob::CondEqNeSwapped);
    }
    match (entry.field, instr.op) {
        (Field::Flag(_), Op::DataProc { set_flags: false, .. }) => {
            out.push(Knob::FlagsUpdatedOnNonSOps)
        }
        (Field::Flag(flag), Op::DataProc { op, operand2, .. }) => {
            out.extend(
                [
                    Knob::CmpSkipsNUpdate,
                    Knob::CarryInverted,
                    Knob::OverflowAlwaysClear,
                    Knob::ZFromLowByteOnly,
                ]
                .into_iter()
                .filter(|k| k.touches_flags_of(op) && flag_of(*k) == flag),
            );
            if matches!(operand2, Operand2::Imm { .. }) {
                out.push(Knob::ImmRotateIgnored);
            }
            out.push(Knob::ResetSkipsRegfile);
        }
        (Field::Reg(n), _) if instr.destination().map(|r| r.index()) != Some(n as usize) => {
            out.push(Knob::ResetSkipsRegfile)
        }
        (Field::Reg(_), Op::Mem { .. }) => {
            out.extend([Knob::LdrSignExtendsHalfword, Knob::ResetSkipsRegfile])
        }
        (Field::Reg(_), Op::DataProc { operand2, .. }) => {
            if matches!(operand2, Operand2::Imm { .. }) {
                out.push(Knob::ImmRotateIgnored);
            }
            out.push(Knob::ResetSkipsRegfile);
        }
        (Field::Pc, Op::Branch { .. }) => out.push(Knob::BranchOffsetOffBy4),
        (Field::Pc, Op::BranchExchange { .. }) => out.push(Knob::ResetSkipsRegfile),
        (Field::Pc, _) => out.push(Knob::PcStep8),
        (Field::Memory(_), Op::Mem { load: false, .. }) => {
            out.extend([Knob::StrWritesBigEndian, Knob::ResetSkipsRegfile])
        }
        (Field::Fault, _) => out.extend([
            Knob::PcStep8,
            Knob::BranchOffsetOffBy4,
            Knob::ResetSkipsRegfile,
        ]),
        _ => {}
    }
    out
}

fn flag_of(knob: Knob) -> crate::isa::Flag {
    use crate::isa::Flag;
    match knob {
        Knob::CmpSkipsNUpdate => Flag::N,
        Knob::CarryInverted => Flag::C,
        Knob::OverflowAlwaysClear => Flag::V,
        _ => Flag::Z,
    }
}

/// Deterministic stand-in for a generative synthesizer.
///
/// Looks at the earliest discrepancy of each diverging program in turn and
/// clears the first active suspect whose removal has not already been
/// rejected. If no suspect qualifies it clears the first such active knob
/// in catalog order. Empty feedback returns the config unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinSynthesizer;

impl BuiltinSynthesizer {
    pub fn propose_for(request: &SynthesisRequest) -> CandidateConfig {
        let config = &request.config;
        let open = |k: Knob| {
            config.is_active(k)
                && !request
                    .rejected
                    .iter()
                    .any(|r| r.same_knobs(&config.flipped(k)))
        };
        let mut any_feedback = false;
        for report in &request.feedback {
            let Some(first) = report.entries.first() else {
                continue;
            };
            any_feedback = true;
            if let Some(k) = suspects(first).into_iter().find(|k| open(*k)) {
                return config.flipped(k);
            }
        }
        if !any_feedback {
            return config.clone();
        }
        match Knob::ALL.iter().copied().find(|k| open(*k)) {
            Some(k) => config.flipped(k),
            None => config.clone(),
        }
    }
}

impl Synthesizer for BuiltinSynthesizer {
    fn propose(&mut self, request: &SynthesisRequest) -> Result<CandidateConfig, SynthesizerError> {
        Ok(BuiltinSynthesizer::propose_for(request))
    }

    fn describe(&self) -> String {
        "builtin".into()
    }
}

/// Runs a command per iteration: the request as JSON on stdin, a candidate
/// config document (JSON or TOML) expected on stdout.
#[derive(Clone, Debug)]
pub struct ExternalSynthesizer {
    argv: Vec<String>,
    timeout: Duration,
}

impl ExternalSynthesizer {
    /// Splits `command_line` with shell quoting rules.
    pub fn new(command_line: &str, timeout: Duration) -> Result<Self, SynthesizerError> {
        let argv = shell_words::split(command_line)
            .map_err(|e| SynthesizerError::Spawn(format!("bad command line: {e}")))?;
        if argv.is_empty() {
            return Err(SynthesizerError::Spawn("empty command line".into()));
        }
        Ok(ExternalSynthesizer { argv, timeout })
    }

    /// The per-iteration timeout, honouring [`SYNTH_TIMEOUT_ENV`].
    pub fn timeout_from_env() -> Duration {
        std::env::var(SYNTH_TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| *s > 0.0)
            .map(Duration::from_secs_f64)
            .unwrap_or(DEFAULT_SYNTH_TIMEOUT)
    }
}

fn parse_proposal(text: &str) -> Result<CandidateConfig, SynthesizerError> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        serde_json::from_str(trimmed).map_err(|e| SynthesizerError::Malformed(e.to_string()))
    } else {
        CandidateConfig::from_toml(trimmed).map_err(|e| SynthesizerError::Malformed(e.to_string()))
    }
}

impl Synthesizer for ExternalSynthesizer {
    fn propose(&mut self, request: &SynthesisRequest) -> Result<CandidateConfig, SynthesizerError> {
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SynthesizerError::Spawn(format!("{}: {e}", self.argv[0])))?;

        let input = request.to_json();
        let mut stdin = child.stdin.take().expect("piped stdin");
        // A child that exits without reading closes the pipe; that shows up
        // as its exit status, not as a write error here.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SynthesizerError::Timeout(self.timeout));
            }
            Err(e) => return Err(SynthesizerError::Spawn(e.to_string())),
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(SynthesizerError::ExitStatus(format!(
                "{status}: {}",
                err.trim()
            )));
        }
        parse_proposal(&out)
    }

    fn describe(&self) -> String {
        shell_words::join(&self.argv)
    }
}
