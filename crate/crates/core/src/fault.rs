//! Single-point fault injection (bit flips and stuck-at bits).
//!
//! Faults are applied through the [`Target`] state-write interface, so the
//! reference (over the protocol) and the candidate (through its pokes) are
//! disturbed identically. A bit flip is applied once, before the trigger
//! step. A stuck-at fault is forced before every step from the trigger on,
//! and again after each such step so the compared state shows it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::candidate::{CandidateConfig, CandidateModel};
use crate::diff::{
    lockstep_run_with, GoldenTarget, RegisterId, RunOptions, RunReport, Side, StepHook, Target,
    TargetError,
};
use crate::isa::{Flag, Golden, Machine, Program, ProgramId};
use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("invalid fault location: {0}")]
    InvalidLocation(String),
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),
    #[error(transparent)]
    Target(#[from] TargetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultLocation {
    Register(u8),
    Flag(Flag),
    /// Word-aligned address.
    Memory(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Bitflip,
    #[serde(rename = "stuck_at_0")]
    StuckAt0,
    #[serde(rename = "stuck_at_1")]
    StuckAt1,
}

impl InjectionKind {
    pub fn apply(self, value: u32, bit: u8) -> u32 {
        let m = 1u32 << bit;
        match self {
            InjectionKind::Bitflip => value ^ m,
            InjectionKind::StuckAt0 => value & !m,
            InjectionKind::StuckAt1 => value | m,
        }
    }

    pub fn is_stuck(self) -> bool {
        !matches!(self, InjectionKind::Bitflip)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub location: FaultLocation,
    pub kind: InjectionKind,
    /// Bit within the word; ignored for flags.
    #[serde(default)]
    pub bit: u8,
    pub trigger_seq: u64,
}

impl FaultSpec {
    pub fn validate(&self, budget: u64) -> Result<(), FaultError> {
        match self.location {
            FaultLocation::Register(n) if n >= 16 => {
                return Err(FaultError::InvalidLocation(format!("register {n}")))
            }
            FaultLocation::Memory(a) if a % 4 != 0 => {
                return Err(FaultError::InvalidLocation(format!("unaligned address {a:#x}")))
            }
            _ => {}
        }
        if !matches!(self.location, FaultLocation::Flag(_)) && self.bit >= 32 {
            return Err(FaultError::InvalidLocation(format!("bit {}", self.bit)));
        }
        if self.trigger_seq >= budget {
            return Err(FaultError::InvalidCampaign(format!(
                "trigger_seq {} not below budget {budget}",
                self.trigger_seq
            )));
        }
        Ok(())
    }
}

/// Applies `spec` to a stopped target. Returns the memory words written
/// (empty for registers and flags), or `None` if the value was already what
/// the fault demands.
pub fn apply_fault(target: &mut dyn Target, spec: &FaultSpec) -> Result<Option<Vec<u32>>, FaultError> {
    match spec.location {
        FaultLocation::Register(n) => {
            if n >= 16 {
                return Err(FaultError::InvalidLocation(format!("register {n}")));
            }
            let old = target.read_state()?.regs[n as usize];
            let new = spec.kind.apply(old, spec.bit);
            if new == old {
                return Ok(None);
            }
            target.write_register(RegisterId::Core(n), new)?;
            Ok(Some(Vec::new()))
        }
        FaultLocation::Flag(flag) => {
            let mut flags = target.read_state()?.flags;
            let old = flags.get(flag);
            let new = spec.kind.apply(old as u32, 0) & 1 == 1;
            if new == old {
                return Ok(None);
            }
            flags.set(flag, new);
            target.write_flags(flags)?;
            Ok(Some(Vec::new()))
        }
        FaultLocation::Memory(addr) => {
            if addr % 4 != 0 {
                return Err(FaultError::InvalidLocation(format!("unaligned address {addr:#x}")));
            }
            let old = target.read_word(addr)?;
            let new = spec.kind.apply(old, spec.bit);
            if new == old {
                return Ok(None);
            }
            target.write_word(addr, new)?;
            Ok(Some(vec![addr]))
        }
    }
}

/// Engine hook applying one fault to both sides.
pub struct FaultHook {
    pub spec: FaultSpec,
}

impl FaultHook {
    fn inject(&self, target: &mut dyn Target) -> Result<Option<Vec<u32>>, TargetError> {
        match apply_fault(target, &self.spec) {
            Ok(t) => Ok(t),
            Err(FaultError::Target(e)) => Err(e),
            // Locations are validated before the run starts.
            Err(e) => unreachable!("unvalidated fault spec: {e}"),
        }
    }
}

impl StepHook for FaultHook {
    fn before_step(
        &mut self,
        seq: u64,
        _side: Side,
        target: &mut dyn Target,
    ) -> Result<Option<Vec<u32>>, TargetError> {
        let due = if self.spec.kind.is_stuck() {
            seq >= self.spec.trigger_seq
        } else {
            seq == self.spec.trigger_seq
        };
        if due {
            self.inject(target)
        } else {
            Ok(None)
        }
    }

    fn after_step(
        &mut self,
        seq: u64,
        _side: Side,
        target: &mut dyn Target,
    ) -> Result<Option<Vec<u32>>, TargetError> {
        if self.spec.kind.is_stuck() && seq >= self.spec.trigger_seq {
            self.inject(target)
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultCampaign {
    pub schema_version: u32,
    pub program: ProgramId,
    /// Seed the specs were generated from, if they were.
    pub seed: Option<u64>,
    pub specs: Vec<FaultSpec>,
}

#[derive(Deserialize)]
struct CampaignDoc {
    schema_version: u32,
    #[serde(default, rename = "spec")]
    specs: Vec<FaultSpec>,
}

impl FaultCampaign {
    /// Reads a TOML campaign (`schema_version` and `[[spec]]` tables) for
    /// `program`.
    pub fn from_toml(text: &str, program: &Program) -> Result<Self, FaultError> {
        let doc: CampaignDoc =
            toml::from_str(text).map_err(|e| FaultError::InvalidCampaign(e.message().to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(FaultError::InvalidCampaign(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        Ok(FaultCampaign {
            schema_version: SCHEMA_VERSION,
            program: program.id(),
            seed: None,
            specs: doc.specs,
        })
    }

    pub fn load(path: &Path, program: &Program) -> Result<Self, FaultError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FaultError::InvalidCampaign(format!("{}: {e}", path.display())))?;
        FaultCampaign::from_toml(&text, program)
    }

    pub fn validate(&self, budget: u64) -> Result<(), FaultError> {
        self.specs.iter().try_for_each(|s| s.validate(budget))
    }
}

/// Steps the golden model runs on `program` within `budget`, at least 1.
fn golden_horizon(program: &Program, budget: u64) -> u64 {
    let mut m = Machine::new(program.image.clone(), program.entry);
    let mut n = 0;
    while n < budget && m.state.pc() != program.exit {
        if m.step_with(&Golden).is_err() {
            n += 1;
            break;
        }
        n += 1;
    }
    n.max(1)
}

/// `count` random specs for `program`, a pure function of
/// (seed, program digest, count, budget). Triggers fall inside the golden
/// run; memory locations fall inside the image.
pub fn generate_campaign(program: &Program, seed: u64, count: usize, budget: u64) -> FaultCampaign {
    let mut h = Sha256::new();
    h.update(b"lockstep-fault-campaign-v1\0");
    h.update(seed.to_le_bytes());
    h.update(program.digest().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let horizon = golden_horizon(program, budget.max(1));
    let words = (program.image.len() / 4).max(1) as u32;
    let specs = (0..count)
        .map(|_| {
            let location = match rng.gen_range(0..3) {
                0 => FaultLocation::Register(rng.gen_range(0..16)),
                1 => FaultLocation::Flag(Flag::ALL[rng.gen_range(0..4)]),
                _ => FaultLocation::Memory(program.image.base() + 4 * rng.gen_range(0..words)),
            };
            let kind = match rng.gen_range(0..3) {
                0 => InjectionKind::Bitflip,
                1 => InjectionKind::StuckAt0,
                _ => InjectionKind::StuckAt1,
            };
            let bit = match location {
                FaultLocation::Flag(_) => 0,
                _ => rng.gen_range(0..32),
            };
            FaultSpec {
                location,
                kind,
                bit,
                trigger_seq: rng.gen_range(0..horizon),
            }
        })
        .collect();
    FaultCampaign {
        schema_version: SCHEMA_VERSION,
        program: program.id(),
        seed: Some(seed),
        specs,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRunResult {
    pub index: usize,
    pub spec: FaultSpec,
    pub diverged: bool,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultCampaignReport {
    pub schema_version: u32,
    pub campaign: FaultCampaign,
    pub candidate: CandidateConfig,
    pub results: Vec<FaultRunResult>,
    /// Diverging specs over specs that ran without error (0 if none ran).
    pub fault_response_divergence: f64,
    pub errors: usize,
}

impl FaultCampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("campaign report serializes")
    }
}

/// Makes a fresh reference target for one run.
pub type ReferenceFactory<'a> = dyn Fn() -> Result<Box<dyn Target>, TargetError> + Sync + 'a;

/// Runs each spec as its own lockstep run against the golden reference.
pub fn run_fault_campaign(
    program: &Program,
    campaign: &FaultCampaign,
    config: &CandidateConfig,
    run: &RunOptions,
) -> Result<FaultCampaignReport, FaultError> {
    run_fault_campaign_with(program, campaign, config, run, &|| {
        Ok(Box::new(GoldenTarget::new()) as Box<dyn Target>)
    })
}

/// Runs each spec as its own lockstep run, in parallel, against references
/// from `make_reference`. Per-spec failures are recorded, not returned.
pub fn run_fault_campaign_with(
    program: &Program,
    campaign: &FaultCampaign,
    config: &CandidateConfig,
    run: &RunOptions,
    make_reference: &ReferenceFactory<'_>,
) -> Result<FaultCampaignReport, FaultError> {
    campaign.validate(run.budget)?;
    let results: Vec<FaultRunResult> = campaign
        .specs
        .par_iter()
        .enumerate()
        .map(|(index, spec)| {
            let outcome = make_reference().map_err(|e| e.to_string()).and_then(|mut reference| {
                let mut candidate = CandidateModel::instantiate(config);
                let mut hook = FaultHook { spec: *spec };
                lockstep_run_with(&mut reference, &mut candidate, config, program, run, &mut hook)
                    .map_err(|e| e.to_string())
            });
            match outcome {
                Ok(report) => FaultRunResult {
                    index,
                    spec: *spec,
                    diverged: !report.is_clean(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => FaultRunResult {
                    index,
                    spec: *spec,
                    diverged: false,
                    report: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    let ran = results.len() - errors;
    let diverged = results.iter().filter(|r| r.diverged).count();
    Ok(FaultCampaignReport {
        schema_version: SCHEMA_VERSION,
        campaign: campaign.clone(),
        candidate: config.clone(),
        fault_response_divergence: if ran == 0 { 0.0 } else { diverged as f64 / ran as f64 },
        errors,
        results,
    })
}
