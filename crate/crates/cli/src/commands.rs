use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lockstep_core::candidate::{fig2_program, witness, witness_set, CandidateModel, Knob};
use lockstep_core::diff::{lockstep_run, EngineError, GoldenTarget, RunMode, RunOptions, RunReport, Side, Target, TargetError};
use lockstep_core::fault::{generate_campaign, run_fault_campaign_with, FaultCampaign};
use lockstep_core::gen::{generate, generate_suite, GenConfig, GENERATOR_VERSION};
use lockstep_core::isa::{MemoryImage, Program};
use lockstep_core::rsp::{serve_stub, timeout_from_env, RspReference, StubOptions};
use lockstep_core::scoring::{
    render_feedback, repair_loop, repair_loop_with, score, score_set, BuiltinSynthesizer, ExternalSynthesizer,
    RepairOptions, RepairStop, SynthesisRequest, Synthesizer,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact;
use crate::config::{HarnessConfig, Reference};

/// How a command finished when it did not hit an operational error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Diverged,
    /// Everything that ran was clean but some inputs failed.
    Errors,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Clean => 0,
            Outcome::Diverged => 1,
            Outcome::Errors => 2,
        }
    }
}

const BLANK_IMAGE_BYTES: usize = 64 * 1024;

/// Resolves a program argument: a file path, or one of `@fig2`,
/// `@witness:<knob>` and `@gen:<index>` (generated with the config seed).
pub fn load_program(spec: &str, config: &HarnessConfig) -> Result<Program> {
    if let Some(builtin) = spec.strip_prefix('@') {
        return match builtin.split_once(':') {
            None if builtin == "fig2" => Ok(fig2_program()),
            Some(("witness", knob)) => Ok(witness(knob.parse::<Knob>()?)),
            Some(("gen", index)) => {
                let index = index.parse().with_context(|| format!("bad generator index {index:?}"))?;
                Ok(generate(config.seed, index, GenConfig::default()))
            }
            _ => bail!("unknown builtin program {spec:?}"),
        };
    }
    Program::load(Path::new(spec), config.base).with_context(|| format!("loading program {spec}"))
}

fn run_options(config: &HarnessConfig) -> RunOptions {
    let mode = if config.fail_fast { RunMode::FailFast } else { RunMode::RunToBudget };
    RunOptions::new(config.max_steps, mode)
}

fn connect(config: &HarnessConfig, endpoint: &str) -> Result<RspReference, TargetError> {
    Ok(RspReference::connect(endpoint, config.layout.clone(), timeout_from_env())?)
}

/// One lockstep run of `candidate` against the configured reference.
fn run_program(
    config: &HarnessConfig,
    candidate: &lockstep_core::candidate::CandidateConfig,
    program: &Program,
    options: &RunOptions,
) -> Result<RunReport, EngineError> {
    let mut model = CandidateModel::instantiate(candidate);
    match &config.reference {
        Reference::Golden => lockstep_run(&mut GoldenTarget::new(), &mut model, program, options),
        Reference::Remote(endpoint) => {
            let mut reference = connect(config, endpoint).map_err(|source| EngineError::Target {
                side: Side::Reference,
                seq: None,
                source,
            })?;
            let report = lockstep_run(&mut reference, &mut model, program, options)?;
            if let Err(e) = reference.session().detach() {
                log::warn!("detach from {endpoint}: {e}");
            }
            Ok(report)
        }
    }
}

/// Thread pool for fan-out. A remote reference is a single debug session,
/// so it gets one worker.
fn pool(config: &HarnessConfig) -> Result<rayon::ThreadPool> {
    let threads = match config.reference {
        Reference::Remote(_) => 1,
        Reference::Golden => config.jobs.unwrap_or(0),
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn cmd_run(config: &HarnessConfig, program: &str) -> Result<Outcome> {
    let program = load_program(program, config)?;
    let report = run_program(config, &config.candidate, &program, &run_options(config))?;
    let fidelity = score(&report, None, &config.weights)?;
    let mut feedback = render_feedback(&report);
    feedback.score = Some(fidelity);
    let report_path = artifact::write(config, "run", &report)?;
    let feedback_path = artifact::write(config, "feedback", &feedback)?;
    print!("{feedback}");
    println!("aggregate score {}", fidelity.aggregate);
    println!("report {}", report_path.display());
    println!("feedback {}", feedback_path.display());
    Ok(if report.is_clean() { Outcome::Clean } else { Outcome::Diverged })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum EntryStatus {
    Clean,
    Diverged,
    Error,
}

#[derive(Debug, Serialize)]
struct CampaignEntry {
    program: String,
    digest: Option<String>,
    status: EntryStatus,
    steps: u64,
    discrepancies: usize,
    aggregate: Option<f64>,
    /// Report file name inside the output directory.
    report: Option<String>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct CampaignSummary {
    generator_version: Option<u32>,
    programs: usize,
    clean: usize,
    divergent: usize,
    errors: usize,
    /// Mean aggregate over programs that ran.
    mean_aggregate: f64,
    entries: Vec<CampaignEntry>,
}

fn campaign_inputs(config: &HarnessConfig, dir: Option<&Path>, generate: Option<u64>) -> Result<Vec<(String, Result<Program>)>> {
    match (dir, generate) {
        (Some(dir), None) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.is_file());
            paths.sort();
            Ok(paths
                .into_iter()
                .map(|p| {
                    let program = Program::load(&p, config.base).map_err(anyhow::Error::from);
                    (file_name(&p), program)
                })
                .collect())
        }
        (None, Some(count)) => Ok(generate_suite(config.seed, count, GenConfig::default())
            .into_iter()
            .map(|p| (p.name.clone(), Ok(p)))
            .collect()),
        _ => bail!("give exactly one of --programs and --generate"),
    }
}

pub fn cmd_campaign(config: &HarnessConfig, dir: Option<&Path>, generate: Option<u64>) -> Result<Outcome> {
    let inputs = campaign_inputs(config, dir, generate)?;
    let options = run_options(config);
    let mut entries: Vec<CampaignEntry> = pool(config)?.install(|| {
        inputs
            .into_par_iter()
            .map(|(label, program)| {
                let outcome = program.and_then(|p| {
                    let report = run_program(config, &config.candidate, &p, &options)?;
                    let fidelity = score(&report, None, &config.weights)?;
                    let path = artifact::write(config, "run", &report)?;
                    Ok((p.digest(), report, fidelity.aggregate, path))
                });
                match outcome {
                    Ok((digest, report, aggregate, path)) => CampaignEntry {
                        program: label,
                        digest: Some(digest),
                        status: if report.is_clean() { EntryStatus::Clean } else { EntryStatus::Diverged },
                        steps: report.steps,
                        discrepancies: report.discrepancies.len(),
                        aggregate: Some(aggregate),
                        report: Some(file_name(&path)),
                        error: None,
                    },
                    Err(e) => CampaignEntry {
                        program: label,
                        digest: None,
                        status: EntryStatus::Error,
                        steps: 0,
                        discrepancies: 0,
                        aggregate: None,
                        report: None,
                        error: Some(format!("{e:#}")),
                    },
                }
            })
            .collect()
    });
    // Programs that loaded sort by digest; failures follow, by name.
    entries.sort_by(|a, b| (a.digest.is_none(), &a.digest, &a.program).cmp(&(b.digest.is_none(), &b.digest, &b.program)));
    let count = |s| entries.iter().filter(|e| e.status == s).count();
    let (clean, divergent, errors) = (count(EntryStatus::Clean), count(EntryStatus::Diverged), count(EntryStatus::Error));
    let ran: Vec<f64> = entries.iter().filter_map(|e| e.aggregate).collect();
    let summary = CampaignSummary {
        generator_version: generate.map(|_| GENERATOR_VERSION),
        programs: entries.len(),
        clean,
        divergent,
        errors,
        mean_aggregate: if ran.is_empty() { 0.0 } else { ran.iter().sum::<f64>() / ran.len() as f64 },
        entries,
    };
    for e in summary.entries.iter().filter(|e| e.status != EntryStatus::Clean) {
        match &e.error {
            Some(err) => println!("error    {}: {err}", e.program),
            None => println!("diverged {}: {} discrepancies", e.program, e.discrepancies),
        }
    }
    let path = artifact::write(config, "campaign", &summary)?;
    println!(
        "{} programs: {clean} clean, {divergent} divergent, {errors} errors, mean aggregate {}",
        summary.programs, summary.mean_aggregate
    );
    println!("summary {}", path.display());
    Ok(if divergent > 0 {
        Outcome::Diverged
    } else if errors > 0 {
        Outcome::Errors
    } else {
        Outcome::Clean
    })
}

fn repair_programs(config: &HarnessConfig, dir: Option<&Path>, generate: Option<u64>) -> Result<Vec<Program>> {
    if dir.is_none() && generate.is_none() {
        return Ok(witness_set());
    }
    campaign_inputs(config, dir, generate)?
        .into_iter()
        .map(|(label, p)| p.with_context(|| format!("loading {label}")))
        .collect()
}

/// Where the repaired config goes: `<out_dir>/<stem>.v<version>.toml`.
fn versioned_path(config: &HarnessConfig, version: u64) -> PathBuf {
    let stem = config
        .candidate_path
        .as_deref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "candidate".into());
    let stem = match stem.rsplit_once(".v") {
        Some((head, v)) if v.parse::<u64>().is_ok() => head.to_string(),
        _ => stem,
    };
    config.out_dir.join(format!("{stem}.v{version}.toml"))
}

pub fn cmd_repair(config: &HarnessConfig, synth: &str, dir: Option<&Path>, generate: Option<u64>) -> Result<Outcome> {
    let programs = repair_programs(config, dir, generate)?;
    let mut synthesizer: Box<dyn Synthesizer + Send> = if synth == "builtin" {
        Box::new(BuiltinSynthesizer)
    } else {
        Box::new(ExternalSynthesizer::new(synth, ExternalSynthesizer::timeout_from_env())?)
    };
    let options = RepairOptions {
        max_iterations: config.max_iters,
        weights: config.weights,
        run: run_options(config),
    };
    let (final_config, history) = pool(config)?.install(|| match config.reference {
        Reference::Golden => repair_loop(&config.candidate, synthesizer.as_mut(), &programs, &options),
        Reference::Remote(_) => repair_loop_with(&config.candidate, synthesizer.as_mut(), &options, &mut |c| {
            programs.iter().map(|p| run_program(config, c, p, &options.run)).collect()
        }),
    })?;
    let history_path = artifact::write(config, "repair", &history)?;
    let config_path = versioned_path(config, final_config.version);
    if config.candidate_path.as_deref() == Some(config_path.as_path()) {
        println!("config {} (unchanged)", config_path.display());
    } else {
        artifact::write_file(&config_path, &final_config.to_toml())?;
        println!("config {}", config_path.display());
    }
    for it in &history.iterations {
        let score = it.score.map(|s| s.aggregate.to_string()).unwrap_or_else(|| "-".into());
        let mark = if it.accepted { "accepted" } else { "rejected" };
        match &it.error {
            Some(e) => println!("iteration {}: error: {e}", it.iteration),
            None => println!("iteration {}: {} score {score} {mark}", it.iteration, it.config),
        }
    }
    println!("stop {:?}, final score {}", history.stop_reason, history.final_score.aggregate);
    println!("history {}", history_path.display());
    Ok(if history.stop_reason == RepairStop::Converged { Outcome::Clean } else { Outcome::Diverged })
}

pub fn cmd_fault(config: &HarnessConfig, program: &str, campaign: Option<&Path>, count: usize) -> Result<Outcome> {
    let program = load_program(program, config)?;
    let campaign = match campaign {
        Some(path) => FaultCampaign::load(path, &program)?,
        None => generate_campaign(&program, config.seed, count, config.max_steps),
    };
    let run = run_options(config);
    let report = pool(config)?.install(|| {
        run_fault_campaign_with(&program, &campaign, &config.candidate, &run, &|| match &config.reference {
            Reference::Golden => Ok(Box::new(GoldenTarget::new()) as Box<dyn Target>),
            Reference::Remote(endpoint) => Ok(Box::new(connect(config, endpoint)?) as Box<dyn Target>),
        })
    })?;
    let path = artifact::write(config, "fault", &report)?;
    let diverged = report.results.iter().filter(|r| r.diverged).count();
    for r in report.results.iter().filter(|r| r.error.is_some()) {
        println!("spec {}: error: {}", r.index, r.error.as_deref().unwrap_or_default());
    }
    println!(
        "{} specs: {diverged} diverged, {} errors, fault response divergence {}",
        report.results.len(),
        report.errors,
        report.fault_response_divergence
    );
    println!("report {}", path.display());
    Ok(if diverged > 0 {
        Outcome::Diverged
    } else if report.errors > 0 {
        Outcome::Errors
    } else {
        Outcome::Clean
    })
}

pub fn cmd_stub(config: &HarnessConfig, program: Option<&str>, once: bool, transcript: Option<PathBuf>) -> Result<Outcome> {
    let program = match program {
        Some(spec) => load_program(spec, config)?,
        None => Program::new("blank", MemoryImage::new(config.base, vec![0; BLANK_IMAGE_BYTES]), config.base)?,
    };
    let mut target = CandidateModel::instantiate(&config.candidate);
    target.load(&program)?;
    let listener = TcpListener::bind(&config.listen).with_context(|| format!("binding {}", config.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let options = StubOptions {
        layout: config.layout.clone(),
        transcript,
        ..StubOptions::default()
    };
    serve_stub(&mut target, listener, &options, once)?;
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    reports: Vec<String>,
    fault_response_divergence: Option<f64>,
    score: &'a lockstep_core::scoring::FidelityScore,
}

pub fn cmd_score(config: &HarnessConfig, reports: &[PathBuf], fault_divergence: Option<f64>) -> Result<Outcome> {
    if reports.is_empty() {
        bail!("no reports given");
    }
    let loaded = reports
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::from_value::<RunReport>(artifact::unwrap_body(doc))
                .with_context(|| format!("{} is not a run report", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let fidelity = score_set(&loaded, fault_divergence, &config.weights)?;
    let record = ScoreRecord {
        reports: reports.iter().map(|p| p.display().to_string()).collect(),
        fault_response_divergence: fault_divergence,
        score: &fidelity,
    };
    let path = artifact::write(config, "score", &record)?;
    println!("{}", serde_json::to_string_pretty(&fidelity)?);
    println!("aggregate {}", fidelity.aggregate);
    println!("score {}", path.display());
    Ok(if fidelity.is_perfect() { Outcome::Clean } else { Outcome::Diverged })
}

/// The builtin synthesizer behind the external-command interface: a
/// request on stdin, a config on stdout.
pub fn cmd_synth_builtin() -> Result<Outcome> {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input)?;
    let request = SynthesisRequest::from_json(&input).map_err(|e| anyhow!(e))?;
    print!("{}", BuiltinSynthesizer::propose_for(&request).to_toml());
    Ok(Outcome::Clean)
}
