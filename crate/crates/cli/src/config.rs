use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use lockstep_core::candidate::CandidateConfig;
use lockstep_core::rsp::RegisterLayout;
use lockstep_core::scoring::Weights;
use lockstep_core::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_STEPS: u64 = 1000;
pub const DEFAULT_MAX_ITERS: u32 = 10;
pub const DEFAULT_OUT_DIR: &str = "lockstep-out";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:2345";

/// Flags shared by every subcommand. Each overrides the matching key of the
/// `--config` file.
#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// Harness config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports and other artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for generated programs and fault campaigns [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Reference: `golden` for the in-process model or a host:port endpoint.
    #[arg(long = "ref", global = true, value_name = "host:port|golden")]
    pub reference: Option<String>,
    /// Candidate config file (TOML or JSON).
    #[arg(long, global = true)]
    pub candidate: Option<PathBuf>,
    /// Score weights file (TOML).
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Register layout file for a remote reference.
    #[arg(long, global = true)]
    pub layout: Option<PathBuf>,
    /// Stop each run at the first divergent step.
    #[arg(long, global = true)]
    pub fail_fast: bool,
    /// Step budget per run [default: 1000].
    #[arg(long, global = true, value_name = "N")]
    pub max_steps: Option<u64>,
    /// Repair iteration budget [default: 10].
    #[arg(long, global = true, value_name = "K")]
    pub max_iters: Option<u32>,
    /// Endpoint the stub listens on [default: 127.0.0.1:2345].
    #[arg(long, global = true, value_name = "host:port")]
    pub listen: Option<String>,
    /// Load address for flat binary and hex program files [default: 0].
    #[arg(long, global = true)]
    pub base: Option<u32>,
    /// Worker threads for campaigns [default: logical cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// The `--config` file. Relative paths resolve against its directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: u32,
    reference: Option<String>,
    candidate: Option<PathBuf>,
    weights: Option<PathBuf>,
    layout: Option<PathBuf>,
    fail_fast: Option<bool>,
    max_steps: Option<u64>,
    max_iters: Option<u32>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    listen: Option<String>,
    base: Option<u32>,
    jobs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Golden,
    Remote(String),
}

/// Every setting an invocation ran with, with documents already loaded.
/// Artifacts embed this so a run can be reproduced from its outputs.
#[derive(Clone, Debug, Serialize)]
pub struct HarnessConfig {
    pub schema_version: u32,
    pub reference: Reference,
    pub candidate_path: Option<PathBuf>,
    pub candidate: CandidateConfig,
    pub weights_path: Option<PathBuf>,
    pub weights: Weights,
    pub layout_path: Option<PathBuf>,
    #[serde(skip)]
    pub layout: RegisterLayout,
    pub fail_fast: bool,
    pub max_steps: u64,
    pub max_iters: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub listen: String,
    pub base: u32,
    /// Pool size does not change any output, so it is left out of artifacts.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

impl HarnessConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let path = existing(path.clone(), "config file")?;
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let mut file: ConfigFile =
                    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                if file.schema_version != SCHEMA_VERSION {
                    bail!("{}: unsupported schema_version {}", path.display(), file.schema_version);
                }
                let dir = path.parent().unwrap_or(Path::new(""));
                for p in [&mut file.candidate, &mut file.weights, &mut file.layout, &mut file.out_dir] {
                    if let Some(p) = p.as_mut() {
                        *p = dir.join(&*p);
                    }
                }
                file
            }
            None => ConfigFile::default(),
        };

        let reference = match args.reference.clone().or(file.reference).as_deref() {
            None | Some("golden") => Reference::Golden,
            Some(endpoint) => Reference::Remote(endpoint.to_string()),
        };
        let candidate_path = args.candidate.clone().or(file.candidate).map(|p| existing(p, "candidate config")).transpose()?;
        let candidate = match &candidate_path {
            Some(p) => load_candidate(p)?,
            None => CandidateConfig::clean(),
        };
        let weights_path = args.weights.clone().or(file.weights).map(|p| existing(p, "weights file")).transpose()?;
        let weights = match &weights_path {
            Some(p) => Weights::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => Weights::default(),
        };
        let layout_path = args.layout.clone().or(file.layout).map(|p| existing(p, "register layout")).transpose()?;
        let layout = match &layout_path {
            Some(p) => RegisterLayout::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RegisterLayout::arm(),
        };
        let jobs = args.jobs.or(file.jobs);
        if jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        Ok(HarnessConfig {
            schema_version: SCHEMA_VERSION,
            reference,
            candidate_path,
            candidate,
            weights_path,
            weights,
            layout_path,
            layout,
            fail_fast: args.fail_fast || file.fail_fast.unwrap_or(false),
            max_steps: args.max_steps.or(file.max_steps).unwrap_or(DEFAULT_MAX_STEPS),
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(DEFAULT_MAX_ITERS),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out_dir: args.out_dir.clone().or(file.out_dir).unwrap_or_else(|| DEFAULT_OUT_DIR.into()),
            listen: args.listen.clone().or(file.listen).unwrap_or_else(|| DEFAULT_LISTEN.into()),
            base: args.base.or(file.base).unwrap_or(0),
            jobs,
        })
    }
}

/// Reads a candidate config, as JSON if the file starts with `{`, TOML
/// otherwise.
pub fn load_candidate(path: &Path) -> Result<CandidateConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        CandidateConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
