use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use lockstep_core::candidate::{CandidateConfig, Knob};
use lockstep_core::isa::asm;
use lockstep_core::rsp::{RegisterLayout, RspSession};
use serde_json::Value;
use tempfile::TempDir;

fn lockstep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lockstep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn lockstep")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// The path printed after `label` on stdout.
fn artifact(dir: &Path, out: &Output, label: &str) -> PathBuf {
    let text = stdout(out);
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{label} ")))
        .unwrap_or_else(|| panic!("no {label} line in {text}"));
    dir.join(line.trim())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_candidate(dir: &Path, name: &str, knobs: &[Knob]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, CandidateConfig::with_knobs(knobs.iter().copied()).to_toml()).unwrap();
    path
}

#[test]
fn run_reports_the_fig2_defect() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let clean = lockstep(d, &["run", "@fig2"]);
    assert_eq!(code(&clean), 0, "{clean:?}");
    assert!(String::from_utf8_lossy(&clean.stderr).contains("seed 0"));

    write_candidate(d, "n.toml", &[Knob::CmpSkipsNUpdate]);
    let out = lockstep(d, &["--candidate", "n.toml", "run", "@fig2"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("N flag should be set (N=1)"));
    let report = read_json(&artifact(d, &out, "report"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["kind"], "run");
    assert_eq!(report["config"]["seed"], 0);
    assert_eq!(report["config"]["max_steps"], 1000);
    assert_eq!(report["config"]["candidate"]["knobs"]["cmp_skips_n_update"], true);
    let discrepancies = report["body"]["discrepancies"].as_array().unwrap();
    assert_eq!(discrepancies.len(), 1);
    assert_eq!(discrepancies[0]["seq"], 2);
    let feedback = read_json(&artifact(d, &out, "feedback"));
    assert!(feedback["body"]["entries"][0]["message"].as_str().unwrap().contains("results in -10"));
}

#[test]
fn operational_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let refused = lockstep(d, &["--ref", "127.0.0.1:1", "run", "@fig2"]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("error:"));
    assert_eq!(code(&lockstep(d, &["run", "missing.hex"])), 2);
    assert_eq!(code(&lockstep(d, &["--candidate", "missing.toml", "run", "@fig2"])), 2);
    assert_eq!(code(&lockstep(d, &["run", "@witness:warp_drive"])), 2);
    assert_eq!(code(&lockstep(d, &["frobnicate"])), 2);
}

#[test]
fn config_file_paths_resolve_relative_to_it() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("cfg")).unwrap();
    write_candidate(&d.join("cfg"), "cand.toml", &[Knob::CmpSkipsNUpdate]);
    std::fs::write(
        d.join("cfg/harness.toml"),
        "schema_version = 1\ncandidate = \"cand.toml\"\nmax_steps = 50\nout_dir = \"out\"\nseed = 9\n",
    )
    .unwrap();
    let out = lockstep(d, &["--config", "cfg/harness.toml", "run", "@fig2"]);
    assert_eq!(code(&out), 1);
    let path = artifact(d, &out, "report");
    assert!(path.starts_with(d.join("cfg/out")));
    let report = read_json(&path);
    assert_eq!(report["config"]["max_steps"], 50);
    assert_eq!(report["config"]["seed"], 9);
    // Flags win over the file.
    let out = lockstep(d, &["--config", "cfg/harness.toml", "--seed", "3", "run", "@fig2"]);
    assert_eq!(read_json(&artifact(d, &out, "report"))["config"]["seed"], 3);
    std::fs::write(d.join("cfg/bad.toml"), "schema_version = 1\nweights = \"nope.toml\"\n").unwrap();
    assert_eq!(code(&lockstep(d, &["--config", "cfg/bad.toml", "run", "@fig2"])), 2);
}

#[test]
fn generated_campaign_is_clean_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let a = lockstep(d, &["campaign", "--generate", "100"]);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    let path = artifact(d, &a, "summary");
    let first = std::fs::read(&path).unwrap();
    let summary = read_json(&path);
    assert_eq!(summary["body"]["programs"], 100);
    assert_eq!(summary["body"]["divergent"], 0);
    assert_eq!(summary["body"]["mean_aggregate"], 0.0);
    assert_eq!(summary["body"]["generator_version"], 1);
    let digests: Vec<&str> = summary["body"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["digest"].as_str().unwrap())
        .collect();
    assert!(digests.windows(2).all(|w| w[0] < w[1]));

    let b = lockstep(d, &["--jobs", "1", "campaign", "--generate", "100"]);
    assert_eq!(artifact(d, &b, "summary"), path);
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn campaign_records_per_program_failures() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let progs = d.join("progs");
    std::fs::create_dir(&progs).unwrap();
    let listing = |words: &[u32]| words.iter().map(|w| format!("{w:08x}\n")).collect::<String>();
    std::fs::write(progs.join("a.hex"), listing(&[asm::mov_imm(0, 1), asm::mov_imm(1, 2)])).unwrap();
    // Not an instruction of the subset: both sides fault at step 0.
    std::fs::write(progs.join("b.hex"), listing(&[0xE7F0_00F0])).unwrap();
    std::fs::write(progs.join("c.hex"), "not a program\n").unwrap();
    let out = lockstep(d, &["campaign", "--programs", "progs"]);
    assert_eq!(code(&out), 2, "{}", stdout(&out));
    let summary = read_json(&artifact(d, &out, "summary"));
    let body = &summary["body"];
    assert_eq!((body["clean"].as_u64(), body["errors"].as_u64()), (Some(2), Some(1)));
    let last = &body["entries"][2];
    assert_eq!(last["program"], "c.hex");
    assert_eq!(last["status"], "error");
    assert!(last["error"].as_str().unwrap().contains("line 1"));

    write_candidate(d, "pc.toml", &[Knob::PcStep8]);
    let out = lockstep(d, &["--candidate", "pc.toml", "campaign", "--programs", "progs"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn repair_writes_a_new_versioned_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = write_candidate(d, "cand.toml", &[Knob::CarryInverted]);
    let before = std::fs::read(&input).unwrap();
    let out = lockstep(d, &["--candidate", "cand.toml", "repair"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let history = read_json(&artifact(d, &out, "history"));
    assert_eq!(history["body"]["stop_reason"], "converged");
    assert!(history["body"]["iterations"].as_array().unwrap().len() <= 2);
    let written = artifact(d, &out, "config");
    assert_eq!(written, d.join("lockstep-out/cand.v1.toml"));
    let repaired = CandidateConfig::load(&written).unwrap();
    assert!(repaired.is_clean());
    assert_eq!(repaired.version, 1);
    assert_eq!(std::fs::read(&input).unwrap(), before);

    let out = lockstep(d, &["repair"]);
    assert_eq!(code(&out), 0);
    let history = read_json(&artifact(d, &out, "history"));
    assert_eq!(history["body"]["iterations"].as_array().unwrap().len(), 1);
}

#[test]
fn repair_without_improvement_exits_1() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_candidate(d, "cand.toml", &[Knob::PcStep8]);
    let out = lockstep(d, &["--candidate", "cand.toml", "repair", "--synth", "cat cand.toml"]);
    assert_eq!(code(&out), 1);
    let history = read_json(&artifact(d, &out, "history"));
    assert_eq!(history["body"]["stop_reason"], "no_improvement");
    let out = lockstep(d, &["--candidate", "cand.toml", "--max-iters", "1", "repair"]);
    assert_eq!(code(&out), 1);
    assert_eq!(read_json(&artifact(d, &out, "history"))["body"]["stop_reason"], "budget_exhausted");
}

#[test]
fn external_builtin_synthesizer_matches_the_builtin() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_candidate(
        d,
        "cand.toml",
        &[Knob::CondEqNeSwapped, Knob::LdrSignExtendsHalfword, Knob::ZFromLowByteOnly, Knob::StrWritesBigEndian],
    );
    let builtin = lockstep(d, &["--candidate", "cand.toml", "--out-dir", "a", "repair"]);
    let synth = format!("{} synth-builtin", env!("CARGO_BIN_EXE_lockstep"));
    let external = lockstep(d, &["--candidate", "cand.toml", "--out-dir", "b", "repair", "--synth", &synth]);
    assert_eq!(code(&builtin), 0);
    assert_eq!(code(&external), 0);
    let mut a = read_json(&artifact(d, &builtin, "history"))["body"].clone();
    let mut b = read_json(&artifact(d, &external, "history"))["body"].clone();
    assert_eq!(a["synthesizer"], "builtin");
    assert!(b["synthesizer"].as_str().unwrap().ends_with("synth-builtin"));
    a["synthesizer"] = Value::Null;
    b["synthesizer"] = Value::Null;
    assert_eq!(a, b);
}

#[test]
fn fault_campaigns_are_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let run = |seed: &str| {
        let out = lockstep(d, &["--seed", seed, "fault", "@gen:3", "--count", "40"]);
        assert_eq!(code(&out), 0, "{}", stdout(&out));
        artifact(d, &out, "report")
    };
    let a = run("5");
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(run("5"), a);
    assert_eq!(std::fs::read(&a).unwrap(), bytes);
    assert_ne!(run("6"), a);
    let report = read_json(&a);
    assert_eq!(report["body"]["fault_response_divergence"], 0.0);
    assert_eq!(report["body"]["results"].as_array().unwrap().len(), 40);

    std::fs::write(
        d.join("campaign.toml"),
        "schema_version = 1\n[[spec]]\nlocation = { register = 12 }\nkind = \"stuck_at_0\"\nbit = 31\ntrigger_seq = 0\n",
    )
    .unwrap();
    write_candidate(d, "n.toml", &[Knob::CmpSkipsNUpdate]);
    let out = lockstep(d, &["--candidate", "n.toml", "fault", "@fig2", "--campaign", "campaign.toml"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn score_recomputes_from_stored_reports() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let clean = artifact(d, &lockstep(d, &["run", "@fig2"]), "report");
    let out = lockstep(d, &["score", clean.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("aggregate 0\n"));

    write_candidate(d, "n.toml", &[Knob::CmpSkipsNUpdate]);
    let dirty = artifact(d, &lockstep(d, &["--candidate", "n.toml", "run", "@fig2"]), "report");
    let out = lockstep(d, &["score", dirty.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let default = read_json(&artifact(d, &out, "score"))["body"]["score"]["aggregate"].as_f64().unwrap();
    assert!((default - 1.0 / 90.0).abs() < 1e-12);
    std::fs::write(
        d.join("w.toml"),
        "schema_version = 1\nregister_trace_delta = 0.0\nmemory_trace_delta = 0.0\ntiming_deviation = 0.0\n\
         state_transition_mismatch = 1.0\nfault_response_divergence = 0.0\nresource_profile_delta = 0.0\n",
    )
    .unwrap();
    let out = lockstep(d, &["--weights", "w.toml", "score", dirty.to_str().unwrap()]);
    let reweighted = read_json(&artifact(d, &out, "score"))["body"]["score"]["aggregate"].as_f64().unwrap();
    assert!((reweighted - 1.0 / 18.0).abs() < 1e-12);
}

#[test]
fn stub_serves_the_candidate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut child = Command::new(env!("CARGO_BIN_EXE_lockstep"))
        .current_dir(d)
        .args(["--listen", "127.0.0.1:0", "stub", "@fig2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let mut session = RspSession::connect(&addr, RegisterLayout::arm(), Duration::from_secs(5)).unwrap();
    let g = session.command(b"g").unwrap();
    assert_eq!(g.len(), 17 * 8);
    session.detach().unwrap();

    // The stub keeps serving: a clean candidate behind it acts as a reference.
    let out = lockstep(d, &["--ref", &addr, "run", "@fig2"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    write_candidate(d, "n.toml", &[Knob::CmpSkipsNUpdate]);
    let out = lockstep(d, &["--ref", &addr, "--candidate", "n.toml", "run", "@fig2"]);
    assert_eq!(code(&out), 1);

    let mut session = RspSession::connect(&addr, RegisterLayout::arm(), Duration::from_secs(5)).unwrap();
    session.kill().unwrap();
    assert!(child.wait().unwrap().success());
}
