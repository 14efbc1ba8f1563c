use std::time::{Duration, Instant};

use lockstep_core::candidate::{fig2_program, witness, witness_set, CandidateConfig, CandidateModel, Knob};
use lockstep_core::diff::{lockstep_run, GoldenTarget, RunMode, RunOptions, RunReport};
use lockstep_core::gen::{generate_suite, GenConfig};
use lockstep_core::isa::{asm, DpOp, Program};
use lockstep_core::scoring::{
    render_feedback, render_feedback_capped, repair_loop, score, score_set, suspects,
    BuiltinSynthesizer, ExternalSynthesizer, FidelityScore, RepairOptions, RepairStop,
    SynthesisRequest, Synthesizer, SynthesizerError, Weights,
};
use lockstep_core::SCHEMA_VERSION;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(program: &Program, cfg: &CandidateConfig, budget: u64) -> RunReport {
    let mut reference = GoldenTarget::new();
    let mut candidate = CandidateModel::instantiate(cfg);
    lockstep_run(&mut reference, &mut candidate, program, &RunOptions::new(budget, RunMode::RunToBudget))
        .unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

/// `LDR R0,=a; LDR R1,=b; CMP R0,R1`.
fn compare_program(a: u32, b: u32) -> Program {
    let words = [asm::ldr(0, 15, 8), asm::ldr(1, 15, 8), asm::cmp_reg(0, 1), asm::SPIN, a, b];
    Program::from_words("compare", 0, &words).unwrap().with_exit(12)
}

fn repair_options(max_iterations: u32) -> RepairOptions {
    RepairOptions {
        max_iterations,
        weights: Weights::default(),
        run: RunOptions::new(1000, RunMode::RunToBudget),
    }
}

#[test]
fn fig2_scores_one_transition_cell() {
    let r = run(&fig2_program(), &CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]), 100);
    let s = score(&r, None, &Weights::default()).unwrap();
    // One flag cell out of 6 per step over 3 steps.
    assert!(close(s.state_transition_mismatch, 1.0 / 18.0));
    assert_eq!(
        [s.register_trace_delta, s.memory_trace_delta, s.timing_deviation, s.fault_response_divergence, s.resource_profile_delta],
        [0.0; 5]
    );
    // The fault share is spread over the other five equal weights.
    assert!(close(s.weights.fault_response_divergence, 0.0));
    assert!(close(s.weights.state_transition_mismatch, 0.2));
    assert!(close(s.aggregate, 1.0 / 90.0));

    let with_fault = score(&r, Some(0.5), &Weights::default()).unwrap();
    assert!(close(with_fault.aggregate, (1.0 / 18.0 + 0.5) / 6.0));
}

#[test]
fn pc_and_store_defects_score_their_dimensions() {
    let p = witness(Knob::StrWritesBigEndian);
    let r = run(&p, &CandidateConfig::with_knobs([Knob::StrWritesBigEndian]), 100);
    let s = score(&r, None, &Weights::default()).unwrap();
    let mem = r.discrepancies.iter().filter(|d| matches!(d.field, lockstep_core::diff::Field::Memory(_))).count();
    assert!(mem > 0);
    assert!(close(s.memory_trace_delta, (mem as f64 / r.steps as f64).min(1.0)));
    assert_eq!(s.register_trace_delta, 0.0);

    let p = witness(Knob::PcStep8);
    let r = run(&p, &CandidateConfig::with_knobs([Knob::PcStep8]), 100);
    let s = score(&r, None, &Weights::default()).unwrap();
    let pcs = r.discrepancies.iter().filter(|d| d.field == lockstep_core::diff::Field::Pc).count() as f64;
    assert!(pcs > 0.0);
    let regs = r.discrepancies.iter().filter(|d| matches!(d.field, lockstep_core::diff::Field::Reg(_))).count() as f64;
    assert!(close(s.register_trace_delta, ((regs + pcs) / (16.0 * r.steps as f64)).min(1.0)));
    assert!(s.state_transition_mismatch > 0.0);
}

#[test]
fn weights_are_validated() {
    assert!(Weights::default().validate().is_ok());
    let mut w = Weights::default();
    w.timing_deviation = -0.1;
    assert!(w.validate().is_err());
    w.timing_deviation = f64::NAN;
    assert!(w.validate().is_err());
    assert!(Weights::from_array([0.5; 6]).validate().is_err());
    let text = "schema_version = 1\nregister_trace_delta = 0.5\nmemory_trace_delta = 0.5\n\
        timing_deviation = 0.0\nstate_transition_mismatch = 0.0\n\
        fault_response_divergence = 0.0\nresource_profile_delta = 0.0\n";
    let w = Weights::from_toml(text).unwrap();
    assert_eq!(w.register_trace_delta, 0.5);
    assert!(Weights::from_toml(&text.replace("0.5\nmemory", "0.6\nmemory")).is_err());
    assert!(Weights::from_toml(&text.replace("schema_version = 1", "schema_version = 9")).is_err());
    let r = run(&fig2_program(), &CandidateConfig::clean(), 10);
    assert!(score(&r, None, &Weights::from_array([0.5; 6])).is_err());
}

#[test]
fn zero_score_iff_no_discrepancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut perfect = 0;
    for p in generate_suite(21, 60, GenConfig::default()) {
        let knobs: Vec<Knob> = Knob::ALL.iter().copied().filter(|_| rng.gen_bool(0.15)).collect();
        let r = run(&p, &CandidateConfig::with_knobs(knobs), 1000);
        let s = score(&r, None, &Weights::default()).unwrap();
        assert_eq!(s.is_perfect(), r.is_clean(), "{}", p.name);
        assert!(s.dimensions().iter().all(|d| (0.0..=1.0).contains(d)));
        assert!((0.0..=1.0).contains(&s.aggregate));
        perfect += s.is_perfect() as usize;
    }
    assert!(perfect > 0 && perfect < 60);
}

#[test]
fn set_score_is_the_mean() {
    let cfg = CandidateConfig::with_knobs([Knob::CarryInverted, Knob::PcStep8]);
    let reports: Vec<RunReport> = witness_set().iter().map(|p| run(p, &cfg, 1000)).collect();
    let w = Weights::default();
    let each: Vec<FidelityScore> = reports.iter().map(|r| score(r, None, &w).unwrap()).collect();
    let set = score_set(&reports, None, &w).unwrap();
    let n = each.len() as f64;
    assert!(close(set.aggregate, each.iter().map(|s| s.aggregate).sum::<f64>() / n));
    for i in 0..6 {
        assert!(close(set.dimensions()[i], each.iter().map(|s| s.dimensions()[i]).sum::<f64>() / n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Removing discrepancies from a report never raises any dimension.
    #[test]
    fn fewer_discrepancies_never_score_worse(
        seed in 0u64..1000,
        knob_bits in 1u16..(1 << 12),
        keep in prop::collection::vec(any::<bool>(), 0..64),
    ) {
        let knobs: Vec<Knob> = Knob::ALL.iter().enumerate().filter(|(i, _)| knob_bits >> i & 1 == 1).map(|(_, k)| *k).collect();
        let p = lockstep_core::gen::generate(seed, 0, GenConfig::default());
        let full = run(&p, &CandidateConfig::with_knobs(knobs), 200);
        let mut reduced = full.clone();
        reduced.discrepancies = full
            .discrepancies
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.get(*i).copied().unwrap_or(false))
            .map(|(_, d)| d.clone())
            .collect();
        let w = Weights::default();
        let (a, b) = (score(&reduced, None, &w).unwrap(), score(&full, None, &w).unwrap());
        for (x, y) in a.dimensions().iter().zip(b.dimensions()) {
            prop_assert!(*x <= y);
        }
        prop_assert!(a.aggregate <= b.aggregate);
    }

    /// The feedback states the reference result as a signed value.
    #[test]
    fn feedback_quotes_the_signed_result(a in any::<u32>(), b in any::<u32>()) {
        let r = run(&compare_program(a, b), &CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]), 10);
        let negative = (a.wrapping_sub(b) as i32) < 0;
        prop_assert_eq!(r.is_clean(), !negative);
        if negative {
            let f = render_feedback(&r);
            prop_assert_eq!(f.entries.len(), 1);
            let expected = format!(
                "CMP R0, R1 results in {}. Since the result is negative, the N flag should be set (N=1). The simulation left it at 0.",
                a.wrapping_sub(b) as i32
            );
            prop_assert_eq!(&f.entries[0].message, &expected);
        }
    }
}

#[test]
fn fig2_feedback_text() {
    let r = run(&fig2_program(), &CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]), 100);
    let f = render_feedback(&r);
    assert_eq!(f.summary, "1 discrepancies in 3 steps, first at seq 2 (flag_mismatch)");
    assert_eq!(
        f.entries[0].message,
        "CMP R0, R1 results in -10. Since the result is negative, the N flag should be set (N=1). The simulation left it at 0."
    );
    assert_eq!(f.entries[0].suspected_area, "flag computation (N on CMP)");
    assert!(f.to_string().contains("[seq 2] CMP R0, R1 results in -10."));
}

#[test]
fn carry_feedback_on_equal_compare() {
    let words = [asm::mov_imm(0, 7), asm::cmp_reg(0, 0)];
    let p = Program::from_words("cmp-self", 0, &words).unwrap();
    let r = run(&p, &CandidateConfig::with_knobs([Knob::CarryInverted]), 10);
    let f = render_feedback(&r);
    assert_eq!(f.entries.len(), 1);
    assert_eq!(
        f.entries[0].message,
        "CMP R0, R0 results in 0. Since the subtraction does not borrow, the C flag should be set (C=1). The simulation left it at 0."
    );
}

#[test]
fn other_feedback_shapes() {
    let r = run(&fig2_program(), &CandidateConfig::clean(), 10);
    let f = render_feedback(&r);
    assert!(f.is_empty());
    assert_eq!(f.summary, "no divergence in 3 steps");

    let words = [asm::dp_imm(DpOp::Mov, false, 0, 0, 0), asm::dp_reg(DpOp::Sub, false, 1, 0, 0)];
    let p = Program::from_words("non-s", 0, &words).unwrap();
    let mut cfg = CandidateConfig::with_knobs([Knob::FlagsUpdatedOnNonSOps]);
    let f = render_feedback(&run(&p, &cfg, 10));
    assert_eq!(
        f.entries[0].message,
        "MOV R0, #0 results in 0x00000000. Since MOV R0, #0 does not set flags, the Z flag should be clear (Z=0). The simulation left it at 1."
    );

    cfg = CandidateConfig::with_knobs([Knob::PcStep8]);
    let r = run(&witness(Knob::PcStep8), &cfg, 100);
    let capped = render_feedback_capped(&r, 1);
    assert_eq!(capped.entries.len(), 1);
    assert_eq!(capped.omitted, r.discrepancies.len() - 1);
    assert!(capped.to_string().contains(&format!("... {} more discrepancies omitted", capped.omitted)));
}

#[test]
fn suspects_name_the_injected_knob_for_every_witness() {
    for k in Knob::ALL {
        let r = run(&witness(k), &CandidateConfig::with_knobs([k]), 1000);
        let f = render_feedback(&r);
        assert!(suspects(&f.entries[0]).contains(&k), "{k}: {:?}", f.entries[0]);
    }
}

fn request_for(cfg: &CandidateConfig, programs: &[Program], rejected: Vec<CandidateConfig>) -> SynthesisRequest {
    let reports: Vec<RunReport> = programs.iter().map(|p| run(p, cfg, 1000)).collect();
    let feedback = reports.iter().map(render_feedback).collect();
    SynthesisRequest {
        schema_version: SCHEMA_VERSION,
        iteration: 2,
        config: cfg.clone(),
        score: score_set(&reports, None, &Weights::default()).unwrap(),
        feedback,
        rejected,
    }
}

#[test]
fn builtin_proposals() {
    let cfg = CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate, Knob::StrWritesBigEndian]);
    let req = request_for(&cfg, &[fig2_program()], vec![]);
    assert_eq!(
        BuiltinSynthesizer::propose_for(&req).active,
        CandidateConfig::with_knobs([Knob::StrWritesBigEndian]).active
    );

    // With that flip rejected, the catalog order picks the next active knob.
    let req = request_for(&cfg, &[fig2_program()], vec![CandidateConfig::with_knobs([Knob::StrWritesBigEndian])]);
    assert_eq!(
        BuiltinSynthesizer::propose_for(&req).active,
        CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]).active
    );

    // No divergence on the set: nothing to go on.
    let req = request_for(&cfg, &[witness(Knob::PcStep8)], vec![]);
    assert!(req.feedback.iter().all(|f| f.is_empty()));
    assert!(BuiltinSynthesizer::propose_for(&req).same_knobs(&cfg));

    let json = req.to_json();
    assert_eq!(SynthesisRequest::from_json(&json).unwrap(), req);
    assert!(SynthesisRequest::from_json(&json.replacen("\"schema_version\":1", "\"schema_version\":2", 1)).is_err());
}

#[test]
fn single_knob_repairs_converge_in_two_iterations() {
    let programs = witness_set();
    for k in Knob::ALL {
        let (cfg, history) = repair_loop(
            &CandidateConfig::with_knobs([k]),
            &mut BuiltinSynthesizer,
            &programs,
            &repair_options(10),
        )
        .unwrap();
        assert!(cfg.is_clean(), "{k}");
        assert_eq!(history.stop_reason, RepairStop::Converged);
        assert_eq!(history.iterations.len(), 2, "{k}");
        assert_eq!(cfg.version, 1);
        assert!(history.final_score.is_perfect());
    }
}

#[test]
fn random_multi_knob_repairs_converge_monotonically() {
    let programs = witness_set();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let k = rng.gen_range(1..=5);
        let knobs: Vec<Knob> = Knob::ALL.choose_multiple(&mut rng, k).copied().collect();
        let budget = 2 * k as u32;
        let (cfg, history) = repair_loop(
            &CandidateConfig::with_knobs(knobs.clone()),
            &mut BuiltinSynthesizer,
            &programs,
            &repair_options(budget),
        )
        .unwrap();
        assert!(cfg.is_clean(), "{knobs:?}: {:?}", history.stop_reason);
        assert_eq!(history.stop_reason, RepairStop::Converged);
        let accepted = history.accepted_scores();
        assert!(accepted.windows(2).all(|w| w[1] < w[0]), "{accepted:?}");
        let versions: Vec<u64> = history.iterations.iter().map(|i| i.config.version).collect();
        assert!(versions.windows(2).all(|w| w[1] > w[0]), "{versions:?}");
    }
}

fn external(script: &str, timeout: Duration) -> ExternalSynthesizer {
    let line = shell_words::join(["sh", "-c", script]);
    ExternalSynthesizer::new(&line, timeout).unwrap()
}

#[test]
fn external_synthesizer_outcomes() {
    let programs = vec![fig2_program()];
    let initial = CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("initial.toml");
    std::fs::write(&path, initial.to_toml()).unwrap();

    // Proposing the current config again ends the loop.
    let mut same = external(&format!("cat >/dev/null; cat {}", path.display()), Duration::from_secs(10));
    let (_, h) = repair_loop(&initial, &mut same, &programs, &repair_options(5)).unwrap();
    assert_eq!(h.stop_reason, RepairStop::NoImprovement);
    assert_eq!(h.iterations.len(), 2);
    assert!(!h.iterations[1].accepted);

    // A proposal naming an unknown knob is a failed iteration that uses budget.
    let mut bogus = external(
        "cat >/dev/null; printf 'schema_version = 1\\nversion = 0\\n[knobs]\\nwarp_drive = true\\n'",
        Duration::from_secs(10),
    );
    let (cfg, h) = repair_loop(&initial, &mut bogus, &programs, &repair_options(3)).unwrap();
    assert_eq!(h.stop_reason, RepairStop::BudgetExhausted);
    assert_eq!(h.iterations.len(), 3);
    assert!(h.iterations[1..].iter().all(|i| i.score.is_none() && i.error.as_deref().unwrap().contains("warp_drive")));
    assert!(cfg.same_knobs(&initial));

    let req = request_for(&initial, &programs, vec![]);
    let mut failing = external("cat >/dev/null; echo nope >&2; exit 3", Duration::from_secs(10));
    match failing.propose(&req) {
        Err(SynthesizerError::ExitStatus(m)) => assert!(m.contains("nope"), "{m}"),
        other => panic!("{other:?}"),
    }

    let mut slow = external("sleep 5", Duration::from_millis(200));
    let start = Instant::now();
    assert!(matches!(slow.propose(&req), Err(SynthesizerError::Timeout(_))));
    assert!(start.elapsed() < Duration::from_secs(3));

    // A JSON proposal is accepted too.
    let clean_json = serde_json::to_string(&CandidateConfig::clean()).unwrap();
    let json_path = dir.path().join("clean.json");
    std::fs::write(&json_path, clean_json).unwrap();
    let mut fixer = external(&format!("cat >/dev/null; cat {}", json_path.display()), Duration::from_secs(10));
    let (cfg, h) = repair_loop(&initial, &mut fixer, &programs, &repair_options(5)).unwrap();
    assert!(cfg.is_clean());
    assert_eq!(h.stop_reason, RepairStop::Converged);
}
