use std::collections::BTreeSet;

use lockstep_core::candidate::{witness, CandidateConfig, CandidateModel, Knob};
use lockstep_core::diff::{
    lockstep_run, Field, FieldMask, GoldenTarget, RunMode, RunOptions, RunReport, StopReason, Target,
};
use lockstep_core::gen::{generate_suite, GenConfig};
use lockstep_core::isa::{asm, Condition, DpOp, Flag, Golden, Machine, Program};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATA: u32 = 0x40;
const BUDGET: u64 = 12;

/// Small instruction pool with fixed registers, indexed by position.
fn pool(choice: usize, at: u32) -> u32 {
    match choice {
        0 => asm::movs_imm(0, 0),
        1 => asm::movs_imm(1, 0x8000_0000),
        2 => asm::dp_reg(DpOp::Sub, true, 0, 0, 1),
        3 => asm::dp_reg(DpOp::Add, false, 2, 0, 1),
        4 => asm::cmp_reg(0, 1),
        5 => asm::str(1, 3, DATA as i32),
        6 => asm::ldr(2, 3, DATA as i32 + 4),
        7 => asm::with_cond(asm::b(at, at + 8), Condition::Eq),
        _ => unreachable!(),
    }
}
const POOL: usize = 8;

fn small_program(choices: &[usize]) -> Program {
    let mut words: Vec<u32> = choices
        .iter()
        .enumerate()
        .map(|(i, &c)| pool(c, i as u32 * 4))
        .collect();
    words.push(asm::SPIN);
    words.resize(DATA as usize / 4, 0);
    words.extend([0x1234_5678, 0x0000_8001]);
    let name = format!("small-{choices:?}");
    Program::from_words(name, 0, &words)
        .unwrap()
        .with_exit(choices.len() as u32 * 4)
}

fn all_small_programs(max_len: usize) -> Vec<Program> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|p| {
                (0..POOL).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
        out.extend(frontier.iter().map(|c| small_program(c)));
    }
    out
}

fn configs() -> Vec<CandidateConfig> {
    let mut out = vec![CandidateConfig::clean()];
    out.extend(Knob::ALL.iter().map(|k| CandidateConfig::with_knobs([*k])));
    out.push(CandidateConfig::with_knobs([Knob::CarryInverted, Knob::StrWritesBigEndian]));
    out.push(CandidateConfig::with_knobs([Knob::CondEqNeSwapped, Knob::ZFromLowByteOnly]));
    out
}

fn run(program: &Program, cfg: &CandidateConfig, options: &RunOptions) -> RunReport {
    let mut reference = GoldenTarget::new();
    let mut candidate = CandidateModel::instantiate(cfg);
    lockstep_run(&mut reference, &mut candidate, program, options).unwrap()
}

/// Every (seq, field) where the two machines disagree after a step, found by
/// comparing whole states and whole memory images.
fn independent_diffs(program: &Program, cfg: &CandidateConfig, budget: u64) -> (BTreeSet<(u64, Field)>, u64) {
    let mut golden = Machine::new(program.image.clone(), program.entry);
    let mut cand = CandidateModel::instantiate(cfg);
    cand.load(program).unwrap();
    let mut diffs = BTreeSet::new();
    let mut seq = 0;
    while golden.state.pc() != program.exit && seq < budget {
        let g = golden.step_with(&Golden);
        let c = cand.step();
        let (gs, cs) = (golden.state, *cand.state());
        for r in 0..15 {
            if gs.regs[r] != cs.regs[r] {
                diffs.insert((seq, Field::Reg(r as u8)));
            }
        }
        for f in Flag::ALL {
            if gs.flags.get(f) != cs.flags.get(f) {
                diffs.insert((seq, Field::Flag(f)));
            }
        }
        if gs.pc() != cs.pc() {
            diffs.insert((seq, Field::Pc));
        }
        let (gm, cm) = (golden.mem.bytes(), cand.memory().bytes());
        for (i, (a, b)) in gm.chunks(4).zip(cm.chunks(4)).enumerate() {
            if a != b {
                diffs.insert((seq, Field::Memory(i as u32 * 4)));
            }
        }
        let gk = g.as_ref().err().map(|e| e.kind);
        let ck = c.as_ref().err().map(|e| e.kind);
        if gk != ck {
            diffs.insert((seq, Field::Fault));
        }
        seq += 1;
        if gk.is_some() || ck.is_some() {
            break;
        }
    }
    (diffs, seq)
}

fn reported(report: &RunReport) -> BTreeSet<(u64, Field)> {
    report.discrepancies.iter().map(|d| (d.seq, d.field)).collect()
}

#[test]
fn small_program_space_is_reported_exactly() {
    let programs = all_small_programs(4);
    assert_eq!(programs.len(), 8 + 64 + 512 + 4096);
    let options = RunOptions::new(BUDGET, RunMode::RunToBudget);
    let mut diverging = 0;
    for p in &programs {
        for cfg in configs() {
            let report = run(p, &cfg, &options);
            let (expected, steps) = independent_diffs(p, &cfg, BUDGET);
            assert_eq!(reported(&report), expected, "{} {:?}", p.name, cfg);
            assert_eq!(report.steps, steps, "{}", p.name);
            diverging += !expected.is_empty() as usize;
        }
    }
    assert!(diverging > 1000, "pool too weak: {diverging} diverging runs");
}

#[test]
fn fail_fast_stops_at_the_first_divergence() {
    let ff = RunOptions::new(BUDGET, RunMode::FailFast);
    let full = RunOptions::new(BUDGET, RunMode::RunToBudget);
    for p in all_small_programs(3) {
        for cfg in configs() {
            let a = run(&p, &cfg, &ff);
            let b = run(&p, &cfg, &full);
            let Some(first) = b.first_discrepancy() else {
                assert_eq!(a, RunReport { mode: RunMode::FailFast, ..b });
                continue;
            };
            let at_first: Vec<_> = b.discrepancies.iter().filter(|d| d.seq == first.seq).cloned().collect();
            assert_eq!(a.discrepancies, at_first, "{}", p.name);
            assert_eq!(a.steps, first.seq + 1);
            match a.stop_reason {
                StopReason::FirstDivergence { seq } => assert_eq!(seq, first.seq),
                StopReason::Error { seq, .. } => assert_eq!(seq, first.seq),
                ref other => panic!("{}: {other:?}", p.name),
            }
            assert_eq!(a.reference_trace[..], b.reference_trace[..a.reference_trace.len()]);
            assert_eq!(a.candidate_trace[..], b.candidate_trace[..a.candidate_trace.len()]);
        }
    }
}

#[test]
fn runs_are_deterministic_and_serialize_losslessly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in generate_suite(9, 20, GenConfig::default()) {
        let knobs: Vec<Knob> = Knob::ALL.iter().copied().filter(|_| rng.gen_bool(0.2)).collect();
        let cfg = CandidateConfig::with_knobs(knobs);
        let options = RunOptions::new(1000, RunMode::RunToBudget);
        let a = run(&p, &cfg, &options);
        let b = run(&p, &cfg, &options);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(RunReport::from_json(&a.to_json()).unwrap(), a);
        let jsonl = a.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 2 + a.reference_trace.len() + a.candidate_trace.len());
        for line in lines {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
    }
}

#[test]
fn masked_fields_are_not_reported() {
    let p = witness(Knob::StrWritesBigEndian);
    let cfg = CandidateConfig::with_knobs([Knob::StrWritesBigEndian]);
    let full = run(&p, &cfg, &RunOptions::new(100, RunMode::RunToBudget));
    assert!(full.discrepancies.iter().any(|d| matches!(d.field, Field::Memory(_))));
    let mut options = RunOptions::new(100, RunMode::RunToBudget);
    options.mask = FieldMask {
        memory: false,
        ..FieldMask::ALL
    };
    let masked = run(&p, &cfg, &options);
    assert!(masked.discrepancies.iter().all(|d| !matches!(d.field, Field::Memory(_))));
    options.mask = FieldMask::NONE;
    let cfg = CandidateConfig::with_knobs(Knob::ALL);
    assert!(run(&p, &cfg, &options).discrepancies.iter().all(|d| d.field == Field::Fault));
}

#[test]
fn clean_candidate_reports_nothing_on_generated_programs() {
    let options = RunOptions::new(1000, RunMode::RunToBudget);
    for p in generate_suite(77, 50, GenConfig::default()) {
        let r = run(&p, &CandidateConfig::clean(), &options);
        assert!(r.is_clean(), "{}", p.name);
        assert!(r.metrics.is_zero());
        assert_eq!(r.reference_trace, r.candidate_trace);
    }
}
