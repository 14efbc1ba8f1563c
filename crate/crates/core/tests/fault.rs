use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use lockstep_core::candidate::{fig2_program, CandidateConfig, Knob};
use lockstep_core::diff::{GoldenTarget, RunMode, RunOptions, Target};
use lockstep_core::fault::{
    apply_fault, generate_campaign, run_fault_campaign, run_fault_campaign_with, FaultCampaign,
    FaultLocation, FaultSpec, InjectionKind,
};
use lockstep_core::gen::{generate, generate_suite, GenConfig};
use lockstep_core::isa::{Flag, Program};
use lockstep_core::rsp::{serve_connection, RegisterLayout, RspReference, StubOptions};
use proptest::prelude::*;

fn options() -> RunOptions {
    RunOptions::new(500, RunMode::RunToBudget)
}

fn single(program: &Program, spec: FaultSpec) -> FaultCampaign {
    FaultCampaign {
        schema_version: 1,
        program: program.id(),
        seed: None,
        specs: vec![spec],
    }
}

#[test]
fn clean_candidate_never_diverges_under_faults() {
    for p in generate_suite(4, 10, GenConfig::default()) {
        let campaign = generate_campaign(&p, 99, 40, 500);
        let report = run_fault_campaign(&p, &campaign, &CandidateConfig::clean(), &options()).unwrap();
        assert_eq!(report.errors, 0);
        assert_eq!(report.fault_response_divergence, 0.0, "{}", p.name);
    }
}

#[test]
fn stuck_n_flag_masks_the_fig2_defect() {
    let p = fig2_program();
    let spec = FaultSpec {
        location: FaultLocation::Flag(Flag::N),
        kind: InjectionKind::StuckAt0,
        bit: 0,
        trigger_seq: 0,
    };
    for cfg in [CandidateConfig::clean(), CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate])] {
        let report = run_fault_campaign(&p, &single(&p, spec), &cfg, &options()).unwrap();
        let run = report.results[0].report.as_ref().unwrap();
        assert!(run.is_clean());
        assert!(!run.reference_trace[2].flags.n);
        assert_eq!(report.fault_response_divergence, 0.0);
    }
    let unfaulted = lockstep_core::scoring::evaluate_golden(&CandidateConfig::clean(), &[p], &options()).unwrap();
    assert!(unfaulted[0].reference_trace[2].flags.n);
}

#[test]
fn flipping_an_unread_word_changes_nothing_observable() {
    let p = generate(3, 0, GenConfig::default());
    let last = p.image.base() + p.image.len() as u32 - 4;
    // The last data word. The check below confirms no load saw the flip.
    let spec = FaultSpec {
        location: FaultLocation::Memory(last),
        kind: InjectionKind::Bitflip,
        bit: 17,
        trigger_seq: 0,
    };
    let report = run_fault_campaign(&p, &single(&p, spec), &CandidateConfig::clean(), &options()).unwrap();
    let run = report.results[0].report.as_ref().unwrap();
    assert!(run.is_clean());
    let loaded = run
        .reference_trace
        .iter()
        .any(|e| e.reg_writes.iter().any(|w| w.value == p.image.read_word(last).unwrap() ^ 1 << 17));
    assert!(!loaded);
}

#[test]
fn noop_fault_on_a_defective_candidate_always_diverges() {
    let p = fig2_program();
    let spec = FaultSpec {
        location: FaultLocation::Register(12),
        kind: InjectionKind::StuckAt0,
        bit: 31,
        trigger_seq: 0,
    };
    let cfg = CandidateConfig::with_knobs([Knob::CmpSkipsNUpdate]);
    let report = run_fault_campaign(&p, &single(&p, spec), &cfg, &options()).unwrap();
    assert_eq!(report.fault_response_divergence, 1.0);
    let campaign = generate_campaign(&p, 1, 30, 500);
    let report = run_fault_campaign(&p, &campaign, &cfg, &options()).unwrap();
    assert!(report.fault_response_divergence > 0.0);
}

#[test]
fn campaigns_are_seed_deterministic() {
    let p = generate(8, 2, GenConfig::default());
    let a = generate_campaign(&p, 1234, 50, 500);
    assert_eq!(a, generate_campaign(&p, 1234, 50, 500));
    assert_ne!(a.specs, generate_campaign(&p, 1235, 50, 500).specs);
    assert_ne!(a.specs, generate_campaign(&generate(8, 3, GenConfig::default()), 1234, 50, 500).specs);
    let cfg = CandidateConfig::with_knobs([Knob::CarryInverted, Knob::PcStep8]);
    let r1 = run_fault_campaign(&p, &a, &cfg, &options()).unwrap();
    let r2 = run_fault_campaign(&p, &a, &cfg, &options()).unwrap();
    assert_eq!(r1.to_json(), r2.to_json());
    assert!(a.specs.iter().all(|s| s.validate(500).is_ok()));
}

#[test]
fn campaign_documents_are_validated() {
    let p = fig2_program();
    let text = r#"
schema_version = 1

[[spec]]
location = { flag = "N" }
kind = "stuck_at_0"
trigger_seq = 0

[[spec]]
location = { register = 3 }
kind = "bitflip"
bit = 4
trigger_seq = 1

[[spec]]
location = { memory = 8 }
kind = "stuck_at_1"
bit = 31
trigger_seq = 2
"#;
    let c = FaultCampaign::from_toml(text, &p).unwrap();
    assert_eq!(c.specs.len(), 3);
    assert_eq!(c.specs[1].location, FaultLocation::Register(3));
    assert!(c.validate(3).is_ok());
    assert!(c.validate(2).is_err());
    assert!(FaultCampaign::from_toml(&text.replace("register = 3", "register = 16"), &p)
        .unwrap()
        .validate(10)
        .is_err());
    assert!(FaultCampaign::from_toml(&text.replace("memory = 8", "memory = 6"), &p)
        .unwrap()
        .validate(10)
        .is_err());
    assert!(FaultCampaign::from_toml(&text.replace("schema_version = 1", "schema_version = 2"), &p).is_err());
    assert!(run_fault_campaign(&p, &c, &CandidateConfig::clean(), &RunOptions::new(2, RunMode::RunToBudget)).is_err());
}

#[test]
fn loopback_reference_gives_the_same_campaign_report() {
    let p = generate(5, 1, GenConfig::default());
    let campaign = generate_campaign(&p, 7, 16, 300);
    let cfg = CandidateConfig::with_knobs([Knob::StrWritesBigEndian]);
    let run = RunOptions::new(300, RunMode::RunToBudget);
    let local = run_fault_campaign(&p, &campaign, &cfg, &run).unwrap();
    let program = p.clone();
    let remote = run_fault_campaign_with(&p, &campaign, &cfg, &run, &move || {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let program = program.clone();
        thread::spawn(move || {
            let mut target = GoldenTarget::new();
            target.load(&program).unwrap();
            let (stream, _) = listener.accept().unwrap();
            serve_connection(&mut target, stream, &StubOptions::default()).unwrap();
        });
        let r = RspReference::connect(&addr, RegisterLayout::arm(), Duration::from_secs(5))?;
        Ok(Box::new(r) as Box<dyn Target>)
    })
    .unwrap();
    assert_eq!(remote.to_json(), local.to_json());
}

fn spec_strategy() -> impl Strategy<Value = FaultSpec> {
    let location = prop_oneof![
        (0u8..16).prop_map(FaultLocation::Register),
        (0usize..4).prop_map(|i| FaultLocation::Flag(Flag::ALL[i])),
        (0u32..128).prop_map(|w| FaultLocation::Memory(w * 4)),
    ];
    let kind = prop_oneof![
        Just(InjectionKind::Bitflip),
        Just(InjectionKind::StuckAt0),
        Just(InjectionKind::StuckAt1),
    ];
    (location, kind, 0u8..32).prop_map(|(location, kind, bit)| FaultSpec {
        location,
        kind,
        bit,
        trigger_seq: 0,
    })
}

proptest! {
    /// A fault changes exactly the addressed bit (or nothing, for a stuck-at
    /// that already holds) and leaves the rest of the state alone.
    #[test]
    fn injection_touches_only_its_bit(seed in 0u64..500, steps in 0usize..40, spec in spec_strategy()) {
        let p = generate(seed, 0, GenConfig::default());
        let mut t = GoldenTarget::new();
        t.load(&p).unwrap();
        for _ in 0..steps {
            t.step().unwrap();
        }
        let before = t.read_state().unwrap();
        let mem_before = t.machine.mem.bytes().to_vec();
        let touched = apply_fault(&mut t, &spec).unwrap();
        let after = t.read_state().unwrap();
        let mem_after = t.machine.mem.bytes().to_vec();

        let (old, new, rest_equal) = match spec.location {
            FaultLocation::Register(n) => {
                let mut a = after.regs;
                a[n as usize] = before.regs[n as usize];
                (before.regs[n as usize], after.regs[n as usize],
                 a == before.regs && after.flags == before.flags && mem_after == mem_before)
            }
            FaultLocation::Flag(f) => {
                let mut fl = after.flags;
                fl.set(f, before.flags.get(f));
                (before.flags.get(f) as u32, after.flags.get(f) as u32,
                 fl == before.flags && after.regs == before.regs && mem_after == mem_before)
            }
            FaultLocation::Memory(a) => {
                let i = a as usize;
                let w = |m: &[u8]| u32::from_le_bytes(m[i..i + 4].try_into().unwrap());
                let mut m = mem_after.clone();
                m[i..i + 4].copy_from_slice(&mem_before[i..i + 4]);
                (w(&mem_before), w(&mem_after), m == mem_before && after == before)
            }
        };
        prop_assert!(rest_equal);
        let bit = if matches!(spec.location, FaultLocation::Flag(_)) { 0 } else { spec.bit };
        let mask = 1u32 << bit;
        let expected = match spec.kind {
            InjectionKind::Bitflip => old ^ mask,
            InjectionKind::StuckAt0 => old & !mask,
            InjectionKind::StuckAt1 => old | mask,
        };
        prop_assert_eq!(new, expected);
        prop_assert_eq!(touched.is_none(), old == new);
    }
}
