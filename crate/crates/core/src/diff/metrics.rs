use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::{Flag, TraceEvent};

/// Differences between a reference trace and a candidate trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceDeltaMetrics {
    /// (seq, register) cells whose written values differ.
    pub register_delta_count: u64,
    /// (seq, address) cells whose stored values differ.
    pub memory_delta_count: u64,
    /// (seq, flag) cells whose post-step values differ.
    pub flag_delta_count: u64,
    /// Steps whose (pc, next pc) pair differs, plus any length overhang.
    pub transition_mismatches: u64,
    /// |ref cycles - cand cycles| / max(1, ref cycles).
    pub timing_deviation: f64,
}

impl TraceDeltaMetrics {
    pub fn is_zero(&self) -> bool {
        self.register_delta_count == 0
            && self.memory_delta_count == 0
            && self.flag_delta_count == 0
            && self.transition_mismatches == 0
            && self.timing_deviation == 0.0
    }
}

fn differing_cells<K: Ord + Copy>(a: &BTreeMap<K, u32>, b: &BTreeMap<K, u32>) -> u64 {
    let mut n = 0;
    for (k, v) in a {
        if b.get(k) != Some(v) {
            n += 1;
        }
    }
    n + b.keys().filter(|k| !a.contains_key(k)).count() as u64
}

/// Compares two traces over their common prefix; the overhang of the longer
/// trace counts as transition mismatches.
pub fn trace_delta(reference: &[TraceEvent], candidate: &[TraceEvent]) -> TraceDeltaMetrics {
    let mut m = TraceDeltaMetrics::default();
    for (r, c) in reference.iter().zip(candidate) {
        let regs = |e: &TraceEvent| e.reg_writes.iter().map(|w| (w.reg, w.value)).collect();
        m.register_delta_count += differing_cells::<u8>(&regs(r), &regs(c));
        let mems = |e: &TraceEvent| e.mem_writes.iter().map(|w| (w.addr, w.value)).collect();
        m.memory_delta_count += differing_cells::<u32>(&mems(r), &mems(c));
        m.flag_delta_count += Flag::ALL
            .iter()
            .filter(|f| r.flags.get(**f) != c.flags.get(**f))
            .count() as u64;
        if (r.pc, r.next_pc) != (c.pc, c.next_pc) {
            m.transition_mismatches += 1;
        }
    }
    m.transition_mismatches += reference.len().abs_diff(candidate.len()) as u64;
    let ref_cycles: u64 = reference.iter().map(|e| e.cycles).sum();
    let cand_cycles: u64 = candidate.iter().map(|e| e.cycles).sum();
    m.timing_deviation = ref_cycles.abs_diff(cand_cycles) as f64 / ref_cycles.max(1) as f64;
    m
}
