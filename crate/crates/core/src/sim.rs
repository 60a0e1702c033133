//! Cycle-accurate execution on the three core variants.
//!
//! Timing is single-issue: one cycle per instruction, `mem_latency` for
//! loads and stores, plus `branch_penalty` for every taken branch or jump.
//! A ZOLC redirect is free: the instruction at the redirect target issues
//! in the cycle right after the task-end instruction.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ProgramImage;
use crate::isa::{decode, Flow, Instruction, Reg};
use crate::machine::{digest_outputs, run_functional, MachineError, MachineState, DEFAULT_MEM_BYTES};
use crate::zolc::{RedirectKind, TaskId, ZolcEngine, ZolcError, ZolcMode, ZolcVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreKind {
    /// Compare-and-branch loop control only.
    Default,
    /// Adds the `BDEC` branch-decrement instruction.
    Hrdwil,
    Zolc(ZolcVariant),
}

impl CoreKind {
    pub const ALL: [CoreKind; 5] = [
        CoreKind::Default,
        CoreKind::Hrdwil,
        CoreKind::Zolc(ZolcVariant::Micro),
        CoreKind::Zolc(ZolcVariant::Lite),
        CoreKind::Zolc(ZolcVariant::Full),
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoreKind::Default => "default",
            CoreKind::Hrdwil => "hrdwil",
            CoreKind::Zolc(v) => v.name(),
        }
    }

    fn allows(self, instr: &Instruction) -> bool {
        let zolc = matches!(instr, Instruction::Zcfg { .. } | Instruction::Zrun | Instruction::Zstop);
        let bdec = matches!(instr, Instruction::Bdec { .. });
        match self {
            CoreKind::Default => !zolc && !bdec,
            CoreKind::Hrdwil => !zolc,
            CoreKind::Zolc(_) => !bdec,
        }
    }
}

impl fmt::Display for CoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CoreKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown core `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreVariant {
    pub kind: CoreKind,
    pub branch_penalty: u32,
    pub mem_latency: u32,
}

impl CoreVariant {
    pub const DEFAULT_BRANCH_PENALTY: u32 = 2;
    pub const DEFAULT_MEM_LATENCY: u32 = 1;

    pub fn new(kind: CoreKind) -> Self {
        CoreVariant {
            kind,
            branch_penalty: Self::DEFAULT_BRANCH_PENALTY,
            mem_latency: Self::DEFAULT_MEM_LATENCY,
        }
    }

    pub fn with_penalty(mut self, branch_penalty: u32) -> Self {
        self.branch_penalty = branch_penalty;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Zolc(#[from] ZolcError),
    #[error("{mnemonic} at {pc:#x} is not supported by the {core} core")]
    UnsupportedInstruction { pc: u32, mnemonic: &'static str, core: &'static str },
    #[error("image was built for {image} but the core is {core}")]
    VariantMismatch { image: String, core: &'static str },
    #[error("cycle budget of {0} exhausted")]
    CycleBudgetExceeded(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TraceEvent {
    None,
    Taken,
    /// `chain` counts the loop evaluations this redirect resolved.
    Redirect { from: Option<TaskId>, to: Option<TaskId>, exit: bool, chain: usize },
    Zcfg,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let task = |t: Option<TaskId>| t.map_or("-".to_string(), |t| t.to_string());
        match self {
            TraceEvent::None => f.write_str("none"),
            TraceEvent::Taken => f.write_str("taken"),
            TraceEvent::Redirect { from, to, exit, .. } => {
                write!(f, "redirect({}->{}){}", task(*from), task(*to), if *exit { " exit" } else { "" })
            }
            TraceEvent::Zcfg => f.write_str("zcfg"),
        }
    }
}

/// One retired instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    /// Cycle in which the instruction issued.
    pub cycle: u64,
    pub pc: u32,
    pub instr: Instruction,
    /// Cycles charged, including any taken-branch penalty.
    pub cost: u32,
    pub taken: bool,
    pub event: TraceEvent,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {:#06x}, {}, {}", self.cycle, self.pc, self.instr, self.event)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub core: String,
    pub cycles: u64,
    pub dyn_instr: u64,
    pub redirects: u64,
    pub taken_branches: u64,
    pub init_overhead_cycles: u64,
    /// Longest chain of loop evaluations resolved by one redirect.
    pub max_chain: usize,
    pub final_state_digest: String,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub report: CycleReport,
    pub state: MachineState,
    pub trace: Vec<TraceEntry>,
    /// Final controller state on ZOLC cores.
    pub engine: Option<ZolcEngine>,
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub max_cycles: u64,
    pub mem_bytes: usize,
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { max_cycles: 10_000_000, mem_bytes: DEFAULT_MEM_BYTES, trace: true }
    }
}

/// Runs `image` to `HALT` with tracing enabled.
pub fn simulate(image: &ProgramImage, core: &CoreVariant, max_cycles: u64) -> Result<Simulation, SimError> {
    simulate_with(image, core, SimOptions { max_cycles, ..SimOptions::default() })
}

pub fn simulate_with(image: &ProgramImage, core: &CoreVariant, opts: SimOptions) -> Result<Simulation, SimError> {
    let core_name = core.kind.name();
    if let (CoreKind::Zolc(v), Some(built)) = (core.kind, &image.zolc_variant) {
        if built != v.name() {
            return Err(SimError::VariantMismatch { image: built.clone(), core: core_name });
        }
    }
    let mut state = MachineState::for_image(image, opts.mem_bytes)?;
    let mut engine = match core.kind {
        CoreKind::Zolc(v) => Some(ZolcEngine::new(v)),
        _ => None,
    };
    let in_init = |pc: u32| image.init_range.is_some_and(|(s, e)| pc >= s && pc < e);
    let mut report = CycleReport { core: core_name.to_string(), ..CycleReport::default() };
    let mut trace = Vec::new();

    while !state.halted {
        if state.cycle >= opts.max_cycles {
            return Err(SimError::CycleBudgetExceeded(opts.max_cycles));
        }
        let pc = state.pc;
        let word = image.fetch(pc).ok_or(MachineError::PcOutOfBounds(pc))?;
        let instr = decode(word).map_err(MachineError::from)?;
        if !core.kind.allows(&instr) {
            return Err(SimError::UnsupportedInstruction { pc, mnemonic: instr.opcode().mnemonic(), core: core_name });
        }
        let issue = state.cycle;
        let effect = state.execute(instr)?;
        let mut cost = if instr.is_memory() { core.mem_latency } else { 1 };
        let mut event = TraceEvent::None;
        if let Some(e) = engine.as_mut() {
            match instr {
                Instruction::Zcfg { rs, port } => {
                    e.config_write(port, state.reg(rs))?;
                    event = TraceEvent::Zcfg;
                }
                Instruction::Zrun => {
                    for (r, v) in e.activate()? {
                        state.set_reg(r, v);
                    }
                }
                Instruction::Zstop => e.deactivate(),
                _ => {}
            }
        }
        if effect.taken {
            cost += core.branch_penalty;
            report.taken_branches += 1;
            event = TraceEvent::Taken;
        }
        if let Some(e) = engine.as_mut() {
            if let Some(r) = e.on_fetch(pc, effect.taken)? {
                for &(reg, v) in &r.writes {
                    state.set_reg(reg, v);
                }
                state.pc = r.target_pc;
                report.redirects += 1;
                report.max_chain = report.max_chain.max(r.chain);
                event = TraceEvent::Redirect {
                    from: r.from_task,
                    to: r.new_task,
                    exit: r.kind == RedirectKind::Exit,
                    chain: r.chain,
                };
            }
        }
        state.cycle += cost as u64;
        let init_instr = match image.init_range {
            Some(_) => in_init(pc),
            None => matches!(instr, Instruction::Zcfg { .. } | Instruction::Zrun | Instruction::Zstop),
        };
        if init_instr {
            report.init_overhead_cycles += cost as u64;
        }
        if opts.trace {
            trace.push(TraceEntry { cycle: issue, pc, instr, cost, taken: effect.taken, event });
        }
    }
    report.cycles = state.cycle;
    report.dyn_instr = state.dyn_instr;
    report.final_state_digest = digest_outputs(&state.output_values(&image.outputs)?);
    Ok(Simulation { report, state, trace, engine })
}

impl Simulation {
    pub fn engine_mode(&self) -> Option<ZolcMode> {
        self.engine.as_ref().map(|e| e.mode)
    }
}

/// Outcome of an equivalence check between a reference image and a
/// variant image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub cause: Option<String>,
    pub reference_digest: Option<String>,
    pub variant_digest: Option<String>,
}

impl Verdict {
    fn fail(cause: impl Into<String>) -> Self {
        Verdict { pass: false, cause: Some(cause.into()), reference_digest: None, variant_digest: None }
    }
}

/// Runs the functional oracle on `reference` and the timed core on
/// `variant`, then compares the designated outputs bit for bit.
pub fn verify_equivalence(reference: &ProgramImage, variant: &ProgramImage, core: &CoreVariant, max_cycles: u64) -> Verdict {
    if reference.outputs != variant.outputs {
        return Verdict::fail("output declarations differ");
    }
    let oracle = match run_functional(reference, max_cycles) {
        Ok(s) => s,
        Err(e) => return Verdict::fail(format!("reference: {e}")),
    };
    let sim = match simulate_with(variant, core, SimOptions { max_cycles, trace: false, ..SimOptions::default() }) {
        Ok(s) => s,
        Err(e) => return Verdict::fail(format!("variant: {e}")),
    };
    let expected = match oracle.output_values(&reference.outputs) {
        Ok(v) => v,
        Err(e) => return Verdict::fail(format!("reference outputs: {e}")),
    };
    let actual = match sim.state.output_values(&variant.outputs) {
        Ok(v) => v,
        Err(e) => return Verdict::fail(format!("variant outputs: {e}")),
    };
    let cause = expected.iter().zip(&actual).position(|(a, b)| a != b).map(|i| {
        format!("output value {i} differs: expected {}, got {}", expected[i], actual[i])
    });
    Verdict {
        pass: cause.is_none(),
        cause,
        reference_digest: Some(digest_outputs(&expected)),
        variant_digest: Some(digest_outputs(&actual)),
    }
}

/// Loop bookkeeping found in a trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoopOverhead {
    pub instructions: u64,
    pub penalty_cycles: u64,
}

impl LoopOverhead {
    pub fn cycles(&self) -> u64 {
        self.instructions + self.penalty_cycles
    }
}

fn is_backward_branch(e: &TraceEntry) -> bool {
    matches!(e.instr.flow(e.pc), Flow::Branch(t) if t <= e.pc)
}

/// Counts the iteration-initiating pattern: backward conditional branches,
/// `BDEC`, and the counter updates feeding them (`ADDI` of a register onto
/// itself or `SLT` into a register that a backward branch tests), with
/// each one's taken penalty.
pub fn loop_pattern_overhead(trace: &[TraceEntry]) -> LoopOverhead {
    let counters: BTreeSet<Reg> = trace
        .iter()
        .filter(|e| is_backward_branch(e))
        .flat_map(|e| e.instr.sources())
        .filter(|r| *r != Reg::ZERO)
        .collect();
    let mut out = LoopOverhead::default();
    for e in trace {
        let bookkeeping = match e.instr {
            Instruction::Bdec { .. } => true,
            _ if is_backward_branch(e) => true,
            Instruction::Addi { rt, rs, .. } => rt == rs && counters.contains(&rt),
            Instruction::Slt { rd, .. } => counters.contains(&rd),
            _ => false,
        };
        if bookkeeping {
            out.instructions += 1;
            out.penalty_cycles += (e.cost - 1) as u64 * e.taken as u64;
        }
    }
    out
}

/// Bookkeeping cycles in a trace; see [`loop_pattern_overhead`].
pub fn count_loop_pattern_overhead(trace: &[TraceEntry]) -> u64 {
    loop_pattern_overhead(trace).cycles()
}

/// Cycles spent on instructions in `[start, end]`.
pub fn region_cycles(trace: &[TraceEntry], start: u32, end: u32) -> u64 {
    trace.iter().filter(|e| e.pc >= start && e.pc <= end).map(|e| e.cost as u64).sum()
}

/// Taken branches and jumps issued from `[start, end]`.
pub fn region_taken(trace: &[TraceEntry], start: u32, end: u32) -> u64 {
    trace.iter().filter(|e| e.pc >= start && e.pc <= end && e.taken).count() as u64
}
