//! Control-flow analysis: CFG construction, loop detection, task
//! extraction and ZOLC configuration generation.

mod cfg;
mod codegen;
mod loops;
mod tasks;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use cfg::{build_cfg, Block, Cfg, Edge, EdgeKind, Terminator};
pub use codegen::{build_zolc_image, emit_init_sequence, generate_zolc_config, INIT_SCRATCH};
pub use loops::{find_loops, Loop, LoopForest};
pub use tasks::{extract_tasks, loop_entries, loop_exits, Condition, LoopEntry, LoopExit, Task, TaskGraph, Transition};

use crate::assembler::AsmError;
use crate::image::ProgramImage;
use crate::isa::DecodeError;
use crate::zolc::{ZolcConfig, ZolcError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Zolc(#[from] ZolcError),
    #[error("indirect jump at {pc:#x} inside a loop body")]
    IndirectJumpInLoopCandidate { pc: u32 },
    #[error("loop {loop_id} at {pc:#x} does not occupy a single address range")]
    RegionNotLinearizable { loop_id: usize, pc: u32 },
    #[error("loop annotations disagree with the program: {0}")]
    AnnotationMismatch(String),
    #[error("loop ending at {pc:#x} ends with a control transfer")]
    LoopEndIsBranch { pc: u32 },
    #[error("init sequence overlaps loop {loop_id}")]
    InitInsideLoop { loop_id: usize },
    #[error("init sequence layout did not settle")]
    LayoutDidNotConverge,
}

/// Everything derived from one image.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub cfg: Cfg,
    pub forest: LoopForest,
    pub tasks: TaskGraph,
    /// Index into `image.loop_annotations` for each detected loop.
    pub annotation_of: Vec<Option<usize>>,
}

/// Runs CFG construction, loop detection and task extraction. When the
/// image carries `.loop` directives they must match the detected loops
/// one to one (body range, extra entries and early exits).
pub fn analyze(image: &ProgramImage) -> Result<Analysis, AnalysisError> {
    let cfg = build_cfg(image)?;
    let forest = find_loops(&cfg);
    let tasks = extract_tasks(&cfg, &forest)?;
    let annotation_of = match_annotations(image, &forest, &tasks)?;
    Ok(Analysis { cfg, forest, tasks, annotation_of })
}

fn match_annotations(
    image: &ProgramImage,
    forest: &LoopForest,
    tg: &TaskGraph,
) -> Result<Vec<Option<usize>>, AnalysisError> {
    let mut out = vec![None; forest.loops.len()];
    if image.loop_annotations.is_empty() {
        return Ok(out);
    }
    let mismatch = |msg: String| Err(AnalysisError::AnnotationMismatch(msg));
    if image.loop_annotations.len() != forest.loops.len() {
        return mismatch(format!(
            "{} loops declared, {} found",
            image.loop_annotations.len(),
            forest.loops.len()
        ));
    }
    let resolve = |label: &str| {
        image.addr_of(label).ok_or_else(|| AnalysisError::AnnotationMismatch(format!("unknown label `{label}`")))
    };
    for (ai, ann) in image.loop_annotations.iter().enumerate() {
        let (s, e) = (resolve(&ann.body_start)?, resolve(&ann.body_end)?);
        let Some(l) = forest.loops.iter().find(|l| l.body_start == s && l.end_pc == e) else {
            return mismatch(format!("loop {} spans {s:#x}..={e:#x} but no such loop exists", ann.loop_id));
        };
        if out[l.loop_id].replace(ai).is_some() {
            return mismatch(format!("loop {} is declared twice", ann.loop_id));
        }
        let declared: BTreeSet<u32> = ann.entries.iter().map(|x| resolve(x)).collect::<Result<_, _>>()?;
        let found: BTreeSet<u32> = tg.entries_of(l.loop_id).map(|x| x.target_pc).collect();
        if declared != found {
            return mismatch(format!("loop {} entries {declared:x?} declared, {found:x?} found", ann.loop_id));
        }
        let declared: BTreeSet<(u32, u32)> =
            ann.exits.iter().map(|(b, t)| Ok((resolve(b)?, resolve(t)?))).collect::<Result<_, AnalysisError>>()?;
        let found: BTreeSet<(u32, u32)> = tg.exits_of(l.loop_id).map(|x| (x.branch_pc, x.target_pc)).collect();
        if declared != found {
            return mismatch(format!("loop {} exits {declared:x?} declared, {found:x?} found", ann.loop_id));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopSummary {
    pub loop_id: usize,
    pub parent: Option<usize>,
    pub body_start: u32,
    pub end_pc: u32,
    pub headers: Vec<u32>,
    pub multi_entry: bool,
    pub exits: usize,
}

/// Machine-readable analysis dump.
#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub tasks: Vec<Task>,
    pub transitions: Vec<Transition>,
    pub loops: Vec<LoopSummary>,
    pub lut: Vec<crate::zolc::TaskLutEntry>,
    pub exits: Vec<LoopExit>,
    pub config: Option<ZolcConfig>,
}

impl AnalysisReport {
    pub fn new(analysis: &Analysis, config: Option<ZolcConfig>) -> Self {
        let loops = analysis
            .forest
            .loops
            .iter()
            .map(|l| LoopSummary {
                loop_id: l.loop_id,
                parent: l.parent,
                body_start: l.body_start,
                end_pc: l.end_pc,
                headers: l.headers.iter().map(|&h| analysis.cfg.blocks[h].start).collect(),
                multi_entry: l.multi_entry,
                exits: analysis.tasks.exits_of(l.loop_id).count(),
            })
            .collect();
        AnalysisReport {
            tasks: analysis.tasks.tasks.clone(),
            transitions: analysis.tasks.transitions.clone(),
            loops,
            lut: config.as_ref().map(|c| c.lut.clone()).unwrap_or_default(),
            exits: analysis.tasks.exits.clone(),
            config,
        }
    }

    /// Line-oriented dump: one record per line, keyword first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        let pc = |v: Option<u32>| v.map_or("-".to_string(), |v| format!("{v:#06x}"));
        for l in &self.loops {
            let _ = writeln!(
                s,
                "loop {} parent={} body={:#06x}..{:#06x} headers={:x?} multi_entry={} exits={}",
                l.loop_id,
                opt(l.parent),
                l.body_start,
                l.end_pc,
                l.headers,
                l.multi_entry,
                l.exits
            );
        }
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "task {} start={} end={} owner={} eval={}",
                t.task_id,
                pc(t.start),
                pc(t.end_pc),
                opt(t.owning_loop),
                opt(t.eval_loop)
            );
        }
        for t in &self.transitions {
            let _ = writeln!(s, "transition {} -> {} on {:?} target={:#06x}", t.from, opt(t.to), t.condition, t.target_pc);
        }
        for x in &self.exits {
            let _ = writeln!(s, "exit loop={} k={} branch={:#06x} target={:#06x}", x.loop_id, x.k, x.branch_pc, x.target_pc);
        }
        if let Some(c) = &self.config {
            let _ = writeln!(s, "variant {}", c.variant);
            for (i, l) in c.loops.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "record {i} reg={} init={} step={} final={} cmp={} parent={}",
                    l.index_reg,
                    l.initial,
                    l.step,
                    l.final_,
                    l.compare,
                    l.parent.map_or("-".to_string(), |p| p.to_string())
                );
            }
            for (i, t) in c.tasks.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "slot {i} end={} eval={}",
                    pc(t.end_pc),
                    t.eval_loop.map_or("-".to_string(), |l| l.to_string())
                );
            }
            for e in &c.lut {
                let _ = writeln!(
                    s,
                    "lut task={} status={:?} next={} target={:#06x}",
                    e.task,
                    e.status,
                    e.next_task.map_or("-".to_string(), |t| t.to_string()),
                    e.target_pc
                );
            }
            for x in &c.exits {
                let _ = writeln!(
                    s,
                    "exitrec loop={} branch={:#06x} next={} target={:#06x}",
                    x.loop_id,
                    x.branch_pc,
                    x.exit_next_task.map_or("-".to_string(), |t| t.to_string()),
                    x.exit_target_pc
                );
            }
        }
        s
    }
}
