//! Basic blocks and control-flow edges.

use std::collections::BTreeSet;

use serde::Serialize;

use super::AnalysisError;
use crate::image::ProgramImage;
use crate::isa::{Flow, Instruction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Terminator {
    /// Falls into the next block without a control transfer.
    Fallthrough,
    Branch,
    Jump,
    Indirect,
    Halt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Jump,
    /// Implied back edge of an annotated loop whose repetition is left to
    /// the ZOLC (the body ends without a branch).
    ZolcBack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Block {
    pub id: usize,
    pub start: u32,
    /// Address of the last instruction.
    pub end: u32,
    pub terminator: Terminator,
    /// Set when the block ends in an indirect jump; its successors are
    /// unknown.
    pub unanalyzable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    #[serde(skip)]
    pub instrs: Vec<Instruction>,
}

impl Cfg {
    pub fn block_at(&self, pc: u32) -> Option<usize> {
        let i = self.blocks.partition_point(|b| b.start <= pc);
        let b = self.blocks.get(i.checked_sub(1)?)?;
        (pc <= b.end).then_some(b.id)
    }

    pub fn block_starting_at(&self, pc: u32) -> Option<usize> {
        self.block_at(pc).filter(|&b| self.blocks[b].start == pc)
    }

    pub fn instr_at(&self, pc: u32) -> Option<Instruction> {
        self.instrs.get((pc / 4) as usize).copied()
    }

    pub fn successors(&self, block: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == block)
    }

    pub fn predecessors(&self, block: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == block)
    }

    pub fn end_bytes(&self) -> u32 {
        (self.instrs.len() * 4) as u32
    }
}

/// Builds the CFG of `image`.
///
/// Leaders are address 0, every in-image branch or jump target, the
/// successor of every control transfer, and the first instruction and
/// successor of every annotated loop body. Annotated loops whose last
/// block has no edge back to the body start get a [`EdgeKind::ZolcBack`]
/// edge.
pub fn build_cfg(image: &ProgramImage) -> Result<Cfg, AnalysisError> {
    let instrs = image.decode_all()?;
    let end = (instrs.len() * 4) as u32;
    let mut ranges = Vec::new();
    for ann in &image.loop_annotations {
        let (s, e) = image
            .loop_range(ann)
            .ok_or_else(|| AnalysisError::AnnotationMismatch(format!("loop {} has unresolved labels", ann.loop_id)))?;
        if s > e || e >= end {
            return Err(AnalysisError::AnnotationMismatch(format!("loop {} has an empty or out-of-range body", ann.loop_id)));
        }
        ranges.push((s, e));
    }

    let mut leaders = BTreeSet::new();
    if !instrs.is_empty() {
        leaders.insert(0u32);
    }
    for (i, instr) in instrs.iter().enumerate() {
        let pc = (i * 4) as u32;
        match instr.flow(pc) {
            Flow::Next => continue,
            Flow::Branch(t) | Flow::Jump(t) if t < end && t % 4 == 0 => {
                leaders.insert(t);
            }
            _ => {}
        }
        leaders.insert(pc + 4);
    }
    for &(s, e) in &ranges {
        leaders.insert(s);
        leaders.insert(e + 4);
    }
    leaders.retain(|&l| l < end);

    let starts: Vec<u32> = leaders.into_iter().collect();
    let mut blocks = Vec::with_capacity(starts.len());
    for (id, &start) in starts.iter().enumerate() {
        let block_end = starts.get(id + 1).copied().unwrap_or(end) - 4;
        let last = instrs[(block_end / 4) as usize];
        let terminator = match last.flow(block_end) {
            Flow::Next => Terminator::Fallthrough,
            Flow::Branch(_) => Terminator::Branch,
            Flow::Jump(_) => Terminator::Jump,
            Flow::Indirect => Terminator::Indirect,
            Flow::Halt => Terminator::Halt,
        };
        blocks.push(Block { id, start, end: block_end, terminator, unanalyzable: terminator == Terminator::Indirect });
    }

    let mut cfg = Cfg { blocks, edges: Vec::new(), instrs };
    let mut edges = Vec::new();
    for b in &cfg.blocks {
        let last = cfg.instrs[(b.end / 4) as usize];
        let next = cfg.block_starting_at(b.end + 4);
        let target = |t: u32| cfg.block_starting_at(t);
        match last.flow(b.end) {
            Flow::Next => {
                if let Some(n) = next {
                    edges.push(Edge { from: b.id, to: n, kind: EdgeKind::Fallthrough });
                }
            }
            Flow::Branch(t) => {
                if let Some(tb) = target(t) {
                    edges.push(Edge { from: b.id, to: tb, kind: EdgeKind::Taken });
                }
                if let Some(n) = next {
                    edges.push(Edge { from: b.id, to: n, kind: EdgeKind::Fallthrough });
                }
            }
            Flow::Jump(t) => {
                if let Some(tb) = target(t) {
                    edges.push(Edge { from: b.id, to: tb, kind: EdgeKind::Jump });
                }
            }
            Flow::Indirect | Flow::Halt => {}
        }
    }
    cfg.edges = edges;

    for &(s, e) in &ranges {
        for b in &cfg.blocks {
            if b.unanalyzable && b.end >= s && b.end <= e {
                return Err(AnalysisError::IndirectJumpInLoopCandidate { pc: b.end });
            }
        }
        let from = cfg.block_at(e).expect("annotation end is inside the image");
        let to = cfg.block_starting_at(s).expect("annotation start is a leader");
        if !cfg.edges.iter().any(|x| x.from == from && x.to == to) {
            cfg.edges.push(Edge { from, to, kind: EdgeKind::ZolcBack });
        }
    }
    cfg.edges.sort();
    cfg.edges.dedup();
    Ok(cfg)
}
