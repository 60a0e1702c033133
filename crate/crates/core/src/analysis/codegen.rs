//! ZOLC configuration generation and the init instruction sequence.

use std::collections::BTreeMap;

use super::tasks::Condition;
use super::{analyze, Analysis, AnalysisError};
use crate::assembler::{assemble_with, encode, AssembleOptions};
use crate::image::ProgramImage;
use crate::isa::{Flow, Instruction, Reg};
use crate::zolc::{
    ExitRecord, Feature, LoopParamRecord, LoopStatus, Resource, TaskLutEntry, TaskRecord, ZolcConfig, ZolcError,
    ZolcVariant,
};

/// Register clobbered by the init sequence to stage each value.
pub const INIT_SCRATCH: Reg = Reg::LINK;

const MAX_LAYOUT_ROUNDS: usize = 16;

fn capacity(resource: Resource, have: usize, limit: usize) -> Result<(), AnalysisError> {
    if have > limit {
        Err(ZolcError::CapacityExceeded { resource, have, limit }.into())
    } else {
        Ok(())
    }
}

/// Builds the controller tables for an analyzed program.
///
/// Checks, in order: loop count, multi-exit/multi-entry support, annotation
/// coverage, loop ends, task and LUT counts, then per-loop exit and entry
/// counts.
pub fn generate_zolc_config(
    analysis: &Analysis,
    image: &ProgramImage,
    variant: ZolcVariant,
) -> Result<ZolcConfig, AnalysisError> {
    let limits = variant.limits();
    let forest = &analysis.forest;
    let tg = &analysis.tasks;
    capacity(Resource::Loops, forest.loops.len(), limits.max_loops)?;
    if !tg.exits.is_empty() && limits.max_exits_per_loop == 0 {
        return Err(ZolcError::VariantUnsupported(Feature::MultiExit).into());
    }
    if forest.loops.iter().any(|l| l.multi_entry) && limits.max_entries_per_loop <= 1 {
        return Err(ZolcError::VariantUnsupported(Feature::MultiEntry).into());
    }

    let mut loops = Vec::with_capacity(forest.loops.len());
    for l in &forest.loops {
        let ann = analysis.annotation_of[l.loop_id]
            .map(|i| &image.loop_annotations[i])
            .ok_or_else(|| AnalysisError::AnnotationMismatch(format!("loop at {:#x} has no .loop directive", l.body_start)))?;
        if let Some(instr) = analysis.cfg.instr_at(l.end_pc) {
            if !matches!(instr.flow(l.end_pc), Flow::Next) {
                return Err(AnalysisError::LoopEndIsBranch { pc: l.end_pc });
            }
        }
        let micro = variant == ZolcVariant::Micro;
        loops.push(LoopParamRecord {
            initial: ann.initial,
            step: ann.step,
            final_: ann.final_,
            current: ann.initial,
            compare: ann.compare,
            index_reg: ann.index_reg,
            parent: l.parent.map(|p| p as u8),
            body_start_pc: micro.then_some(l.body_start),
            after_pc: micro.then_some(l.after_pc()),
            end_pc: micro.then_some(l.end_pc),
        });
    }

    let mut config = ZolcConfig::empty(variant);
    config.loops = loops;
    if variant != ZolcVariant::Micro {
        let taken_sources: Vec<usize> =
            tg.transitions.iter().filter(|t| t.condition == Condition::Taken).map(|t| t.from).collect();
        let stored: Vec<usize> = tg
            .tasks
            .iter()
            .filter(|t| t.eval_loop.is_some() || t.is_decision() || taken_sources.contains(&t.task_id))
            .map(|t| t.task_id)
            .collect();
        capacity(Resource::Tasks, stored.len(), limits.max_tasks)?;
        let slot: BTreeMap<usize, u8> = stored.iter().enumerate().map(|(s, &t)| (t, s as u8)).collect();
        for &t in &stored {
            let task = &tg.tasks[t];
            config.tasks.push(TaskRecord { end_pc: task.end_pc, eval_loop: task.eval_loop.map(|l| l as u8) });
        }
        for tr in &tg.transitions {
            let status = match tr.condition {
                Condition::NotDone { .. } => LoopStatus::NotDone,
                Condition::Done { .. } => LoopStatus::Done,
                Condition::Taken => LoopStatus::Taken,
                _ => continue,
            };
            config.lut.push(TaskLutEntry {
                task: slot[&tr.from],
                status,
                next_task: tr.to.and_then(|t| slot.get(&t).copied()),
                target_pc: tr.target_pc,
            });
        }
        capacity(Resource::LutEntries, config.lut.len(), limits.max_lut_entries)?;
        for x in &tg.exits {
            config.exits.push(ExitRecord {
                loop_id: x.loop_id as u8,
                branch_pc: x.branch_pc,
                exit_next_task: tg.task_at(x.target_pc).and_then(|t| slot.get(&t).copied()),
                exit_target_pc: x.target_pc,
            });
        }
    }
    for l in &forest.loops {
        capacity(Resource::Exits, tg.exits_of(l.loop_id).count(), limits.max_exits_per_loop)?;
        capacity(Resource::Entries, l.entry_targets().len(), limits.max_entries_per_loop)?;
    }
    config.validate()?;
    Ok(config)
}

fn materialize(value: i32, out: &mut Vec<Instruction>) {
    let r = INIT_SCRATCH;
    if let Ok(imm) = i16::try_from(value) {
        out.push(Instruction::Addi { rt: r, rs: Reg::ZERO, imm });
        return;
    }
    let lo = value as i16;
    let hi = (value.wrapping_sub(lo as i32) >> 16) as i16;
    out.push(Instruction::Lui { rt: r, imm: hi });
    if lo != 0 {
        out.push(Instruction::Addi { rt: r, rs: r, imm: lo });
    }
}

/// Straight-line `ZCFG` writes of every stored field followed by `ZRUN`.
/// Each value is staged in [`INIT_SCRATCH`] with one `ADDI` (or `LUI`
/// plus `ADDI` when it does not fit 16 signed bits).
pub fn emit_init_sequence(config: &ZolcConfig) -> Vec<Instruction> {
    let mut out = Vec::new();
    for (port, value) in config.port_writes() {
        materialize(value, &mut out);
        out.push(Instruction::Zcfg { rs: INIT_SCRATCH, port });
    }
    out.push(Instruction::Zrun);
    out
}

/// Assembles a ZOLC-form program and embeds its init sequence at the
/// `.zolc_init` marker (or at address 0 without one).
///
/// The reserved length and the PCs recorded in the tables depend on each
/// other, so layout is repeated until the sequence length is stable.
pub fn build_zolc_image(source: &str, variant: ZolcVariant) -> Result<ProgramImage, AnalysisError> {
    let mut reserve = 0;
    for _ in 0..MAX_LAYOUT_ROUNDS {
        let mut image = assemble_with(source, AssembleOptions { init_reserve: reserve })?;
        let analysis = analyze(&image)?;
        let config = generate_zolc_config(&analysis, &image, variant)?;
        // Nothing to configure: leave the controller idle rather than pay for a lone ZRUN.
        let seq = if config.loops.is_empty() { Vec::new() } else { emit_init_sequence(&config) };
        if seq.len() != reserve {
            reserve = seq.len();
            continue;
        }
        if seq.is_empty() {
            image.zolc_variant = Some(variant.name().to_string());
            return Ok(image);
        }
        let (start, _) = image.init_range.expect("a nonzero reservation sets the init range");
        for (i, instr) in seq.iter().enumerate() {
            image.words[(start / 4) as usize + i] = encode(instr).expect("init sequence fields are in range");
        }
        let end = start + (seq.len() * 4) as u32;
        if let Some(l) = analysis.forest.loops.iter().find(|l| start <= l.end_pc && l.body_start < end) {
            return Err(AnalysisError::InitInsideLoop { loop_id: l.loop_id });
        }
        image.zolc_variant = Some(variant.name().to_string());
        return Ok(image);
    }
    Err(AnalysisError::LayoutDidNotConverge)
}
