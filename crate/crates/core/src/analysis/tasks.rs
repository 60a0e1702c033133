//! Partitioning of the program into tasks at loop boundaries.

use std::collections::BTreeSet;

use serde::Serialize;

use super::cfg::Cfg;
use super::loops::LoopForest;
use super::AnalysisError;
use crate::isa::Flow;

/// Condition under which a task transition fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Condition {
    Always,
    NotDone { loop_id: usize },
    Done { loop_id: usize },
    /// The task's closing branch was taken into a loop's extra entry.
    Taken,
    /// The `k`-th early exit of the loop was taken.
    ExitTaken { loop_id: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Task {
    pub task_id: usize,
    /// First instruction; `None` for a decision task.
    pub start: Option<u32>,
    /// Last instruction; `None` for a decision task.
    pub end_pc: Option<u32>,
    pub blocks: Vec<usize>,
    /// Innermost loop containing the task.
    pub owning_loop: Option<usize>,
    /// Loop whose status is evaluated when the task ends.
    pub eval_loop: Option<usize>,
}

impl Task {
    pub fn is_decision(&self) -> bool {
        self.end_pc.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub from: usize,
    pub condition: Condition,
    /// `None` when control leaves the task-covered program.
    pub to: Option<usize>,
    pub target_pc: u32,
}

/// An early exit: a branch leaving a loop anywhere but its end.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoopExit {
    pub loop_id: usize,
    pub k: usize,
    pub branch_pc: u32,
    pub target_pc: u32,
}

/// An entry into a loop body anywhere but its first instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoopEntry {
    pub loop_id: usize,
    pub branch_pc: u32,
    pub target_pc: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TaskGraph {
    /// Range tasks in address order, then decision tasks.
    pub tasks: Vec<Task>,
    pub transitions: Vec<Transition>,
    pub exits: Vec<LoopExit>,
    pub entries: Vec<LoopEntry>,
}

impl TaskGraph {
    pub fn task_at(&self, pc: u32) -> Option<usize> {
        self.tasks.iter().position(|t| t.start == Some(pc))
    }

    pub fn task_containing(&self, pc: u32) -> Option<usize> {
        self.tasks
            .iter()
            .position(|t| matches!((t.start, t.end_pc), (Some(s), Some(e)) if s <= pc && pc <= e))
    }

    pub fn decision_task(&self, loop_id: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.is_decision() && t.eval_loop == Some(loop_id))
    }

    pub fn exits_of(&self, loop_id: usize) -> impl Iterator<Item = &LoopExit> {
        self.exits.iter().filter(move |x| x.loop_id == loop_id)
    }

    pub fn entries_of(&self, loop_id: usize) -> impl Iterator<Item = &LoopEntry> {
        self.entries.iter().filter(move |x| x.loop_id == loop_id)
    }
}

/// Early exits of every loop. A branch leaving several loops is
/// attributed to the outermost one it leaves.
pub fn loop_exits(cfg: &Cfg, forest: &LoopForest) -> Vec<LoopExit> {
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for l in &forest.loops {
        for &(u, v) in &l.exit_edges {
            // Edges leaving from the end instruction are the normal exit or an
            // enclosing loop's back edge.
            if cfg.blocks[u].end != l.end_pc {
                edges.insert((u, v));
            }
        }
    }
    let mut exits: Vec<LoopExit> = Vec::new();
    for (u, v) in edges {
        let owner = forest
            .loops
            .iter()
            .filter(|l| l.body.contains(&u) && !l.body.contains(&v))
            .filter(|l| cfg.blocks[u].end != l.end_pc)
            .min_by_key(|l| forest.depth(l.loop_id));
        if let Some(l) = owner {
            exits.push(LoopExit { loop_id: l.loop_id, k: 0, branch_pc: cfg.blocks[u].end, target_pc: cfg.blocks[v].start });
        }
    }
    exits.sort_by_key(|x| (x.loop_id, x.branch_pc, x.target_pc));
    for i in 0..exits.len() {
        exits[i].k = exits[..i].iter().filter(|x| x.loop_id == exits[i].loop_id).count();
    }
    exits
}

/// Entries into loop bodies other than at the first instruction.
pub fn loop_entries(cfg: &Cfg, forest: &LoopForest) -> Vec<LoopEntry> {
    let mut out = Vec::new();
    for l in &forest.loops {
        for &(u, v) in &l.entry_edges {
            if cfg.blocks[v].start != l.body_start {
                out.push(LoopEntry { loop_id: l.loop_id, branch_pc: cfg.blocks[u].end, target_pc: cfg.blocks[v].start });
            }
        }
    }
    out
}

/// Cuts the program into tasks at loop boundaries: body starts, loop
/// successors, extra entries and exit targets. Each task is a linear
/// address range with a single last instruction. Loops that share an end
/// instruction get zero-length decision tasks for the enclosing loops so
/// that each task end evaluates exactly one loop.
pub fn extract_tasks(cfg: &Cfg, forest: &LoopForest) -> Result<TaskGraph, AnalysisError> {
    if let Some(l) = forest.loops.iter().find(|l| !l.contiguous) {
        return Err(AnalysisError::RegionNotLinearizable { loop_id: l.loop_id, pc: l.body_start });
    }
    let end = cfg.end_bytes();
    let exits = loop_exits(cfg, forest);
    let entries = loop_entries(cfg, forest);

    let mut leaders: BTreeSet<u32> = BTreeSet::new();
    if end > 0 {
        leaders.insert(0);
    }
    for l in &forest.loops {
        leaders.insert(l.body_start);
        leaders.insert(l.after_pc());
    }
    for e in &entries {
        leaders.insert(e.target_pc);
        leaders.insert(e.branch_pc + 4);
    }
    for x in &exits {
        leaders.insert(x.target_pc);
    }
    leaders.retain(|&pc| pc < end);

    let starts: Vec<u32> = leaders.into_iter().collect();
    let mut tasks: Vec<Task> = Vec::new();
    for (i, &start) in starts.iter().enumerate() {
        let last = starts.get(i + 1).copied().unwrap_or(end) - 4;
        let eval_loop = forest
            .loops
            .iter()
            .filter(|l| l.end_pc == last)
            .max_by_key(|l| forest.depth(l.loop_id))
            .map(|l| l.loop_id);
        tasks.push(Task {
            task_id: i,
            start: Some(start),
            end_pc: Some(last),
            blocks: cfg.blocks.iter().filter(|b| b.start >= start && b.start <= last).map(|b| b.id).collect(),
            owning_loop: forest.innermost_at(start),
            eval_loop,
        });
    }
    for l in &forest.loops {
        let shares_end = forest.loops.iter().any(|c| c.loop_id != l.loop_id && c.end_pc == l.end_pc && forest.is_within(c.loop_id, l.loop_id));
        if shares_end {
            tasks.push(Task {
                task_id: tasks.len(),
                start: None,
                end_pc: None,
                blocks: Vec::new(),
                owning_loop: Some(l.loop_id),
                eval_loop: Some(l.loop_id),
            });
        }
    }

    let mut tg = TaskGraph { tasks, transitions: Vec::new(), exits, entries };
    let mut transitions = Vec::new();
    let done_edge = |tg: &TaskGraph, loop_id: usize| -> (Option<usize>, u32) {
        let l = &forest.loops[loop_id];
        match l.parent.map(|p| &forest.loops[p]) {
            Some(p) if p.end_pc == l.end_pc => (tg.decision_task(p.loop_id), l.after_pc()),
            _ => (tg.task_at(l.after_pc()), l.after_pc()),
        }
    };
    for t in &tg.tasks {
        if let Some(lid) = t.eval_loop {
            let l = &forest.loops[lid];
            transitions.push(Transition {
                from: t.task_id,
                condition: Condition::NotDone { loop_id: lid },
                to: tg.task_at(l.body_start),
                target_pc: l.body_start,
            });
            let (to, target_pc) = done_edge(&tg, lid);
            transitions.push(Transition { from: t.task_id, condition: Condition::Done { loop_id: lid }, to, target_pc });
        }
        let (Some(start), Some(last)) = (t.start, t.end_pc) else { continue };
        for x in tg.exits.iter().filter(|x| x.branch_pc >= start && x.branch_pc <= last) {
            transitions.push(Transition {
                from: t.task_id,
                condition: Condition::ExitTaken { loop_id: x.loop_id, k: x.k },
                to: tg.task_at(x.target_pc),
                target_pc: x.target_pc,
            });
        }
        if t.eval_loop.is_some() {
            continue;
        }
        let is_exit = |target: u32| tg.exits.iter().any(|x| x.branch_pc == last && x.target_pc == target);
        let is_entry = |target: u32| tg.entries.iter().any(|x| x.branch_pc == last && x.target_pc == target);
        let always = |target: u32, transitions: &mut Vec<Transition>| {
            if target < end {
                transitions.push(Transition {
                    from: t.task_id,
                    condition: Condition::Always,
                    to: tg.task_containing(target),
                    target_pc: target,
                });
            }
        };
        match cfg.instr_at(last).map(|i| i.flow(last)) {
            Some(Flow::Next) => always(last + 4, &mut transitions),
            Some(Flow::Branch(target)) => {
                if is_entry(target) {
                    transitions.push(Transition {
                        from: t.task_id,
                        condition: Condition::Taken,
                        to: tg.task_at(target),
                        target_pc: target,
                    });
                } else if !is_exit(target) {
                    always(target, &mut transitions);
                }
                always(last + 4, &mut transitions);
            }
            Some(Flow::Jump(target)) => {
                if is_entry(target) {
                    transitions.push(Transition {
                        from: t.task_id,
                        condition: Condition::Taken,
                        to: tg.task_at(target),
                        target_pc: target,
                    });
                } else if !is_exit(target) {
                    always(target, &mut transitions);
                }
            }
            _ => {}
        }
    }
    tg.transitions = transitions;
    Ok(tg)
}
