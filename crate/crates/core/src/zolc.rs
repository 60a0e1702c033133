//! Behavioral model of the zero-overhead loop controller.
//!
//! The controller holds four tables, loaded through a configuration port
//! while in init mode and consulted on every retired instruction once
//! active:
//!
//! * loop parameter records (bounds, live index, index register),
//! * the task table (each task's end PC and the loop it evaluates),
//! * the task-selection LUT, keyed by `(task, status)`,
//! * exit records for early exits from loop bodies.
//!
//! # Configuration port
//!
//! `ZCFG rs, port` writes `rs` to the 16-bit port address
//! `table[15:12] | entry[11:6] | field[5:0]`.
//!
//! | table | entry | fields |
//! |-------|-------|--------|
//! | 0 loops | loop id | 0 initial, 1 step, 2 final, 3 compare, 4 index_reg, 5 parent, 6 body_start_pc, 7 after_pc, 8 end_pc |
//! | 1 tasks | task id | 0 end_pc, 1 eval_loop |
//! | 2 LUT | row | 0 task, 1 status, 2 next_task, 3 target_pc |
//! | 3 exits | row | 0 loop_id, 1 branch_pc, 2 next_task, 3 target_pc |
//!
//! Optional values (`parent`, `end_pc`, `eval_loop`, `next_task`) use -1
//! for "none". Compare codes are those of [`Compare::code`]; status codes
//! are 0 not-done, 1 done, 2 taken.
//!
//! uZOLC stores a single loop record with fields 0-4 and 6-8 and no other
//! table; its not-done/done LUT pair is implied by the record. ZOLClite
//! and ZOLCfull store loop fields 0-5 plus the task, LUT and (full only)
//! exit tables.
//!
//! # Storage widths
//!
//! | record | layout | bytes |
//! |--------|--------|-------|
//! | uZOLC loop | initial, step, final, current (4 each); body_start, after, end PCs (4 each); index_reg 1; compare 1 | 30 |
//! | loop | initial, step, final, current (4 each); compare 1; index_reg 1; parent 1 | 19 |
//! | task | end_pc 4; eval_loop 1 | 5 |
//! | LUT row | task 1; status 1; next_task 1; target_pc 4 | 7 |
//! | exit | loop_id 1; branch_pc 4; next_task 1; target_pc 4 | 10 |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::Compare;
use crate::isa::Reg;

pub type TaskId = u8;
pub type LoopId = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZolcVariant {
    /// Single loop, no nesting.
    Micro,
    /// Structured nests without multi-entry or multi-exit loops.
    Lite,
    /// Arbitrary nests with up to four entries and exits per loop.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantLimits {
    pub max_tasks: usize,
    pub max_lut_entries: usize,
    pub max_loops: usize,
    pub max_exits_per_loop: usize,
    pub max_entries_per_loop: usize,
    pub max_exit_records: usize,
}

impl ZolcVariant {
    pub const ALL: [ZolcVariant; 3] = [ZolcVariant::Micro, ZolcVariant::Lite, ZolcVariant::Full];

    pub fn limits(self) -> VariantLimits {
        match self {
            ZolcVariant::Micro => VariantLimits {
                max_tasks: 0,
                max_lut_entries: 0,
                max_loops: 1,
                max_exits_per_loop: 0,
                max_entries_per_loop: 1,
                max_exit_records: 0,
            },
            ZolcVariant::Lite => VariantLimits {
                max_tasks: 32,
                max_lut_entries: 32,
                max_loops: 8,
                max_exits_per_loop: 0,
                max_entries_per_loop: 1,
                max_exit_records: 0,
            },
            ZolcVariant::Full => VariantLimits {
                max_tasks: 32,
                max_lut_entries: 32,
                max_loops: 8,
                max_exits_per_loop: 4,
                max_entries_per_loop: 4,
                max_exit_records: 32,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ZolcVariant::Micro => "uzolc",
            ZolcVariant::Lite => "zolc-lite",
            ZolcVariant::Full => "zolc-full",
        }
    }

    fn loop_fields(self) -> &'static [u16] {
        match self {
            ZolcVariant::Micro => &[
                field::INITIAL,
                field::STEP,
                field::FINAL,
                field::COMPARE,
                field::INDEX_REG,
                field::BODY_START,
                field::AFTER,
                field::END,
            ],
            _ => &[field::INITIAL, field::STEP, field::FINAL, field::COMPARE, field::INDEX_REG, field::PARENT],
        }
    }
}

impl fmt::Display for ZolcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZolcVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ZolcVariant::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown ZOLC variant `{s}`"))
    }
}

/// Storage in bytes of the variant's tables, per the widths documented at
/// module level.
pub fn storage_bytes(variant: ZolcVariant) -> usize {
    const MICRO_LOOP: usize = 4 * 4 + 3 * 4 + 1 + 1;
    const LOOP: usize = 4 * 4 + 1 + 1 + 1;
    const TASK: usize = 4 + 1;
    const LUT_ROW: usize = 1 + 1 + 1 + 4;
    const EXIT: usize = 1 + 4 + 1 + 4;
    let l = variant.limits();
    match variant {
        ZolcVariant::Micro => MICRO_LOOP,
        _ => l.max_loops * LOOP + l.max_tasks * TASK + l.max_lut_entries * LUT_ROW + l.max_exit_records * EXIT,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    Loops,
    Tasks,
    LutEntries,
    Exits,
    Entries,
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::Loops => "loops",
            Resource::Tasks => "tasks",
            Resource::LutEntries => "lut entries",
            Resource::Exits => "exits",
            Resource::Entries => "entries",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    MultiExit,
    MultiEntry,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feature::MultiExit => "multi-exit",
            Feature::MultiEntry => "multi-entry",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZolcError {
    #[error("capacity exceeded: {have} {resource} requested, limit {limit}")]
    CapacityExceeded { resource: Resource, have: usize, limit: usize },
    #[error("variant does not support {0} loops")]
    VariantUnsupported(Feature),
    #[error("unknown field {field} in table {table}")]
    BadField { table: u16, field: u16 },
    #[error("bad value {value} for table {table} field {field}")]
    BadValue { table: u16, field: u16, value: i32 },
    #[error("configuration write outside init mode")]
    NotInInitMode,
    #[error("no LUT entry for task {task} with status {status:?}")]
    MissingLutEntry { task: TaskId, status: LoopStatus },
    #[error("transition chain exceeded {0} steps")]
    ChainLimitExceeded(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Outcome of a task end, used as the LUT key together with the task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopStatus {
    NotDone,
    Done,
    /// The task ended on a taken branch (entry into a multi-entry loop).
    Taken,
}

impl LoopStatus {
    pub fn code(self) -> i32 {
        match self {
            LoopStatus::NotDone => 0,
            LoopStatus::Done => 1,
            LoopStatus::Taken => 2,
        }
    }

    pub fn from_code(code: i32) -> Option<LoopStatus> {
        match code {
            0 => Some(LoopStatus::NotDone),
            1 => Some(LoopStatus::Done),
            2 => Some(LoopStatus::Taken),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopParamRecord {
    pub initial: i32,
    pub step: i32,
    pub final_: i32,
    pub current: i32,
    pub compare: Compare,
    pub index_reg: Reg,
    pub parent: Option<LoopId>,
    /// uZOLC only: the implied LUT pair's targets and the body's end.
    pub body_start_pc: Option<u32>,
    pub after_pc: Option<u32>,
    pub end_pc: Option<u32>,
}

impl Default for LoopParamRecord {
    fn default() -> Self {
        LoopParamRecord {
            initial: 0,
            step: 0,
            final_: 0,
            current: 0,
            compare: Compare::Lt,
            index_reg: Reg::ZERO,
            parent: None,
            body_start_pc: None,
            after_pc: None,
            end_pc: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    /// `None` for a zero-length decision task reached only by chaining.
    pub end_pc: Option<u32>,
    pub eval_loop: Option<LoopId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLutEntry {
    pub task: TaskId,
    pub status: LoopStatus,
    pub next_task: Option<TaskId>,
    pub target_pc: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub loop_id: LoopId,
    pub branch_pc: u32,
    pub exit_next_task: Option<TaskId>,
    pub exit_target_pc: u32,
}

/// The contents of the controller's tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZolcConfig {
    pub variant: ZolcVariant,
    pub loops: Vec<LoopParamRecord>,
    pub tasks: Vec<TaskRecord>,
    pub lut: Vec<TaskLutEntry>,
    pub exits: Vec<ExitRecord>,
}

pub mod table {
    pub const LOOPS: u16 = 0;
    pub const TASKS: u16 = 1;
    pub const LUT: u16 = 2;
    pub const EXITS: u16 = 3;
}

pub mod field {
    pub const INITIAL: u16 = 0;
    pub const STEP: u16 = 1;
    pub const FINAL: u16 = 2;
    pub const COMPARE: u16 = 3;
    pub const INDEX_REG: u16 = 4;
    pub const PARENT: u16 = 5;
    pub const BODY_START: u16 = 6;
    pub const AFTER: u16 = 7;
    pub const END: u16 = 8;

    pub const TASK_END: u16 = 0;
    pub const TASK_EVAL: u16 = 1;

    pub const LUT_TASK: u16 = 0;
    pub const LUT_STATUS: u16 = 1;
    pub const LUT_NEXT: u16 = 2;
    pub const LUT_TARGET: u16 = 3;

    pub const EXIT_LOOP: u16 = 0;
    pub const EXIT_BRANCH: u16 = 1;
    pub const EXIT_NEXT: u16 = 2;
    pub const EXIT_TARGET: u16 = 3;
}

pub fn port_address(table: u16, entry: usize, field: u16) -> u16 {
    debug_assert!(table < 16 && entry < 64 && field < 64);
    (table << 12) | ((entry as u16) << 6) | field
}

pub fn split_port(port: u16) -> (u16, usize, u16) {
    (port >> 12, ((port >> 6) & 0x3F) as usize, port & 0x3F)
}

fn opt_u8(v: Option<u8>) -> i32 {
    v.map_or(-1, i32::from)
}

fn opt_pc(v: Option<u32>) -> i32 {
    v.map_or(-1, |pc| pc as i32)
}

impl ZolcConfig {
    pub fn empty(variant: ZolcVariant) -> Self {
        ZolcConfig { variant, loops: Vec::new(), tasks: Vec::new(), lut: Vec::new(), exits: Vec::new() }
    }

    /// Every stored field as a `(port, value)` write, in table order.
    pub fn port_writes(&self) -> Vec<(u16, i32)> {
        let mut w = Vec::new();
        for (i, l) in self.loops.iter().enumerate() {
            for &f in self.variant.loop_fields() {
                let v = match f {
                    field::INITIAL => l.initial,
                    field::STEP => l.step,
                    field::FINAL => l.final_,
                    field::COMPARE => l.compare.code(),
                    field::INDEX_REG => l.index_reg.index() as i32,
                    field::PARENT => opt_u8(l.parent),
                    field::BODY_START => opt_pc(l.body_start_pc),
                    field::AFTER => opt_pc(l.after_pc),
                    _ => opt_pc(l.end_pc),
                };
                w.push((port_address(table::LOOPS, i, f), v));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            w.push((port_address(table::TASKS, i, field::TASK_END), opt_pc(t.end_pc)));
            w.push((port_address(table::TASKS, i, field::TASK_EVAL), opt_u8(t.eval_loop)));
        }
        for (i, e) in self.lut.iter().enumerate() {
            w.push((port_address(table::LUT, i, field::LUT_TASK), e.task as i32));
            w.push((port_address(table::LUT, i, field::LUT_STATUS), e.status.code()));
            w.push((port_address(table::LUT, i, field::LUT_NEXT), opt_u8(e.next_task)));
            w.push((port_address(table::LUT, i, field::LUT_TARGET), e.target_pc as i32));
        }
        for (i, x) in self.exits.iter().enumerate() {
            w.push((port_address(table::EXITS, i, field::EXIT_LOOP), x.loop_id as i32));
            w.push((port_address(table::EXITS, i, field::EXIT_BRANCH), x.branch_pc as i32));
            w.push((port_address(table::EXITS, i, field::EXIT_NEXT), opt_u8(x.exit_next_task)));
            w.push((port_address(table::EXITS, i, field::EXIT_TARGET), x.exit_target_pc as i32));
        }
        w
    }

    pub fn stored_fields(&self) -> usize {
        self.port_writes().len()
    }

    /// Checks table sizes against the variant and structural consistency,
    /// including that every loop-evaluating task has both LUT rows.
    pub fn validate(&self) -> Result<(), ZolcError> {
        let limits = self.variant.limits();
        let cap = |resource, have: usize, limit: usize| {
            if have > limit {
                Err(ZolcError::CapacityExceeded { resource, have, limit })
            } else {
                Ok(())
            }
        };
        cap(Resource::Loops, self.loops.len(), limits.max_loops)?;
        cap(Resource::Tasks, self.tasks.len(), limits.max_tasks)?;
        cap(Resource::LutEntries, self.lut.len(), limits.max_lut_entries)?;
        cap(Resource::Exits, self.exits.len(), limits.max_exit_records)?;
        for (i, _) in self.loops.iter().enumerate() {
            let n = self.exits.iter().filter(|x| x.loop_id as usize == i).count();
            cap(Resource::Exits, n, limits.max_exits_per_loop)?;
        }
        for (i, l) in self.loops.iter().enumerate() {
            if l.step == 0 {
                return Err(ZolcError::InvalidConfig(format!("loop {i} has zero step")));
            }
            if l.parent.is_some_and(|p| p as usize >= self.loops.len()) {
                return Err(ZolcError::InvalidConfig(format!("loop {i} has unknown parent")));
            }
            if self.variant == ZolcVariant::Micro
                && (l.body_start_pc.is_none() || l.after_pc.is_none() || l.end_pc.is_none())
            {
                return Err(ZolcError::InvalidConfig(format!("loop {i} lacks its PCs")));
            }
        }
        check_lut_totality(&self.tasks, &self.lut)
    }
}

/// Every task that evaluates a loop must have a not-done and a done row,
/// and every row must reference configured tasks.
pub fn check_lut_totality(tasks: &[TaskRecord], lut: &[TaskLutEntry]) -> Result<(), ZolcError> {
    for e in lut {
        let bad = e.task as usize >= tasks.len() || e.next_task.is_some_and(|t| t as usize >= tasks.len());
        if bad {
            return Err(ZolcError::InvalidConfig(format!("LUT row references unknown task: {e:?}")));
        }
    }
    for (i, t) in tasks.iter().enumerate() {
        if t.eval_loop.is_some() {
            for status in [LoopStatus::NotDone, LoopStatus::Done] {
                if !lut.iter().any(|e| e.task as usize == i && e.status == status) {
                    return Err(ZolcError::MissingLutEntry { task: i as TaskId, status });
                }
            }
        } else if t.end_pc.is_none() {
            return Err(ZolcError::InvalidConfig(format!("decision task {i} evaluates no loop")));
        }
    }
    Ok(())
}

/// Steps a loop's index. On `NotDone` the new index is `current + step`;
/// on `Done` it resets to `initial` so the loop can be re-entered.
pub fn index_update(rec: &LoopParamRecord) -> (i32, LoopStatus) {
    let candidate = rec.current.wrapping_add(rec.step);
    if rec.compare.holds(candidate, rec.final_) {
        (candidate, LoopStatus::NotDone)
    } else {
        (rec.initial, LoopStatus::Done)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZolcMode {
    Init,
    Active,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedirectKind {
    /// A task ended and the LUT selected the successor.
    TaskSwitch,
    /// A taken early-exit branch left one or more loops.
    Exit,
}

/// A next-PC substitution issued to PC decode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redirect {
    pub kind: RedirectKind,
    pub target_pc: u32,
    /// Index write-backs into the register file, applied in order.
    pub writes: Vec<(Reg, i32)>,
    pub from_task: Option<TaskId>,
    pub new_task: Option<TaskId>,
    /// Number of loop evaluations resolved by this redirect.
    pub chain: usize,
}

/// Runtime state of one controller instance.
#[derive(Clone, Debug, Serialize)]
pub struct ZolcEngine {
    pub variant: ZolcVariant,
    pub mode: ZolcMode,
    pub current_task: Option<TaskId>,
    pub loops: Vec<Option<LoopParamRecord>>,
    pub tasks: Vec<Option<TaskRecord>>,
    pub lut: Vec<Option<TaskLutEntry>>,
    pub exits: Vec<Option<ExitRecord>>,
}

fn slot<T: Default>(table: &mut Vec<Option<T>>, index: usize) -> &mut T {
    if table.len() <= index {
        table.resize_with(index + 1, || None);
    }
    table[index].get_or_insert_with(T::default)
}

impl Default for TaskLutEntry {
    fn default() -> Self {
        TaskLutEntry { task: 0, status: LoopStatus::NotDone, next_task: None, target_pc: 0 }
    }
}

impl ZolcEngine {
    /// A controller in init mode with empty tables.
    pub fn new(variant: ZolcVariant) -> Self {
        ZolcEngine {
            variant,
            mode: ZolcMode::Init,
            current_task: None,
            loops: Vec::new(),
            tasks: Vec::new(),
            lut: Vec::new(),
            exits: Vec::new(),
        }
    }

    /// Handles a `ZCFG` write.
    pub fn config_write(&mut self, port: u16, value: i32) -> Result<(), ZolcError> {
        if self.mode != ZolcMode::Init {
            return Err(ZolcError::NotInInitMode);
        }
        let (tbl, entry, fld) = split_port(port);
        let limits = self.variant.limits();
        let (resource, limit) = match tbl {
            table::LOOPS => (Resource::Loops, limits.max_loops),
            table::TASKS => (Resource::Tasks, limits.max_tasks),
            table::LUT => (Resource::LutEntries, limits.max_lut_entries),
            table::EXITS => (Resource::Exits, limits.max_exit_records),
            _ => return Err(ZolcError::BadField { table: tbl, field: fld }),
        };
        if entry >= limit {
            return Err(ZolcError::CapacityExceeded { resource, have: entry + 1, limit });
        }
        let field_count = match tbl {
            table::LOOPS => u16::MAX,
            table::TASKS => 2,
            _ => 4,
        };
        if fld >= field_count || (tbl == table::LOOPS && !self.variant.loop_fields().contains(&fld)) {
            return Err(ZolcError::BadField { table: tbl, field: fld });
        }
        let bad_value = || ZolcError::BadValue { table: tbl, field: fld, value };
        let opt_u8 = |v: i32| -> Result<Option<u8>, ZolcError> {
            match v {
                -1 => Ok(None),
                0..=255 => Ok(Some(v as u8)),
                _ => Err(bad_value()),
            }
        };
        let opt_pc = |v: i32| if v == -1 { None } else { Some(v as u32) };
        match tbl {
            table::LOOPS => {
                let rec = slot(&mut self.loops, entry);
                match fld {
                    field::INITIAL => rec.initial = value,
                    field::STEP => rec.step = value,
                    field::FINAL => rec.final_ = value,
                    field::COMPARE => rec.compare = Compare::from_code(value).ok_or_else(bad_value)?,
                    field::INDEX_REG => {
                        rec.index_reg = u8::try_from(value).ok().and_then(Reg::new).ok_or_else(bad_value)?
                    }
                    field::PARENT => rec.parent = opt_u8(value)?,
                    field::BODY_START => rec.body_start_pc = opt_pc(value),
                    field::AFTER => rec.after_pc = opt_pc(value),
                    _ => rec.end_pc = opt_pc(value),
                }
            }
            table::TASKS => {
                let rec = slot(&mut self.tasks, entry);
                match fld {
                    field::TASK_END => rec.end_pc = opt_pc(value),
                    field::TASK_EVAL => rec.eval_loop = opt_u8(value)?,
                    _ => return Err(ZolcError::BadField { table: tbl, field: fld }),
                }
            }
            table::LUT => {
                let rec = slot(&mut self.lut, entry);
                match fld {
                    field::LUT_TASK => rec.task = opt_u8(value)?.ok_or_else(bad_value)?,
                    field::LUT_STATUS => rec.status = LoopStatus::from_code(value).ok_or_else(bad_value)?,
                    field::LUT_NEXT => rec.next_task = opt_u8(value)?,
                    field::LUT_TARGET => rec.target_pc = value as u32,
                    _ => return Err(ZolcError::BadField { table: tbl, field: fld }),
                }
            }
            _ => {
                let rec = slot(&mut self.exits, entry);
                match fld {
                    field::EXIT_LOOP => rec.loop_id = opt_u8(value)?.ok_or_else(bad_value)?,
                    field::EXIT_BRANCH => rec.branch_pc = value as u32,
                    field::EXIT_NEXT => rec.exit_next_task = opt_u8(value)?,
                    field::EXIT_TARGET => rec.exit_target_pc = value as u32,
                    _ => return Err(ZolcError::BadField { table: tbl, field: fld }),
                }
            }
        }
        Ok(())
    }

    /// Snapshot of the configured tables.
    pub fn config(&self) -> ZolcConfig {
        fn dense<T: Clone>(t: &[Option<T>]) -> Vec<T> {
            t.iter().flatten().cloned().collect()
        }
        ZolcConfig {
            variant: self.variant,
            loops: dense(&self.loops),
            tasks: dense(&self.tasks),
            lut: dense(&self.lut),
            exits: dense(&self.exits),
        }
    }

    /// Handles `ZRUN`: validates the tables, resets every loop index to its
    /// initial value and returns the matching register write-backs.
    pub fn activate(&mut self) -> Result<Vec<(Reg, i32)>, ZolcError> {
        if self.mode != ZolcMode::Init {
            return Err(ZolcError::NotInInitMode);
        }
        let holes = |n: usize, len: usize| n != len;
        if holes(self.loops.iter().flatten().count(), self.loops.len())
            || holes(self.tasks.iter().flatten().count(), self.tasks.len())
            || holes(self.lut.iter().flatten().count(), self.lut.len())
            || holes(self.exits.iter().flatten().count(), self.exits.len())
        {
            return Err(ZolcError::InvalidConfig("tables have unconfigured gaps".into()));
        }
        if self.variant == ZolcVariant::Micro {
            if let Some(Some(rec)) = self.loops.first() {
                let (Some(body), Some(after), Some(end)) = (rec.body_start_pc, rec.after_pc, rec.end_pc) else {
                    return Err(ZolcError::InvalidConfig("uZOLC loop lacks its PCs".into()));
                };
                self.tasks = vec![Some(TaskRecord { end_pc: Some(end), eval_loop: Some(0) })];
                self.lut = vec![
                    Some(TaskLutEntry { task: 0, status: LoopStatus::NotDone, next_task: Some(0), target_pc: body }),
                    Some(TaskLutEntry { task: 0, status: LoopStatus::Done, next_task: None, target_pc: after }),
                ];
            }
        }
        self.config().validate_structure()?;
        let mut writes = Vec::new();
        for rec in self.loops.iter_mut().flatten() {
            rec.current = rec.initial;
            writes.push((rec.index_reg, rec.initial));
        }
        self.mode = ZolcMode::Active;
        self.current_task = None;
        Ok(writes)
    }

    /// Handles `ZSTOP`: back to init mode, tables retained.
    pub fn deactivate(&mut self) {
        self.mode = ZolcMode::Init;
        self.current_task = None;
    }

    fn lut_lookup(&self, task: TaskId, status: LoopStatus) -> Option<&TaskLutEntry> {
        self.lut.iter().flatten().find(|e| e.task == task && e.status == status)
    }

    /// Resets `root` and every loop nested inside it; returns write-backs.
    fn reset_nest(&mut self, root: LoopId) -> Vec<(Reg, i32)> {
        let mut writes = Vec::new();
        let parents: Vec<Option<LoopId>> = self.loops.iter().map(|l| l.as_ref().and_then(|r| r.parent)).collect();
        let inside = |mut id: LoopId| loop {
            if id == root {
                return true;
            }
            match parents.get(id as usize).copied().flatten() {
                Some(p) => id = p,
                None => return false,
            }
        };
        for (i, rec) in self.loops.iter_mut().enumerate() {
            if let Some(rec) = rec {
                if inside(i as LoopId) {
                    rec.current = rec.initial;
                    writes.push((rec.index_reg, rec.initial));
                }
            }
        }
        writes
    }

    /// Called once the instruction at `pc` has executed. Returns the
    /// redirect issued to PC decode, if any.
    ///
    /// A taken branch matching an exit record leaves the exited loops with
    /// their indices reset. Otherwise, if `pc` is a task's end, the task's
    /// loop is evaluated and the LUT row for `(task, status)` selects the
    /// successor; landing on a zero-length decision task evaluates the
    /// enclosing loop in the same call, up to the variant's loop count.
    pub fn on_fetch(&mut self, pc: u32, branch_taken: bool) -> Result<Option<Redirect>, ZolcError> {
        if self.mode != ZolcMode::Active {
            return Ok(None);
        }
        if branch_taken {
            let exit = self.exits.iter().flatten().find(|x| x.branch_pc == pc).cloned();
            if let Some(x) = exit {
                let writes = self.reset_nest(x.loop_id);
                let from = self.current_task;
                self.current_task = x.exit_next_task;
                return Ok(Some(Redirect {
                    kind: RedirectKind::Exit,
                    target_pc: x.exit_target_pc,
                    writes,
                    from_task: from,
                    new_task: x.exit_next_task,
                    chain: 0,
                }));
            }
        }
        let Some(task) = self
            .tasks
            .iter()
            .position(|t| t.as_ref().is_some_and(|t| t.end_pc == Some(pc)))
            .map(|t| t as TaskId)
        else {
            return Ok(None);
        };
        let Some(mut eval) = self.tasks[task as usize].as_ref().and_then(|t| t.eval_loop) else {
            if branch_taken {
                if let Some(e) = self.lut_lookup(task, LoopStatus::Taken) {
                    self.current_task = e.next_task;
                }
            }
            return Ok(None);
        };
        let max_chain = self.variant.limits().max_loops;
        let mut current = task;
        let mut writes = Vec::new();
        let mut chain = 0;
        loop {
            chain += 1;
            if chain > max_chain {
                return Err(ZolcError::ChainLimitExceeded(max_chain));
            }
            let rec = self
                .loops
                .get_mut(eval as usize)
                .and_then(Option::as_mut)
                .ok_or_else(|| ZolcError::InvalidConfig(format!("task {current} evaluates unknown loop {eval}")))?;
            let (next_index, status) = index_update(rec);
            rec.current = next_index;
            writes.push((rec.index_reg, next_index));
            let entry = self
                .lut_lookup(current, status)
                .cloned()
                .ok_or(ZolcError::MissingLutEntry { task: current, status })?;
            let decision = entry
                .next_task
                .and_then(|t| self.tasks.get(t as usize).cloned().flatten())
                .filter(|t| t.end_pc.is_none());
            match (decision, entry.next_task) {
                (Some(d), Some(next)) => {
                    current = next;
                    eval = d
                        .eval_loop
                        .ok_or_else(|| ZolcError::InvalidConfig(format!("decision task {next} evaluates no loop")))?;
                }
                _ => {
                    self.current_task = entry.next_task;
                    return Ok(Some(Redirect {
                        kind: RedirectKind::TaskSwitch,
                        target_pc: entry.target_pc,
                        writes,
                        from_task: Some(task),
                        new_task: entry.next_task,
                        chain,
                    }));
                }
            }
        }
    }
}

impl ZolcConfig {
    fn validate_structure(&self) -> Result<(), ZolcError> {
        for (i, l) in self.loops.iter().enumerate() {
            if l.step == 0 {
                return Err(ZolcError::InvalidConfig(format!("loop {i} has zero step")));
            }
        }
        check_lut_totality(&self.tasks, &self.lut)
    }
}
