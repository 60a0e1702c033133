//! Architectural state and the untimed reference interpreter.
//!
//! The functional interpreter is the correctness oracle for every timed
//! core variant. ZOLC instructions only advance the PC here; loop control
//! in oracle programs is carried by ordinary branches.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{OutputSpec, ProgramImage};
use crate::isa::{decode, DecodeError, Instruction, Reg};

pub const DEFAULT_MEM_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("unaligned access at {addr:#x} (pc {pc:#x})")]
    UnalignedAccess { pc: u32, addr: u32 },
    #[error("out-of-bounds access at {addr:#x} (pc {pc:#x})")]
    OutOfBoundsAccess { pc: u32, addr: u32 },
    #[error("pc {0:#x} is outside the program")]
    PcOutOfBounds(u32),
    #[error("step budget of {0} exhausted")]
    StepBudgetExceeded(u64),
    #[error("machine is halted")]
    Halted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub pc: u32,
    pub regs: [i32; 32],
    pub mem: Vec<u8>,
    pub halted: bool,
    pub cycle: u64,
    pub dyn_instr: u64,
}

/// What one executed instruction did to control flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepEffect {
    pub next_pc: u32,
    /// True when a branch or jump redirected the PC.
    pub taken: bool,
}

impl Default for MachineState {
    fn default() -> Self {
        Self::new(DEFAULT_MEM_BYTES)
    }
}

impl MachineState {
    pub fn new(mem_bytes: usize) -> Self {
        MachineState {
            pc: 0,
            regs: [0; 32],
            mem: vec![0; mem_bytes],
            halted: false,
            cycle: 0,
            dyn_instr: 0,
        }
    }

    /// Fresh state with the image's data segments loaded.
    pub fn for_image(image: &ProgramImage, mem_bytes: usize) -> Result<Self, MachineError> {
        let mut state = Self::new(mem_bytes);
        for (addr, values) in &image.data {
            for (i, v) in values.iter().enumerate() {
                state.store_word(0, addr + 4 * i as u32, *v)?;
            }
        }
        Ok(state)
    }

    pub fn reg(&self, r: Reg) -> i32 {
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Reg, value: i32) {
        if r != Reg::ZERO {
            self.regs[r.index()] = value;
        }
    }

    fn check(&self, pc: u32, addr: u32) -> Result<usize, MachineError> {
        if !addr.is_multiple_of(4) {
            return Err(MachineError::UnalignedAccess { pc, addr });
        }
        let a = addr as usize;
        if a + 4 > self.mem.len() {
            return Err(MachineError::OutOfBoundsAccess { pc, addr });
        }
        Ok(a)
    }

    pub fn load_word(&self, pc: u32, addr: u32) -> Result<i32, MachineError> {
        let a = self.check(pc, addr)?;
        Ok(i32::from_le_bytes(self.mem[a..a + 4].try_into().unwrap()))
    }

    pub fn store_word(&mut self, pc: u32, addr: u32, value: i32) -> Result<(), MachineError> {
        let a = self.check(pc, addr)?;
        self.mem[a..a + 4].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    /// Executes `instr` at the current PC with architectural semantics and
    /// no timing. Updates `pc`, `halted` and `dyn_instr`.
    pub fn execute(&mut self, instr: Instruction) -> Result<StepEffect, MachineError> {
        if self.halted {
            return Err(MachineError::Halted);
        }
        let pc = self.pc;
        let next = pc.wrapping_add(4);
        let branch = |offset: i16| next.wrapping_add((offset as i32 as u32) << 2);
        let mut effect = StepEffect { next_pc: next, taken: false };
        let take = |target: u32, effect: &mut StepEffect| {
            effect.next_pc = target;
            effect.taken = true;
        };
        match instr {
            Instruction::Add { rd, rs, rt } => self.set_reg(rd, self.reg(rs).wrapping_add(self.reg(rt))),
            Instruction::Sub { rd, rs, rt } => self.set_reg(rd, self.reg(rs).wrapping_sub(self.reg(rt))),
            Instruction::Mul { rd, rs, rt } => self.set_reg(rd, self.reg(rs).wrapping_mul(self.reg(rt))),
            Instruction::Slt { rd, rs, rt } => self.set_reg(rd, (self.reg(rs) < self.reg(rt)) as i32),
            Instruction::Addi { rt, rs, imm } => self.set_reg(rt, self.reg(rs).wrapping_add(imm as i32)),
            Instruction::Lui { rt, imm } => self.set_reg(rt, ((imm as u16 as u32) << 16) as i32),
            Instruction::Lw { rt, base, offset } => {
                let addr = (self.reg(base) as u32).wrapping_add(offset as i32 as u32);
                let v = self.load_word(pc, addr)?;
                self.set_reg(rt, v);
            }
            Instruction::Sw { rt, base, offset } => {
                let addr = (self.reg(base) as u32).wrapping_add(offset as i32 as u32);
                self.store_word(pc, addr, self.reg(rt))?;
            }
            Instruction::Beq { rs, rt, offset } => {
                if self.reg(rs) == self.reg(rt) {
                    take(branch(offset), &mut effect);
                }
            }
            Instruction::Bne { rs, rt, offset } => {
                if self.reg(rs) != self.reg(rt) {
                    take(branch(offset), &mut effect);
                }
            }
            Instruction::Blt { rs, rt, offset } => {
                if self.reg(rs) < self.reg(rt) {
                    take(branch(offset), &mut effect);
                }
            }
            Instruction::Bdec { rs, offset } => {
                let v = self.reg(rs).wrapping_sub(1);
                self.set_reg(rs, v);
                if v != 0 {
                    take(branch(offset), &mut effect);
                }
            }
            Instruction::J { target } => take(target << 2, &mut effect),
            Instruction::Jal { target } => {
                self.set_reg(Reg::LINK, next as i32);
                take(target << 2, &mut effect);
            }
            Instruction::Jr { rs } => take(self.reg(rs) as u32, &mut effect),
            Instruction::Halt => {
                self.halted = true;
                effect.next_pc = pc;
            }
            Instruction::Nop | Instruction::Zcfg { .. } | Instruction::Zrun | Instruction::Zstop => {}
        }
        self.regs[0] = 0;
        self.pc = effect.next_pc;
        self.dyn_instr += 1;
        Ok(effect)
    }

    /// Values of the designated outputs, flattened in declaration order.
    pub fn output_values(&self, outputs: &[OutputSpec]) -> Result<Vec<i32>, MachineError> {
        let mut values = Vec::new();
        for o in outputs {
            match *o {
                OutputSpec::Reg(r) => values.push(self.reg(r)),
                OutputSpec::Mem { addr, words } => {
                    for i in 0..words {
                        values.push(self.load_word(0, addr + 4 * i)?);
                    }
                }
            }
        }
        Ok(values)
    }
}

/// Hex SHA-256 over the little-endian output values.
pub fn digest_outputs(values: &[i32]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Applies one instruction to `state` (the oracle step).
pub fn step_functional(state: &mut MachineState, instr: Instruction) -> Result<StepEffect, MachineError> {
    state.execute(instr)
}

/// Runs `image` from word 0 until `HALT`. Returns the final state; its
/// `dyn_instr` counts every executed instruction including `HALT`.
pub fn run_functional(image: &ProgramImage, max_steps: u64) -> Result<MachineState, MachineError> {
    let mut state = MachineState::for_image(image, DEFAULT_MEM_BYTES)?;
    while !state.halted {
        if state.dyn_instr >= max_steps {
            return Err(MachineError::StepBudgetExceeded(max_steps));
        }
        let word = image.fetch(state.pc).ok_or(MachineError::PcOutOfBounds(state.pc))?;
        step_functional(&mut state, decode(word)?)?;
    }
    Ok(state)
}
