//! Instruction set of the simulated core.
//!
//! A MIPS-like, fixed 32-bit encoding with 32 general-purpose registers.
//! The opcode lives in bits `[31:26]`; register-form instructions carry
//! `rs [25:21]`, `rt [20:16]`, `rd [15:11]`; immediate forms carry a signed
//! 16-bit `imm [15:0]`; jumps carry a 26-bit word-granular `target [25:0]`.
//!
//! | opcode | mnemonic | form |
//! |--------|----------|------|
//! | 0x00 | ADD  | R  `rd = rs + rt` |
//! | 0x01 | SUB  | R  `rd = rs - rt` |
//! | 0x02 | MUL  | R  `rd = rs * rt` |
//! | 0x03 | SLT  | R  `rd = (rs < rt) as i32` |
//! | 0x04 | BEQ  | B  `rs, rt, offset` |
//! | 0x05 | BNE  | B |
//! | 0x06 | BLT  | B |
//! | 0x07 | BDEC | B  `rs, offset` (decrement, branch if nonzero) |
//! | 0x08 | ADDI | I  `rt = rs + imm` |
//! | 0x0F | LUI  | I  `rt = imm << 16` |
//! | 0x10 | J    | J |
//! | 0x11 | JAL  | J  (links into r31) |
//! | 0x12 | JR   | R  `pc = rs` |
//! | 0x14 | NOP  | - |
//! | 0x23 | LW   | I  `rt = mem[rs + imm]` |
//! | 0x2B | SW   | I  `mem[rs + imm] = rt` |
//! | 0x30 | ZCFG | I  `zolc_port[imm] = rs` |
//! | 0x31 | ZRUN | - |
//! | 0x32 | ZSTOP| - |
//! | 0x3E | HALT | - |
//!
//! Branch offsets are signed word offsets relative to `pc + 4`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A general-purpose register index in `0..32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    /// Link register written by `JAL`.
    pub const LINK: Reg = Reg(31);

    pub fn new(index: u8) -> Option<Reg> {
        (index < 32).then_some(Reg(index))
    }

    /// Builds a register from the low five bits of `bits`.
    pub fn from_bits(bits: u32) -> Reg {
        Reg((bits & 0x1F) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    Slt,
    Beq,
    Bne,
    Blt,
    Bdec,
    Addi,
    Lui,
    J,
    Jal,
    Jr,
    Nop,
    Lw,
    Sw,
    Zcfg,
    Zrun,
    Zstop,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Slt,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Bdec,
        Opcode::Addi,
        Opcode::Lui,
        Opcode::J,
        Opcode::Jal,
        Opcode::Jr,
        Opcode::Nop,
        Opcode::Lw,
        Opcode::Sw,
        Opcode::Zcfg,
        Opcode::Zrun,
        Opcode::Zstop,
        Opcode::Halt,
    ];

    pub fn bits(self) -> u32 {
        match self {
            Opcode::Add => 0x00,
            Opcode::Sub => 0x01,
            Opcode::Mul => 0x02,
            Opcode::Slt => 0x03,
            Opcode::Beq => 0x04,
            Opcode::Bne => 0x05,
            Opcode::Blt => 0x06,
            Opcode::Bdec => 0x07,
            Opcode::Addi => 0x08,
            Opcode::Lui => 0x0F,
            Opcode::J => 0x10,
            Opcode::Jal => 0x11,
            Opcode::Jr => 0x12,
            Opcode::Nop => 0x14,
            Opcode::Lw => 0x23,
            Opcode::Sw => 0x2B,
            Opcode::Zcfg => 0x30,
            Opcode::Zrun => 0x31,
            Opcode::Zstop => 0x32,
            Opcode::Halt => 0x3E,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.bits() == bits)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Slt => "SLT",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Blt => "BLT",
            Opcode::Bdec => "BDEC",
            Opcode::Addi => "ADDI",
            Opcode::Lui => "LUI",
            Opcode::J => "J",
            Opcode::Jal => "JAL",
            Opcode::Jr => "JR",
            Opcode::Nop => "NOP",
            Opcode::Lw => "LW",
            Opcode::Sw => "SW",
            Opcode::Zcfg => "ZCFG",
            Opcode::Zrun => "ZRUN",
            Opcode::Zstop => "ZSTOP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(text: &str) -> Option<Opcode> {
        Opcode::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(text))
    }
}

/// A decoded instruction.
///
/// Branch offsets are word offsets from `pc + 4`; jump targets are word
/// addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Add { rd: Reg, rs: Reg, rt: Reg },
    Sub { rd: Reg, rs: Reg, rt: Reg },
    Mul { rd: Reg, rs: Reg, rt: Reg },
    Slt { rd: Reg, rs: Reg, rt: Reg },
    Addi { rt: Reg, rs: Reg, imm: i16 },
    Lui { rt: Reg, imm: i16 },
    Lw { rt: Reg, base: Reg, offset: i16 },
    Sw { rt: Reg, base: Reg, offset: i16 },
    Beq { rs: Reg, rt: Reg, offset: i16 },
    Bne { rs: Reg, rt: Reg, offset: i16 },
    Blt { rs: Reg, rt: Reg, offset: i16 },
    Bdec { rs: Reg, offset: i16 },
    J { target: u32 },
    Jal { target: u32 },
    Jr { rs: Reg },
    Nop,
    Halt,
    Zcfg { rs: Reg, port: u16 },
    Zrun,
    Zstop,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("illegal opcode in word {0:#010x}")]
    IllegalOpcode(u32),
}

pub const JUMP_TARGET_MASK: u32 = 0x03FF_FFFF;

fn rs_of(word: u32) -> Reg {
    Reg::from_bits(word >> 21)
}

fn rt_of(word: u32) -> Reg {
    Reg::from_bits(word >> 16)
}

fn rd_of(word: u32) -> Reg {
    Reg::from_bits(word >> 11)
}

fn imm_of(word: u32) -> i16 {
    word as u16 as i16
}

/// Decodes a 32-bit word. Fields unused by an instruction form are ignored.
pub fn decode(word: u32) -> Result<Instruction, DecodeError> {
    let op = Opcode::from_bits(word >> 26).ok_or(DecodeError::IllegalOpcode(word))?;
    let (rs, rt, rd, imm) = (rs_of(word), rt_of(word), rd_of(word), imm_of(word));
    Ok(match op {
        Opcode::Add => Instruction::Add { rd, rs, rt },
        Opcode::Sub => Instruction::Sub { rd, rs, rt },
        Opcode::Mul => Instruction::Mul { rd, rs, rt },
        Opcode::Slt => Instruction::Slt { rd, rs, rt },
        Opcode::Addi => Instruction::Addi { rt, rs, imm },
        Opcode::Lui => Instruction::Lui { rt, imm },
        Opcode::Lw => Instruction::Lw { rt, base: rs, offset: imm },
        Opcode::Sw => Instruction::Sw { rt, base: rs, offset: imm },
        Opcode::Beq => Instruction::Beq { rs, rt, offset: imm },
        Opcode::Bne => Instruction::Bne { rs, rt, offset: imm },
        Opcode::Blt => Instruction::Blt { rs, rt, offset: imm },
        Opcode::Bdec => Instruction::Bdec { rs, offset: imm },
        Opcode::J => Instruction::J { target: word & JUMP_TARGET_MASK },
        Opcode::Jal => Instruction::Jal { target: word & JUMP_TARGET_MASK },
        Opcode::Jr => Instruction::Jr { rs },
        Opcode::Nop => Instruction::Nop,
        Opcode::Halt => Instruction::Halt,
        Opcode::Zcfg => Instruction::Zcfg { rs, port: imm as u16 },
        Opcode::Zrun => Instruction::Zrun,
        Opcode::Zstop => Instruction::Zstop,
    })
}

/// Control-transfer classification used by the CFG builder and the
/// timing model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    /// Falls through to `pc + 4`.
    Next,
    /// Conditional branch to the given byte address.
    Branch(u32),
    /// Unconditional jump to the given byte address.
    Jump(u32),
    Indirect,
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Add { .. } => Opcode::Add,
            Instruction::Sub { .. } => Opcode::Sub,
            Instruction::Mul { .. } => Opcode::Mul,
            Instruction::Slt { .. } => Opcode::Slt,
            Instruction::Addi { .. } => Opcode::Addi,
            Instruction::Lui { .. } => Opcode::Lui,
            Instruction::Lw { .. } => Opcode::Lw,
            Instruction::Sw { .. } => Opcode::Sw,
            Instruction::Beq { .. } => Opcode::Beq,
            Instruction::Bne { .. } => Opcode::Bne,
            Instruction::Blt { .. } => Opcode::Blt,
            Instruction::Bdec { .. } => Opcode::Bdec,
            Instruction::J { .. } => Opcode::J,
            Instruction::Jal { .. } => Opcode::Jal,
            Instruction::Jr { .. } => Opcode::Jr,
            Instruction::Nop => Opcode::Nop,
            Instruction::Halt => Opcode::Halt,
            Instruction::Zcfg { .. } => Opcode::Zcfg,
            Instruction::Zrun => Opcode::Zrun,
            Instruction::Zstop => Opcode::Zstop,
        }
    }

    /// Static control flow of this instruction when located at `pc`.
    pub fn flow(&self, pc: u32) -> Flow {
        let rel = |offset: i16| pc.wrapping_add(4).wrapping_add((offset as i32 as u32) << 2);
        match *self {
            Instruction::Beq { offset, .. }
            | Instruction::Bne { offset, .. }
            | Instruction::Blt { offset, .. }
            | Instruction::Bdec { offset, .. } => Flow::Branch(rel(offset)),
            Instruction::J { target } | Instruction::Jal { target } => Flow::Jump(target << 2),
            Instruction::Jr { .. } => Flow::Indirect,
            Instruction::Halt => Flow::Halt,
            _ => Flow::Next,
        }
    }

    /// Register written by this instruction, if any.
    pub fn dest(&self) -> Option<Reg> {
        match *self {
            Instruction::Add { rd, .. }
            | Instruction::Sub { rd, .. }
            | Instruction::Mul { rd, .. }
            | Instruction::Slt { rd, .. } => Some(rd),
            Instruction::Addi { rt, .. } | Instruction::Lui { rt, .. } | Instruction::Lw { rt, .. } => {
                Some(rt)
            }
            Instruction::Bdec { rs, .. } => Some(rs),
            Instruction::Jal { .. } => Some(Reg::LINK),
            _ => None,
        }
    }

    /// Registers read by this instruction.
    pub fn sources(&self) -> Vec<Reg> {
        match *self {
            Instruction::Add { rs, rt, .. }
            | Instruction::Sub { rs, rt, .. }
            | Instruction::Mul { rs, rt, .. }
            | Instruction::Slt { rs, rt, .. }
            | Instruction::Beq { rs, rt, .. }
            | Instruction::Bne { rs, rt, .. }
            | Instruction::Blt { rs, rt, .. } => vec![rs, rt],
            Instruction::Addi { rs, .. } => vec![rs],
            Instruction::Lw { base, .. } => vec![base],
            Instruction::Sw { rt, base, .. } => vec![rt, base],
            Instruction::Bdec { rs, .. } | Instruction::Jr { rs } | Instruction::Zcfg { rs, .. } => {
                vec![rs]
            }
            _ => Vec::new(),
        }
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, Instruction::Lw { .. } | Instruction::Sw { .. })
    }
}

impl fmt::Display for Instruction {
    /// Renders numeric branch/jump targets as signed word offsets / byte
    /// addresses; the disassembler substitutes labels.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match *self {
            Instruction::Add { rd, rs, rt }
            | Instruction::Sub { rd, rs, rt }
            | Instruction::Mul { rd, rs, rt }
            | Instruction::Slt { rd, rs, rt } => write!(f, "{m} {rd}, {rs}, {rt}"),
            Instruction::Addi { rt, rs, imm } => write!(f, "{m} {rt}, {rs}, {imm}"),
            Instruction::Lui { rt, imm } => write!(f, "{m} {rt}, {imm}"),
            Instruction::Lw { rt, base, offset } | Instruction::Sw { rt, base, offset } => {
                write!(f, "{m} {rt}, {offset}({base})")
            }
            Instruction::Beq { rs, rt, offset }
            | Instruction::Bne { rs, rt, offset }
            | Instruction::Blt { rs, rt, offset } => write!(f, "{m} {rs}, {rt}, .{offset:+}"),
            Instruction::Bdec { rs, offset } => write!(f, "{m} {rs}, .{offset:+}"),
            Instruction::J { target } | Instruction::Jal { target } => {
                write!(f, "{m} {:#x}", target << 2)
            }
            Instruction::Jr { rs } => write!(f, "{m} {rs}"),
            Instruction::Zcfg { rs, port } => write!(f, "{m} {rs}, {port:#06x}"),
            Instruction::Nop | Instruction::Halt | Instruction::Zrun | Instruction::Zstop => {
                f.write_str(m)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(i: u8) -> Reg {
        Reg::new(i).unwrap()
    }

    #[test]
    fn decodes_addi() {
        let word = (0x08 << 26) | (1 << 16) | 5;
        assert_eq!(
            decode(word).unwrap(),
            Instruction::Addi { rt: r(1), rs: r(0), imm: 5 }
        );
    }

    #[test]
    fn all_zero_word_is_add_r0() {
        assert_eq!(
            decode(0).unwrap(),
            Instruction::Add { rd: r(0), rs: r(0), rt: r(0) }
        );
    }

    #[test]
    fn unassigned_opcodes_are_illegal() {
        let assigned: Vec<u32> = Opcode::ALL.iter().map(|o| o.bits()).collect();
        for op in 0u32..64 {
            let word = op << 26;
            match decode(word) {
                Ok(_) => assert!(assigned.contains(&op)),
                Err(DecodeError::IllegalOpcode(w)) => {
                    assert!(!assigned.contains(&op));
                    assert_eq!(w, word);
                }
            }
        }
        assert!(!assigned.contains(&0x3F));
        assert_eq!(decode(0xFC00_0000), Err(DecodeError::IllegalOpcode(0xFC00_0000)));
    }

    #[test]
    fn branch_flow_is_relative_to_next_pc() {
        let b = Instruction::Bne { rs: r(1), rt: r(0), offset: -3 };
        assert_eq!(b.flow(0x10), Flow::Branch(0x08));
        let j = Instruction::J { target: 4 };
        assert_eq!(j.flow(0x40), Flow::Jump(0x10));
    }

    #[test]
    fn reg_rejects_out_of_range() {
        assert!(Reg::new(31).is_some());
        assert!(Reg::new(32).is_none());
    }
}
