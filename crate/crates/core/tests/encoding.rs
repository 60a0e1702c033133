mod common;

use proptest::prelude::*;
use zolc_core::assembler::{assemble, disassemble, encode};
use zolc_core::isa::{decode, Flow, Instruction, Opcode, Reg, JUMP_TARGET_MASK};

use common::{generate, Form, GenOptions};

/// One instruction of the given opcode built from raw operand values.
fn build(op: Opcode, a: u8, b: u8, c: u8, imm: i16, target: u32) -> Instruction {
    let (ra, rb, rc) = (Reg::new(a).unwrap(), Reg::new(b).unwrap(), Reg::new(c).unwrap());
    match op {
        Opcode::Add => Instruction::Add { rd: ra, rs: rb, rt: rc },
        Opcode::Sub => Instruction::Sub { rd: ra, rs: rb, rt: rc },
        Opcode::Mul => Instruction::Mul { rd: ra, rs: rb, rt: rc },
        Opcode::Slt => Instruction::Slt { rd: ra, rs: rb, rt: rc },
        Opcode::Addi => Instruction::Addi { rt: ra, rs: rb, imm },
        Opcode::Lui => Instruction::Lui { rt: ra, imm },
        Opcode::Lw => Instruction::Lw { rt: ra, base: rb, offset: imm },
        Opcode::Sw => Instruction::Sw { rt: ra, base: rb, offset: imm },
        Opcode::Beq => Instruction::Beq { rs: ra, rt: rb, offset: imm },
        Opcode::Bne => Instruction::Bne { rs: ra, rt: rb, offset: imm },
        Opcode::Blt => Instruction::Blt { rs: ra, rt: rb, offset: imm },
        Opcode::Bdec => Instruction::Bdec { rs: ra, offset: imm },
        Opcode::J => Instruction::J { target },
        Opcode::Jal => Instruction::Jal { target },
        Opcode::Jr => Instruction::Jr { rs: ra },
        Opcode::Nop => Instruction::Nop,
        Opcode::Halt => Instruction::Halt,
        Opcode::Zcfg => Instruction::Zcfg { rs: ra, port: imm as u16 },
        Opcode::Zrun => Instruction::Zrun,
        Opcode::Zstop => Instruction::Zstop,
    }
}

#[test]
fn every_opcode_round_trips_on_boundary_operands() {
    let regs = [0u8, 1, 17, 31];
    let imms = [0i16, 1, -1, i16::MIN, i16::MAX, 0x1234];
    let targets = [0u32, 1, JUMP_TARGET_MASK];
    let mut n = 0;
    for op in Opcode::ALL {
        for &a in &regs {
            for &b in &regs {
                for &imm in &imms {
                    for &t in &targets {
                        let i = build(op, a, b, 31 - a, imm, t);
                        let w = encode(&i).unwrap();
                        assert_eq!(w >> 26, op.bits());
                        assert_eq!(decode(w).unwrap(), i);
                        n += 1;
                    }
                }
            }
        }
    }
    assert_eq!(n, 20 * 4 * 4 * 6 * 3);
}

proptest! {
    #[test]
    fn encode_decode_round_trip(
        opi in 0usize..20,
        a in 0u8..32, b in 0u8..32, c in 0u8..32,
        imm in any::<i16>(),
        target in 0u32..=JUMP_TARGET_MASK,
    ) {
        let i = build(Opcode::ALL[opi], a, b, c, imm, target);
        prop_assert_eq!(decode(encode(&i).unwrap()).unwrap(), i);
    }

    #[test]
    fn generated_programs_reassemble_identically(seed in any::<u64>()) {
        let p = generate(seed, &GenOptions::default());
        for form in [Form::Default, Form::Hrdwil, Form::Zolc] {
            let image = assemble(p.source(form)).unwrap();
            let text = disassemble(&image).unwrap();
            prop_assert_eq!(&assemble(&text).unwrap().words, &image.words);
        }
    }

    #[test]
    fn branches_land_inside_the_image(seed in any::<u64>()) {
        let p = generate(seed, &GenOptions::default());
        for form in [Form::Default, Form::Hrdwil, Form::Zolc] {
            let image = assemble(p.source(form)).unwrap();
            for (i, &w) in image.words.iter().enumerate() {
                if let Flow::Branch(t) | Flow::Jump(t) = decode(w).unwrap().flow(4 * i as u32) {
                    prop_assert!(t % 4 == 0 && t < image.len_bytes(), "target {:#x}", t);
                }
            }
        }
    }

    #[test]
    fn each_loop_directive_yields_one_annotation(seed in any::<u64>()) {
        let p = generate(seed, &GenOptions::default());
        for form in [Form::Default, Form::Hrdwil, Form::Zolc] {
            let src = p.source(form);
            let image = assemble(src).unwrap();
            let directives = src.lines().filter(|l| l.trim_start().starts_with(".loop ")).count();
            prop_assert_eq!(image.loop_annotations.len(), directives);
            prop_assert_eq!(directives, p.loops);
            let exits: usize = image.loop_annotations.iter().map(|a| a.exits.len()).sum();
            prop_assert_eq!(exits, p.exits);
        }
    }
}
