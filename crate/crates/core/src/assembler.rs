//! Two-pass assembler, encoder and disassembler.
//!
//! Source is line oriented. `;` starts a comment, mnemonics are case
//! insensitive and registers are written `rN`. A line may begin with one
//! or more `label:` definitions. Supported directives:
//!
//! ```text
//! .loop ID body=L1 end=L2 reg=rN init=I step=S final=F cmp=LT|LE|GT|GE|NE
//! .exit ID branch=LB target=LT
//! .entry ID label=LM
//! .output r5, r6
//! .output mem 0x1000 16
//! .data 0x1000 1, 2, 3
//! .zolc_init
//! ```
//!
//! `end=` names the last instruction of the loop body. `.zolc_init` marks
//! where a ZOLC initialization sequence is placed; it occupies
//! [`AssembleOptions::init_reserve`] words (zero by default).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::bounds::trip_count;
use crate::image::{
    key_values, parse_i32, parse_i64, parse_output, parse_reg, parse_u32, LoopAnnotation, OutputSpec,
    ProgramImage,
};
use crate::isa::{decode, DecodeError, Flow, Instruction, Opcode, Reg, JUMP_TARGET_MASK};

/// Upper bound on early exits and extra entries per loop.
pub const MAX_LOOP_EDGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: undefined label `{name}`")]
    UndefinedLabel { line: usize, name: String },
    #[error("line {line}: duplicate label `{name}`")]
    DuplicateLabel { line: usize, name: String },
    #[error("line {line}: immediate {value} out of range")]
    ImmediateOutOfRange { line: usize, value: i64 },
    #[error("line {line}: branch target out of range")]
    BranchOutOfRange { line: usize },
    #[error("line {line}: malformed directive: {msg}")]
    MalformedDirective { line: usize, msg: String },
    #[error("line {line}: malformed operands: {msg}")]
    MalformedOperands { line: usize, msg: String },
    #[error("loop {loop_id} has infinite or wrapping bounds")]
    InfiniteLoopBounds { loop_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("field `{field}` value {value} out of range")]
    FieldOutOfRange { field: &'static str, value: i64 },
}

/// Raw instruction fields before range checking.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawFields {
    pub rs: u32,
    pub rt: u32,
    pub rd: u32,
    pub imm: i64,
    pub target: u64,
}

fn check_reg(field: &'static str, v: u32) -> Result<u32, EncodeError> {
    if v < 32 {
        Ok(v)
    } else {
        Err(EncodeError::FieldOutOfRange { field, value: v as i64 })
    }
}

/// Encodes an opcode and raw fields, checking every field's width.
/// Immediates accept the signed 16-bit range; `ZCFG` ports accept
/// `0..=0xFFFF`.
pub fn encode_raw(op: Opcode, f: RawFields) -> Result<u32, EncodeError> {
    let (rs, rt, rd) = (check_reg("rs", f.rs)?, check_reg("rt", f.rt)?, check_reg("rd", f.rd)?);
    let imm_ok = match op {
        Opcode::Zcfg => (0..=0xFFFF).contains(&f.imm),
        _ => (i16::MIN as i64..=i16::MAX as i64).contains(&f.imm),
    };
    if !imm_ok {
        return Err(EncodeError::FieldOutOfRange { field: "imm", value: f.imm });
    }
    if f.target > JUMP_TARGET_MASK as u64 {
        return Err(EncodeError::FieldOutOfRange { field: "target", value: f.target as i64 });
    }
    let base = op.bits() << 26;
    let imm = (f.imm as u32) & 0xFFFF;
    Ok(match op {
        Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Slt => base | rs << 21 | rt << 16 | rd << 11,
        Opcode::J | Opcode::Jal => base | f.target as u32,
        _ => base | rs << 21 | rt << 16 | imm,
    })
}

/// Inverse of [`decode`].
pub fn encode(instr: &Instruction) -> Result<u32, EncodeError> {
    let r = |reg: Reg| reg.index() as u32;
    let mut f = RawFields::default();
    match *instr {
        Instruction::Add { rd, rs, rt }
        | Instruction::Sub { rd, rs, rt }
        | Instruction::Mul { rd, rs, rt }
        | Instruction::Slt { rd, rs, rt } => {
            f.rd = r(rd);
            f.rs = r(rs);
            f.rt = r(rt);
        }
        Instruction::Addi { rt, rs, imm } => {
            f.rt = r(rt);
            f.rs = r(rs);
            f.imm = imm as i64;
        }
        Instruction::Lui { rt, imm } => {
            f.rt = r(rt);
            f.imm = imm as i64;
        }
        Instruction::Lw { rt, base, offset } | Instruction::Sw { rt, base, offset } => {
            f.rt = r(rt);
            f.rs = r(base);
            f.imm = offset as i64;
        }
        Instruction::Beq { rs, rt, offset } | Instruction::Bne { rs, rt, offset } | Instruction::Blt { rs, rt, offset } => {
            f.rs = r(rs);
            f.rt = r(rt);
            f.imm = offset as i64;
        }
        Instruction::Bdec { rs, offset } => {
            f.rs = r(rs);
            f.imm = offset as i64;
        }
        Instruction::J { target } | Instruction::Jal { target } => f.target = target as u64,
        Instruction::Jr { rs } => f.rs = r(rs),
        Instruction::Zcfg { rs, port } => {
            f.rs = r(rs);
            f.imm = port as i64;
        }
        Instruction::Nop | Instruction::Halt | Instruction::Zrun | Instruction::Zstop => {}
    }
    encode_raw(instr.opcode(), f)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AssembleOptions {
    /// Words reserved at the `.zolc_init` marker (or at address 0 when the
    /// source has no marker).
    pub init_reserve: usize,
}

/// Assembles with default options.
pub fn assemble(text: &str) -> Result<ProgramImage, AsmError> {
    assemble_with(text, AssembleOptions::default())
}

struct SourceInstr<'a> {
    line: usize,
    addr: u32,
    mnemonic: &'a str,
    operands: Vec<&'a str>,
}

struct PendingLoop {
    line: usize,
    ann: LoopAnnotation,
}

pub fn assemble_with(text: &str, opts: AssembleOptions) -> Result<ProgramImage, AsmError> {
    let has_marker = text.lines().any(|l| strip_comment(l).trim().eq_ignore_ascii_case(".zolc_init"));
    let reserve_bytes = (opts.init_reserve * 4) as u32;
    let mut addr: u32 = 0;
    let mut init_range = None;
    if !has_marker && opts.init_reserve > 0 {
        init_range = Some((0, reserve_bytes));
        addr = reserve_bytes;
    }

    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    let mut instrs: Vec<SourceInstr> = Vec::new();
    let mut loops: Vec<PendingLoop> = Vec::new();
    let mut exits: Vec<(usize, u32, String, String)> = Vec::new();
    let mut entries: Vec<(usize, u32, String)> = Vec::new();
    let mut outputs: Vec<OutputSpec> = Vec::new();
    let mut data: Vec<(u32, Vec<i32>)> = Vec::new();

    // Pass 1: addresses, labels and directive metadata.
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut rest = strip_comment(raw).trim();
        while let Some((label, tail)) = split_label(rest) {
            if symbols.insert(label.to_string(), addr).is_some() {
                return Err(AsmError::DuplicateLabel { line, name: label.to_string() });
            }
            rest = tail.trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, tail) = match rest.find(char::is_whitespace) {
            Some(pos) => (&rest[..pos], rest[pos..].trim()),
            None => (rest, ""),
        };
        if let Some(directive) = head.strip_prefix('.') {
            let malformed = |msg: &str| AsmError::MalformedDirective { line, msg: msg.to_string() };
            match directive.to_ascii_lowercase().as_str() {
                "loop" => loops.push(PendingLoop { line, ann: parse_loop_directive(line, tail)? }),
                "exit" => {
                    let fields: Vec<&str> = tail.split_whitespace().collect();
                    let id = fields.first().and_then(|f| f.parse().ok()).ok_or_else(|| malformed("expected loop id"))?;
                    let kv = key_values(&fields[1..]);
                    let branch = kv.get("branch").ok_or_else(|| malformed("missing branch="))?;
                    let target = kv.get("target").ok_or_else(|| malformed("missing target="))?;
                    exits.push((line, id, branch.to_string(), target.to_string()));
                }
                "entry" => {
                    let fields: Vec<&str> = tail.split_whitespace().collect();
                    let id = fields.first().and_then(|f| f.parse().ok()).ok_or_else(|| malformed("expected loop id"))?;
                    let label = match fields.get(1) {
                        Some(f) => f.strip_prefix("label=").unwrap_or(f),
                        None => return Err(malformed("missing entry label")),
                    };
                    entries.push((line, id, label.to_string()));
                }
                "output" => {
                    let fields: Vec<&str> = tail.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
                    if fields.first().is_some_and(|f| f.eq_ignore_ascii_case("mem")) {
                        outputs.push(parse_output(&fields).ok_or_else(|| malformed("expected `mem ADDR WORDS`"))?);
                    } else if fields.is_empty() {
                        return Err(malformed("expected outputs"));
                    } else {
                        for f in fields {
                            outputs.push(OutputSpec::Reg(parse_reg(f).ok_or_else(|| malformed("expected register"))?));
                        }
                    }
                }
                "data" => {
                    let (a, values) = match tail.find(char::is_whitespace) {
                        Some(pos) => (&tail[..pos], &tail[pos..]),
                        None => return Err(malformed("expected address and values")),
                    };
                    let a = parse_u32(a).filter(|a| a % 4 == 0).ok_or_else(|| malformed("bad data address"))?;
                    let values = values
                        .split(',')
                        .map(|v| parse_i32(v.trim()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| malformed("bad data value"))?;
                    data.push((a, values));
                }
                "zolc_init" => {
                    if init_range.is_some() {
                        return Err(malformed("duplicate .zolc_init"));
                    }
                    init_range = Some((addr, addr + reserve_bytes));
                    addr += reserve_bytes;
                }
                other => return Err(malformed(&format!("unknown directive `.{other}`"))),
            }
            continue;
        }
        let operands = if tail.is_empty() { Vec::new() } else { tail.split(',').map(str::trim).collect() };
        instrs.push(SourceInstr { line, addr, mnemonic: head, operands });
        addr += 4;
    }

    // Pass 2: encode.
    let total_words = (addr / 4) as usize;
    let mut words = vec![encode(&Instruction::Nop).unwrap(); total_words];
    for si in &instrs {
        let instr = parse_instruction(si, &symbols)?;
        words[(si.addr / 4) as usize] = encode(&instr).map_err(|e| match e {
            EncodeError::FieldOutOfRange { value, .. } => AsmError::ImmediateOutOfRange { line: si.line, value },
        })?;
    }

    // Loop annotations.
    let mut annotations: Vec<LoopAnnotation> = Vec::new();
    for PendingLoop { line, ann } in loops {
        if annotations.iter().any(|a| a.loop_id == ann.loop_id) {
            return Err(AsmError::MalformedDirective { line, msg: format!("duplicate loop id {}", ann.loop_id) });
        }
        for label in [&ann.body_start, &ann.body_end] {
            if !symbols.contains_key(label) {
                return Err(AsmError::UndefinedLabel { line, name: label.clone() });
            }
        }
        if symbols[&ann.body_start] > symbols[&ann.body_end] || symbols[&ann.body_end] >= addr {
            return Err(AsmError::MalformedDirective { line, msg: "loop end precedes start or lies past the program".into() });
        }
        if trip_count(ann.initial, ann.step, ann.final_, ann.compare).is_none() {
            return Err(AsmError::InfiniteLoopBounds { loop_id: ann.loop_id });
        }
        annotations.push(ann);
    }
    for (line, id, branch, target) in exits {
        let ann = annotations
            .iter_mut()
            .find(|a| a.loop_id == id)
            .ok_or_else(|| AsmError::MalformedDirective { line, msg: format!("exit for unknown loop {id}") })?;
        for label in [&branch, &target] {
            if !symbols.contains_key(label) {
                return Err(AsmError::UndefinedLabel { line, name: label.clone() });
            }
        }
        ann.exits.push((branch, target));
        if ann.exits.len() > MAX_LOOP_EDGES {
            return Err(AsmError::MalformedDirective { line, msg: format!("loop {id} has more than {MAX_LOOP_EDGES} exits") });
        }
    }
    for (line, id, label) in entries {
        let ann = annotations
            .iter_mut()
            .find(|a| a.loop_id == id)
            .ok_or_else(|| AsmError::MalformedDirective { line, msg: format!("entry for unknown loop {id}") })?;
        if !symbols.contains_key(&label) {
            return Err(AsmError::UndefinedLabel { line, name: label });
        }
        ann.entries.push(label);
        if ann.entries.len() > MAX_LOOP_EDGES {
            return Err(AsmError::MalformedDirective { line, msg: format!("loop {id} has more than {MAX_LOOP_EDGES} entries") });
        }
    }

    Ok(ProgramImage {
        words,
        symbols,
        loop_annotations: annotations,
        outputs,
        data,
        init_range,
        zolc_variant: None,
    })
}

fn strip_comment(line: &str) -> &str {
    match line.find(';') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn split_label(text: &str) -> Option<(&str, &str)> {
    let pos = text.find(':')?;
    let label = text[..pos].trim();
    let valid = !label.is_empty()
        && label.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    valid.then(|| (label, &text[pos + 1..]))
}

fn parse_loop_directive(line: usize, tail: &str) -> Result<LoopAnnotation, AsmError> {
    let malformed = |msg: String| AsmError::MalformedDirective { line, msg };
    let fields: Vec<&str> = tail.split_whitespace().collect();
    let id: u32 = fields
        .first()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| malformed("expected loop id".into()))?;
    let kv = key_values(&fields[1..]);
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| malformed(format!("missing `{k}=`")));
    let num = |k: &str| -> Result<i32, AsmError> {
        let v = get(k)?;
        parse_i32(v).ok_or_else(|| malformed(format!("bad value for `{k}`")))
    };
    Ok(LoopAnnotation {
        loop_id: id,
        body_start: get("body")?.to_string(),
        body_end: get("end")?.to_string(),
        index_reg: parse_reg(get("reg")?).ok_or_else(|| malformed("bad register".into()))?,
        initial: num("init")?,
        step: num("step")?,
        final_: num("final")?,
        compare: get("cmp")?.parse().map_err(malformed)?,
        exits: Vec::new(),
        entries: Vec::new(),
    })
}

fn parse_instruction(si: &SourceInstr, symbols: &BTreeMap<String, u32>) -> Result<Instruction, AsmError> {
    let line = si.line;
    let op = Opcode::from_mnemonic(si.mnemonic)
        .ok_or_else(|| AsmError::UnknownMnemonic { line, mnemonic: si.mnemonic.to_string() })?;
    let bad = |msg: &str| AsmError::MalformedOperands { line, msg: msg.to_string() };
    let ops = &si.operands;
    let expect = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(bad(&format!("{} expects {n} operand(s), got {}", op.mnemonic(), ops.len())))
        }
    };
    let reg = |i: usize| parse_reg(ops[i]).ok_or_else(|| bad(&format!("expected register, got `{}`", ops[i])));
    let imm16 = |text: &str| -> Result<i16, AsmError> {
        let v = parse_i64(text).ok_or_else(|| bad(&format!("expected immediate, got `{text}`")))?;
        i16::try_from(v).map_err(|_| AsmError::ImmediateOutOfRange { line, value: v })
    };
    let target = |text: &str| -> Result<u32, AsmError> {
        if let Some(&a) = symbols.get(text) {
            return Ok(a);
        }
        if text.starts_with(|c: char| c.is_ascii_digit()) {
            return parse_u32(text).ok_or_else(|| bad("bad target address"));
        }
        Err(AsmError::UndefinedLabel { line, name: text.to_string() })
    };
    let branch_offset = |text: &str| -> Result<i16, AsmError> {
        let t = target(text)? as i64;
        let delta = t - (si.addr as i64 + 4);
        if delta % 4 != 0 {
            return Err(AsmError::BranchOutOfRange { line });
        }
        i16::try_from(delta / 4).map_err(|_| AsmError::BranchOutOfRange { line })
    };
    let jump_target = |text: &str| -> Result<u32, AsmError> {
        let t = target(text)?;
        if t % 4 != 0 || (t >> 2) > JUMP_TARGET_MASK {
            return Err(AsmError::BranchOutOfRange { line });
        }
        Ok(t >> 2)
    };
    Ok(match op {
        Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Slt => {
            expect(3)?;
            let (rd, rs, rt) = (reg(0)?, reg(1)?, reg(2)?);
            match op {
                Opcode::Add => Instruction::Add { rd, rs, rt },
                Opcode::Sub => Instruction::Sub { rd, rs, rt },
                Opcode::Mul => Instruction::Mul { rd, rs, rt },
                _ => Instruction::Slt { rd, rs, rt },
            }
        }
        Opcode::Addi => {
            expect(3)?;
            Instruction::Addi { rt: reg(0)?, rs: reg(1)?, imm: imm16(ops[2])? }
        }
        Opcode::Lui => {
            expect(2)?;
            Instruction::Lui { rt: reg(0)?, imm: imm16(ops[1])? }
        }
        Opcode::Lw | Opcode::Sw => {
            expect(2)?;
            let rt = reg(0)?;
            let mem = ops[1];
            let open = mem.find('(').ok_or_else(|| bad("expected `offset(base)`"))?;
            let close = mem.rfind(')').filter(|&c| c > open).ok_or_else(|| bad("expected `offset(base)`"))?;
            let off_text = mem[..open].trim();
            let offset = if off_text.is_empty() { 0 } else { imm16(off_text)? };
            let base = parse_reg(mem[open + 1..close].trim()).ok_or_else(|| bad("bad base register"))?;
            if op == Opcode::Lw {
                Instruction::Lw { rt, base, offset }
            } else {
                Instruction::Sw { rt, base, offset }
            }
        }
        Opcode::Beq | Opcode::Bne | Opcode::Blt => {
            expect(3)?;
            let (rs, rt, offset) = (reg(0)?, reg(1)?, branch_offset(ops[2])?);
            match op {
                Opcode::Beq => Instruction::Beq { rs, rt, offset },
                Opcode::Bne => Instruction::Bne { rs, rt, offset },
                _ => Instruction::Blt { rs, rt, offset },
            }
        }
        Opcode::Bdec => {
            expect(2)?;
            Instruction::Bdec { rs: reg(0)?, offset: branch_offset(ops[1])? }
        }
        Opcode::J | Opcode::Jal => {
            expect(1)?;
            let t = jump_target(ops[0])?;
            if op == Opcode::J {
                Instruction::J { target: t }
            } else {
                Instruction::Jal { target: t }
            }
        }
        Opcode::Jr => {
            expect(1)?;
            Instruction::Jr { rs: reg(0)? }
        }
        Opcode::Zcfg => {
            expect(2)?;
            let v = parse_i64(ops[1]).ok_or_else(|| bad("expected port address"))?;
            let port = u16::try_from(v).map_err(|_| AsmError::ImmediateOutOfRange { line, value: v })?;
            Instruction::Zcfg { rs: reg(0)?, port }
        }
        Opcode::Nop | Opcode::Halt | Opcode::Zrun | Opcode::Zstop => {
            expect(0)?;
            match op {
                Opcode::Nop => Instruction::Nop,
                Opcode::Halt => Instruction::Halt,
                Opcode::Zrun => Instruction::Zrun,
                _ => Instruction::Zstop,
            }
        }
    })
}

/// Renders an image's code words as assembly source. Branch and jump
/// targets inside the image become labels (existing symbols are reused);
/// targets outside it are written as absolute byte addresses.
pub fn disassemble(image: &ProgramImage) -> Result<String, DecodeError> {
    let instrs = image
        .words
        .iter()
        .map(|&w| decode(w))
        .collect::<Result<Vec<_>, _>>()?;
    let end = image.len_bytes();
    let mut labels: HashMap<u32, String> = HashMap::new();
    for (name, &addr) in &image.symbols {
        if addr % 4 == 0 && addr <= end {
            labels.entry(addr).or_insert_with(|| name.clone());
        }
    }
    let mut by_addr: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (name, &addr) in &image.symbols {
        if addr % 4 == 0 && addr <= end {
            by_addr.entry(addr).or_default().push(name.clone());
        }
    }
    for (i, instr) in instrs.iter().enumerate() {
        if let Flow::Branch(t) | Flow::Jump(t) = instr.flow(i as u32 * 4) {
            if t < end && !labels.contains_key(&t) {
                let name = format!("L_{t:04x}");
                labels.insert(t, name.clone());
                by_addr.entry(t).or_default().push(name);
            }
        }
    }
    let target_text = |t: u32| labels.get(&t).cloned().unwrap_or_else(|| format!("{t:#x}"));
    let mut out = String::new();
    for (i, instr) in instrs.iter().enumerate() {
        let pc = i as u32 * 4;
        for name in by_addr.get(&pc).into_iter().flatten() {
            let _ = writeln!(out, "{name}:");
        }
        let m = instr.opcode().mnemonic();
        let _ = match (*instr, instr.flow(pc)) {
            (Instruction::Beq { rs, rt, .. } | Instruction::Bne { rs, rt, .. } | Instruction::Blt { rs, rt, .. }, Flow::Branch(t)) => {
                writeln!(out, "{m} {rs}, {rt}, {}", target_text(t))
            }
            (Instruction::Bdec { rs, .. }, Flow::Branch(t)) => writeln!(out, "{m} {rs}, {}", target_text(t)),
            (_, Flow::Jump(t)) => writeln!(out, "{m} {}", target_text(t)),
            _ => writeln!(out, "{instr}"),
        };
    }
    for name in by_addr.get(&end).into_iter().flatten() {
        let _ = writeln!(out, "{name}:");
    }
    Ok(out.trim_end().to_string())
}
