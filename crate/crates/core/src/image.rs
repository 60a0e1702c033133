//! Assembled program images and their on-disk formats.
//!
//! An image is written as two files:
//!
//! * `.img`: the magic `ZIMG`, a version byte (currently 1), a
//!   little-endian `u32` word count, then the code words, little-endian.
//!   The entry point is word 0.
//! * `.meta`: line-oriented `key = value` records:
//!
//! ```text
//! symbol = L1 0x0010
//! loop = 0 body=L1 end=E1 reg=r4 init=0 step=1 final=16 cmp=LT
//! exit = 0 branch=XB target=AFT
//! entry = 1 LM
//! output = r5
//! output = mem 0x1000 16
//! data = 0x1000 1,2,3
//! init = 0x0000 0x0044
//! variant = zolc-full
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::Compare;
use crate::isa::{decode, DecodeError, Instruction, Reg};

pub const IMG_MAGIC: &[u8; 4] = b"ZIMG";
pub const IMG_VERSION: u8 = 1;

/// Counted-loop metadata declared by a `.loop` directive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopAnnotation {
    pub loop_id: u32,
    /// Label of the first body instruction.
    pub body_start: String,
    /// Label of the last body instruction.
    pub body_end: String,
    pub index_reg: Reg,
    pub initial: i32,
    pub step: i32,
    pub final_: i32,
    pub compare: Compare,
    /// `(branch label, exit target label)` pairs for early exits.
    pub exits: Vec<(String, String)>,
    /// Extra entry labels inside the body (the body start is implicit).
    pub entries: Vec<String>,
}

/// A value the equivalence checker compares between core variants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputSpec {
    Reg(Reg),
    /// `words` consecutive words starting at byte address `addr`.
    Mem { addr: u32, words: u32 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramImage {
    pub words: Vec<u32>,
    pub symbols: BTreeMap<String, u32>,
    pub loop_annotations: Vec<LoopAnnotation>,
    pub outputs: Vec<OutputSpec>,
    /// Initial data-memory contents: `(byte address, words)`.
    pub data: Vec<(u32, Vec<i32>)>,
    /// Byte range `[start, end)` occupied by an embedded ZOLC init sequence.
    pub init_range: Option<(u32, u32)>,
    /// Name of the ZOLC variant the embedded init sequence targets.
    pub zolc_variant: Option<String>,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad image file: {0}")]
    BadImage(String),
    #[error("bad meta record on line {line}: {msg}")]
    BadMeta { line: usize, msg: String },
}

impl ProgramImage {
    pub fn len_bytes(&self) -> u32 {
        (self.words.len() * 4) as u32
    }

    pub fn addr_of(&self, label: &str) -> Option<u32> {
        self.symbols.get(label).copied()
    }

    pub fn fetch(&self, pc: u32) -> Option<u32> {
        if !pc.is_multiple_of(4) {
            return None;
        }
        self.words.get((pc / 4) as usize).copied()
    }

    pub fn decode_all(&self) -> Result<Vec<Instruction>, DecodeError> {
        self.words.iter().map(|&w| decode(w)).collect()
    }

    /// Resolved `(body_start, body_end)` byte addresses of an annotation.
    pub fn loop_range(&self, ann: &LoopAnnotation) -> Option<(u32, u32)> {
        Some((self.addr_of(&ann.body_start)?, self.addr_of(&ann.body_end)?))
    }

    pub fn to_img_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.words.len() * 4);
        out.extend_from_slice(IMG_MAGIC);
        out.push(IMG_VERSION);
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn words_from_img_bytes(bytes: &[u8]) -> Result<Vec<u32>, ImageError> {
        if bytes.len() < 9 || &bytes[..4] != IMG_MAGIC {
            return Err(ImageError::BadImage("missing ZIMG magic".into()));
        }
        if bytes[4] != IMG_VERSION {
            return Err(ImageError::BadImage(format!("unsupported version {}", bytes[4])));
        }
        let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let body = &bytes[9..];
        if body.len() != count * 4 {
            return Err(ImageError::BadImage(format!(
                "word count {count} does not match payload of {} bytes",
                body.len()
            )));
        }
        Ok(body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_meta(&self) -> String {
        let mut s = String::new();
        for (name, addr) in &self.symbols {
            let _ = writeln!(s, "symbol = {name} {addr:#06x}");
        }
        for a in &self.loop_annotations {
            let _ = writeln!(
                s,
                "loop = {} body={} end={} reg={} init={} step={} final={} cmp={}",
                a.loop_id, a.body_start, a.body_end, a.index_reg, a.initial, a.step, a.final_, a.compare
            );
            for (branch, target) in &a.exits {
                let _ = writeln!(s, "exit = {} branch={branch} target={target}", a.loop_id);
            }
            for label in &a.entries {
                let _ = writeln!(s, "entry = {} {label}", a.loop_id);
            }
        }
        for o in &self.outputs {
            match o {
                OutputSpec::Reg(r) => {
                    let _ = writeln!(s, "output = {r}");
                }
                OutputSpec::Mem { addr, words } => {
                    let _ = writeln!(s, "output = mem {addr:#06x} {words}");
                }
            }
        }
        for (addr, values) in &self.data {
            let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "data = {addr:#06x} {}", vals.join(","));
        }
        if let Some((start, end)) = self.init_range {
            let _ = writeln!(s, "init = {start:#06x} {end:#06x}");
        }
        if let Some(v) = &self.zolc_variant {
            let _ = writeln!(s, "variant = {v}");
        }
        s
    }

    /// Rebuilds an image from code words and a `.meta` document.
    pub fn from_parts(words: Vec<u32>, meta: &str) -> Result<ProgramImage, ImageError> {
        let mut image = ProgramImage { words, ..Default::default() };
        for (i, raw) in meta.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| ImageError::BadMeta { line, msg: msg.to_string() };
            let (key, value) = text.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
            let value = value.trim();
            let fields: Vec<&str> = value.split_whitespace().collect();
            match key.trim() {
                "symbol" => {
                    let [name, addr] = fields[..] else { return Err(bad("symbol needs name and address")) };
                    image.symbols.insert(name.to_string(), parse_u32(addr).ok_or_else(|| bad("bad address"))?);
                }
                "loop" => image.loop_annotations.push(parse_meta_loop(&fields).map_err(|m| bad(&m))?),
                "exit" => {
                    let id = fields.first().and_then(|f| f.parse::<u32>().ok()).ok_or_else(|| bad("bad loop id"))?;
                    let kv = key_values(&fields[1..]);
                    let branch = kv.get("branch").ok_or_else(|| bad("missing branch"))?;
                    let target = kv.get("target").ok_or_else(|| bad("missing target"))?;
                    let ann = image
                        .loop_annotations
                        .iter_mut()
                        .find(|a| a.loop_id == id)
                        .ok_or_else(|| bad("exit for unknown loop"))?;
                    ann.exits.push((branch.to_string(), target.to_string()));
                }
                "entry" => {
                    let [id, label] = fields[..] else { return Err(bad("entry needs loop id and label")) };
                    let id: u32 = id.parse().map_err(|_| bad("bad loop id"))?;
                    let ann = image
                        .loop_annotations
                        .iter_mut()
                        .find(|a| a.loop_id == id)
                        .ok_or_else(|| bad("entry for unknown loop"))?;
                    ann.entries.push(label.to_string());
                }
                "output" => image.outputs.push(parse_output(&fields).ok_or_else(|| bad("bad output"))?),
                "data" => {
                    let [addr, values] = fields[..] else { return Err(bad("data needs address and values")) };
                    let addr = parse_u32(addr).ok_or_else(|| bad("bad address"))?;
                    let values = values
                        .split(',')
                        .map(|v| parse_i32(v.trim()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("bad data value"))?;
                    image.data.push((addr, values));
                }
                "init" => {
                    let [a, b] = fields[..] else { return Err(bad("init needs two addresses")) };
                    image.init_range = Some((
                        parse_u32(a).ok_or_else(|| bad("bad address"))?,
                        parse_u32(b).ok_or_else(|| bad("bad address"))?,
                    ));
                }
                "variant" => image.zolc_variant = Some(value.to_string()),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(image)
    }

    /// Writes `<stem>.img` and `<stem>.meta` next to `path`.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path.with_extension("img"), self.to_img_bytes())?;
        std::fs::write(path.with_extension("meta"), self.to_meta())?;
        Ok(())
    }

    /// Loads an `.img` file and its `.meta` sidecar, if present.
    pub fn load(path: &Path) -> Result<ProgramImage, ImageError> {
        let words = Self::words_from_img_bytes(&std::fs::read(path.with_extension("img"))?)?;
        let meta_path = path.with_extension("meta");
        let meta = if meta_path.exists() { std::fs::read_to_string(meta_path)? } else { String::new() };
        Self::from_parts(words, &meta)
    }
}

pub(crate) fn key_values<'a>(fields: &[&'a str]) -> BTreeMap<&'a str, &'a str> {
    fields.iter().filter_map(|f| f.split_once('=')).collect()
}

pub(crate) fn parse_i64(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -value } else { value })
}

pub(crate) fn parse_i32(text: &str) -> Option<i32> {
    parse_i64(text).and_then(|v| i32::try_from(v).ok())
}

pub(crate) fn parse_u32(text: &str) -> Option<u32> {
    parse_i64(text).and_then(|v| u32::try_from(v).ok())
}

pub(crate) fn parse_reg(text: &str) -> Option<Reg> {
    let digits = text.strip_prefix('r').or_else(|| text.strip_prefix('R'))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Reg::new(digits.parse().ok()?)
}

pub(crate) fn parse_output(fields: &[&str]) -> Option<OutputSpec> {
    match fields {
        [reg] => parse_reg(reg).map(OutputSpec::Reg),
        [kw, addr, words] if kw.eq_ignore_ascii_case("mem") => Some(OutputSpec::Mem {
            addr: parse_u32(addr)?,
            words: parse_u32(words)?,
        }),
        _ => None,
    }
}

fn parse_meta_loop(fields: &[&str]) -> Result<LoopAnnotation, String> {
    let id: u32 = fields.first().and_then(|f| f.parse().ok()).ok_or("bad loop id")?;
    let kv = key_values(&fields[1..]);
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("missing `{k}`"));
    Ok(LoopAnnotation {
        loop_id: id,
        body_start: get("body")?.to_string(),
        body_end: get("end")?.to_string(),
        index_reg: parse_reg(get("reg")?).ok_or("bad register")?,
        initial: parse_i32(get("init")?).ok_or("bad init")?,
        step: parse_i32(get("step")?).ok_or("bad step")?,
        final_: parse_i32(get("final")?).ok_or("bad final")?,
        compare: get("cmp")?.parse()?,
        exits: Vec::new(),
        entries: Vec::new(),
    })
}
