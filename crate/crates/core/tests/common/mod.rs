//! Random counted-loop programs emitted in all three loop-control forms.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OUT_BASE: u32 = 0x2000;
pub const OUT_WORDS: u32 = 512;
/// Early-exit threshold register.
const THR: u8 = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    Default,
    Hrdwil,
    Zolc,
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub max_loops: usize,
    pub max_depth: usize,
    pub max_trips: u32,
    pub exit_prob: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { max_loops: 8, max_depth: 3, max_trips: 4, exit_prob: 0.3 }
    }
}

#[derive(Clone, Debug)]
struct GenLoop {
    id: usize,
    trips: u32,
    a: Vec<String>,
    children: Vec<GenLoop>,
    b: Vec<String>,
    exit: Option<u8>,
}

#[derive(Clone, Debug)]
enum Item {
    Ops(Vec<String>),
    Loop(GenLoop),
}

#[derive(Clone, Debug)]
pub struct GenProgram {
    pub default: String,
    pub hrdwil: String,
    pub zolc: String,
    pub loops: usize,
    pub exits: usize,
    pub depth: usize,
}

impl GenProgram {
    pub fn source(&self, form: Form) -> &str {
        match form {
            Form::Default => &self.default,
            Form::Hrdwil => &self.hrdwil,
            Form::Zolc => &self.zolc,
        }
    }
}

fn reg(rng: &mut ChaCha8Rng) -> u8 {
    rng.gen_range(1..=8)
}

fn op(rng: &mut ChaCha8Rng) -> String {
    let (d, s, t) = (reg(rng), reg(rng), reg(rng));
    let addr = OUT_BASE + 4 * rng.gen_range(0..OUT_WORDS);
    match rng.gen_range(0..7) {
        0 => format!("ADD r{d}, r{s}, r{t}"),
        1 => format!("SUB r{d}, r{s}, r{t}"),
        2 => format!("MUL r{d}, r{s}, r{t}"),
        3 => format!("SLT r{d}, r{s}, r{t}"),
        4 => format!("ADDI r{d}, r{s}, {}", rng.gen_range(-20..=20)),
        5 => format!("SW r{s}, {addr:#x}(r0)"),
        _ => format!("LW r{d}, {addr:#x}(r0)"),
    }
}

fn ops(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| op(rng)).collect()
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    opts: &'a GenOptions,
    next_id: usize,
    exits: usize,
    depth: usize,
}

impl Gen<'_> {
    fn gen_loop(&mut self, depth: usize, allow_exit: bool) -> GenLoop {
        let id = self.next_id;
        self.next_id += 1;
        self.depth = self.depth.max(depth);
        let trips = self.rng.gen_range(1..=self.opts.max_trips);
        let mut a = ops(self.rng, 3);
        let mut children = Vec::new();
        if depth < self.opts.max_depth {
            let want = self.rng.gen_range(0..=2);
            for _ in 0..want {
                if self.next_id >= self.opts.max_loops {
                    break;
                }
                children.push(self.gen_loop(depth + 1, true));
            }
        }
        let mut b = ops(self.rng, 3);
        let exit = if allow_exit && self.rng.gen_bool(self.opts.exit_prob) {
            self.exits += 1;
            Some(reg(self.rng))
        } else {
            None
        };
        // The exit branch must not end the body, a parent of an exiting
        // child keeps the exit target inside itself, and a loop never
        // coincides with its only child.
        let child_exits = children.iter().any(|c| c.exit.is_some());
        if (exit.is_some() || child_exits) && b.is_empty() {
            b.push(op(self.rng));
        }
        if children.is_empty() && a.is_empty() && b.is_empty() {
            a.push(op(self.rng));
        }
        if children.len() == 1 && a.is_empty() && b.is_empty() {
            if self.rng.gen_bool(0.5) {
                a.push(op(self.rng));
            } else {
                b.push(op(self.rng));
            }
        }
        GenLoop { id, trips, a, children, b, exit }
    }
}

struct Line {
    labels: Vec<String>,
    text: String,
}

fn emit_loop(l: &GenLoop, form: Form, out: &mut Vec<Line>, pending: &mut Vec<String>) {
    let counter = 10 + l.id;
    let bound = 18 + l.id;
    let push = |out: &mut Vec<Line>, pending: &mut Vec<String>, text: String| {
        out.push(Line { labels: std::mem::take(pending), text });
    };
    match form {
        Form::Default => push(out, pending, format!("ADDI r{counter}, r0, 0")),
        Form::Hrdwil => push(out, pending, format!("ADDI r{counter}, r0, {}", l.trips)),
        Form::Zolc => {}
    }
    pending.push(format!("S{}", l.id));
    for t in &l.a {
        push(out, pending, t.clone());
    }
    if let Some(x) = l.exit {
        pending.push(format!("X{}", l.id));
        push(out, pending, format!("BLT r{THR}, r{x}, A{}", l.id));
    }
    for c in &l.children {
        emit_loop(c, form, out, pending);
    }
    for t in &l.b {
        push(out, pending, t.clone());
    }
    match form {
        Form::Default => {
            push(out, pending, format!("ADDI r{counter}, r{counter}, 1"));
            pending.push(format!("E{}", l.id));
            push(out, pending, format!("BLT r{counter}, r{bound}, S{}", l.id));
        }
        Form::Hrdwil => {
            pending.push(format!("E{}", l.id));
            push(out, pending, format!("BDEC r{counter}, S{}", l.id));
        }
        Form::Zolc => {
            // The end label goes on the last body instruction.
            out.last_mut().expect("loop bodies are nonempty").labels.push(format!("E{}", l.id));
        }
    }
    pending.push(format!("A{}", l.id));
}

fn directives(l: &GenLoop, form: Form, out: &mut String) {
    let reg = 10 + l.id;
    let bounds = match form {
        Form::Hrdwil => format!("init={} step=-1 final=0 cmp=NE", l.trips),
        _ => format!("init=0 step=1 final={} cmp=LT", l.trips),
    };
    out.push_str(&format!(".loop {} body=S{} end=E{} reg=r{reg} {bounds}\n", l.id, l.id, l.id));
    if l.exit.is_some() {
        out.push_str(&format!(".exit {} branch=X{} target=A{}\n", l.id, l.id, l.id));
    }
    for c in &l.children {
        directives(c, form, out);
    }
}

fn collect<'a>(l: &'a GenLoop, out: &mut Vec<&'a GenLoop>) {
    out.push(l);
    for c in &l.children {
        collect(c, out);
    }
}

fn render(items: &[Item], prologue: &[String], form: Form) -> String {
    let mut loops = Vec::new();
    for it in items {
        if let Item::Loop(l) = it {
            collect(l, &mut loops);
        }
    }
    let mut s = String::new();
    for it in items {
        if let Item::Loop(l) = it {
            directives(l, form, &mut s);
        }
    }
    s.push_str(".output r1, r2, r3, r4, r5, r6, r7, r8\n");
    s.push_str(&format!(".output mem {OUT_BASE:#x} {OUT_WORDS}\n"));
    let mut lines = Vec::new();
    let mut pending = Vec::new();
    for p in prologue {
        lines.push(Line { labels: Vec::new(), text: p.clone() });
    }
    for l in &loops {
        lines.push(Line { labels: Vec::new(), text: format!("ADDI r{}, r0, {}", 18 + l.id, l.trips) });
    }
    for it in items {
        match it {
            Item::Ops(v) => {
                for t in v {
                    lines.push(Line { labels: std::mem::take(&mut pending), text: t.clone() });
                }
            }
            Item::Loop(l) => emit_loop(l, form, &mut lines, &mut pending),
        }
    }
    lines.push(Line { labels: pending, text: "HALT".into() });
    let init_at = prologue.len() + loops.len();
    for (i, line) in lines.iter().enumerate() {
        if i == init_at && form == Form::Zolc {
            s.push_str(".zolc_init\n");
        }
        for l in &line.labels {
            s.push_str(l);
            s.push_str(":\n");
        }
        s.push_str("    ");
        s.push_str(&line.text);
        s.push('\n');
    }
    s
}

/// A random program with up to `opts.max_loops` counted loops nested at
/// most `opts.max_depth` deep. Loop bodies are identical in every form;
/// only the loop control differs.
pub fn generate(seed: u64, opts: &GenOptions) -> GenProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prologue: Vec<String> = (1..=8).map(|r| format!("ADDI r{r}, r0, {}", rng.gen_range(-100..=100))).collect();
    prologue.push(format!("ADDI r{THR}, r0, {}", rng.gen_range(-60..=60)));
    let mut g = Gen { rng: &mut rng, opts, next_id: 0, exits: 0, depth: 0 };
    let mut items = Vec::new();
    let n_items = g.rng.gen_range(1..=3);
    for _ in 0..n_items {
        if g.next_id < opts.max_loops && g.rng.gen_bool(0.7) {
            let l = g.gen_loop(1, true);
            items.push(Item::Loop(l));
        } else {
            let o = ops(g.rng, 3);
            items.push(Item::Ops(o));
        }
    }
    if g.next_id == 0 {
        let l = g.gen_loop(1, true);
        items.push(Item::Loop(l));
    }
    let (loops, exits, depth) = (g.next_id, g.exits, g.depth);
    prologue.shuffle(&mut rng);
    GenProgram {
        default: render(&items, &prologue, Form::Default),
        hrdwil: render(&items, &prologue, Form::Hrdwil),
        zolc: render(&items, &prologue, Form::Zolc),
        loops,
        exits,
        depth,
    }
}
