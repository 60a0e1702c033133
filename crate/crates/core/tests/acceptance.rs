//! Acceptance criteria, run as a plain binary so every criterion prints
//! exactly one `PASS`/`FAIL` line. Exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use common::{generate, Form, GenOptions};
use zolc_core::analysis::{analyze, build_zolc_image, generate_zolc_config, AnalysisError};
use zolc_core::assembler::assemble;
use zolc_core::bench::{bundled_suite_dir, load_suite, run_suite, BenchSpec, RowStatus, DEFAULT_MAX_CYCLES};
use zolc_core::image::ProgramImage;
use zolc_core::isa::{decode, Instruction};
use zolc_core::sim::{
    region_cycles, region_taken, simulate_with, verify_equivalence, CoreKind, CoreVariant, SimOptions, Simulation,
    TraceEvent,
};
use zolc_core::zolc::{storage_bytes, Feature, Resource, ZolcError, ZolcVariant};

const BUDGET: u64 = 2_000_000;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(image: &ProgramImage, core: CoreVariant) -> Result<Simulation, String> {
    simulate_with(image, &core, SimOptions { max_cycles: BUDGET, trace: true, ..SimOptions::default() })
        .map_err(|e| e.to_string())
}

fn suite() -> Vec<BenchSpec> {
    load_suite(&bundled_suite_dir()).expect("bundled suite loads")
}

/// Lowest and highest address covered by any loop annotation.
fn loop_region(image: &ProgramImage) -> (u32, u32) {
    let ranges: Vec<(u32, u32)> = image.loop_annotations.iter().map(|a| image.loop_range(a).unwrap()).collect();
    (ranges.iter().map(|r| r.0).min().unwrap(), ranges.iter().map(|r| r.1).max().unwrap())
}

fn zero_overhead() -> Outcome {
    let mut cases = 0;
    for b in 1..=5u32 {
        for n in 1..=50u32 {
            let mut src = format!(".loop 0 body=S end=E reg=r20 init=0 step=1 final={n} cmp=LT\n.output r1\n.zolc_init\n");
            for i in 0..b {
                let label = match (i == 0, i == b - 1) {
                    (true, true) => "S:\nE:",
                    (true, false) => "S:",
                    (false, true) => "E:",
                    _ => "",
                };
                src.push_str(&format!("{label} ADDI r1, r1, {}\n", i + 1));
            }
            src.push_str("HALT\n");
            for v in ZolcVariant::ALL {
                let image = build_zolc_image(&src, v).map_err(|e| format!("B={b} N={n} {}: {e}", v.name()))?;
                let sim = run(&image, CoreVariant::new(CoreKind::Zolc(v)))?;
                let (s, e) = image.loop_range(&image.loop_annotations[0]).unwrap();
                let got = region_cycles(&sim.trace, s, e);
                ensure(got == (n * b) as u64, || format!("B={b} N={n} {}: region {got} != {}", v.name(), n * b))?;
                let sum: i32 = (1..=b as i32).sum::<i32>() * n as i32;
                ensure(sim.state.reg(zolc_core::isa::Reg::new(1).unwrap()) == sum, || format!("B={b} N={n}: wrong r1"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (B, N, variant) cases, region cycles == N*B exactly"))
}

fn variant_ordering() -> Outcome {
    let specs = suite();
    let cores = [CoreKind::Hrdwil, CoreKind::Zolc(ZolcVariant::Lite), CoreKind::Zolc(ZolcVariant::Full)];
    let report = run_suite(&specs, &cores, 2, DEFAULT_MAX_CYCLES);
    let mut hr = Vec::new();
    let mut zo = Vec::new();
    let mut table = String::new();
    for s in &specs {
        let ok = |k| report.row(&s.name, k).filter(|r| r.status == RowStatus::Ok).and_then(|r| r.reduction_pct);
        let h = ok(CoreKind::Hrdwil).ok_or_else(|| format!("{}: hrdwil row failed", s.name))?;
        let (z, which) = match ok(CoreKind::Zolc(ZolcVariant::Lite)) {
            Some(p) => (p, "lite"),
            None => (ok(CoreKind::Zolc(ZolcVariant::Full)).ok_or_else(|| format!("{}: no ZOLC row", s.name))?, "full"),
        };
        table.push_str(&format!("    {:<10} hrdwil {h:6.2}%  zolc({which}) {z:6.2}%\n", s.name));
        hr.push(h);
        zo.push(z);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (ah, az, mh, mz) = (avg(&hr), avg(&zo), max(&hr), max(&zo));
    print!("{table}");
    println!("    measured: hrdwil avg {ah:.2}% max {mh:.2}%; zolc avg {az:.2}% max {mz:.2}%");
    println!("    reference figures (other ISA and suite): branch-decrement avg 11.1% max 27.5%; zolc avg 26.2% max 48.2%");
    ensure(az > ah && ah > 0.0, || format!("average ordering violated: zolc {az:.2} hrdwil {ah:.2}"))?;
    ensure(mz > mh, || format!("max ordering violated: zolc {mz:.2} hrdwil {mh:.2}"))?;
    Ok(format!("avg zolc {az:.2}% > avg hrdwil {ah:.2}% > 0, max {mz:.2}% > {mh:.2}%"))
}

fn equivalence() -> Outcome {
    let specs = suite();
    let report = run_suite(&specs, &CoreKind::ALL, 2, DEFAULT_MAX_CYCLES);
    let mut pairs = 0;
    let mut rejected = 0;
    for r in &report.rows {
        match &r.status {
            RowStatus::Ok => pairs += 1,
            RowStatus::Unsupported(_) => rejected += 1,
            RowStatus::Failed(m) => return Err(format!("{} on {}: {m}", r.benchmark, r.core)),
        }
    }
    let opts = GenOptions { max_depth: 3, exit_prob: 0.3, ..GenOptions::default() };
    let results: Vec<Result<usize, String>> = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let p = generate(seed, &opts);
            let reference = assemble(p.source(Form::Default)).map_err(|e| format!("seed {seed}: {e}"))?;
            let mut checked = 0;
            let hr = assemble(p.source(Form::Hrdwil)).map_err(|e| format!("seed {seed}: {e}"))?;
            let mut check = |image: &ProgramImage, kind: CoreKind| {
                let v = verify_equivalence(&reference, image, &CoreVariant::new(kind), BUDGET);
                checked += 1;
                if v.pass {
                    Ok(())
                } else {
                    Err(format!("seed {seed} on {}: {}", kind.name(), v.cause.unwrap_or_default()))
                }
            };
            check(&hr, CoreKind::Hrdwil)?;
            for v in ZolcVariant::ALL {
                match build_zolc_image(p.source(Form::Zolc), v) {
                    Ok(image) => check(&image, CoreKind::Zolc(v))?,
                    Err(AnalysisError::Zolc(_)) if v != ZolcVariant::Full => {}
                    Err(e) => return Err(format!("seed {seed} {}: {e}", v.name())),
                }
            }
            Ok(checked)
        })
        .collect();
    let mut programs = 0;
    for r in results {
        programs += r?;
    }
    Ok(format!("{pairs} suite pairs ({rejected} rejected at config time), {programs} generated program/core pairs bit-exact"))
}

fn capacity() -> Outcome {
    let loops = |n: usize, nested: bool| {
        let mut s = String::new();
        for i in 0..n {
            let end = if nested { "E".to_string() } else { format!("S{i}") };
            s.push_str(&format!(".loop {i} body=S{i} end={end} reg=r{} init=0 step=1 final=2 cmp=LT\n", 10 + i));
        }
        s.push_str(".zolc_init\n");
        for i in 0..n {
            s.push_str(&format!("S{i}: ADDI r1, r1, 1\n"));
        }
        if nested {
            s.push_str("E: ADDI r2, r2, 1\n");
        }
        s.push_str("HALT\n");
        s
    };
    let err = |src: &str, v| build_zolc_image(src, v).err();
    let nine = err(&loops(9, false), ZolcVariant::Full);
    ensure(
        matches!(nine, Some(AnalysisError::Zolc(ZolcError::CapacityExceeded { resource: Resource::Loops, have: 9, limit: 8 }))),
        || format!("9 loops on full: {nine:?}"),
    )?;
    ensure(err(&loops(8, false), ZolcVariant::Full).is_none(), || "8 loops rejected on full".into())?;
    let sad = suite().into_iter().find(|s| s.name == "sad").unwrap();
    let exit = err(sad.zolc_src.as_deref().unwrap(), ZolcVariant::Lite);
    ensure(
        matches!(exit, Some(AnalysisError::Zolc(ZolcError::VariantUnsupported(Feature::MultiExit)))),
        || format!("multi-exit on lite: {exit:?}"),
    )?;
    let gen_exits = (0..200u64)
        .map(|s| generate(s, &GenOptions::default()))
        .filter(|p| p.exits > 0 && p.loops <= 8)
        .map(|p| err(p.source(Form::Zolc), ZolcVariant::Lite))
        .collect::<Vec<_>>();
    ensure(
        gen_exits.iter().all(|e| matches!(e, Some(AnalysisError::Zolc(ZolcError::VariantUnsupported(Feature::MultiExit))))),
        || "a generated multi-exit program was not rejected on lite".into(),
    )?;
    for (what, src) in [("second loop", loops(2, false)), ("nested loop", loops(2, true))] {
        let e = err(&src, ZolcVariant::Micro);
        ensure(
            matches!(e, Some(AnalysisError::Zolc(ZolcError::CapacityExceeded { resource: Resource::Loops, have: 2, limit: 1 }))),
            || format!("{what} on uzolc: {e:?}"),
        )?;
    }
    Ok(format!("full 9th loop, lite multi-exit ({} generated + sad), uzolc second/nested loop rejected", gen_exits.len()))
}

fn storage() -> Outcome {
    let (m, l, f) = (storage_bytes(ZolcVariant::Micro), storage_bytes(ZolcVariant::Lite), storage_bytes(ZolcVariant::Full));
    ensure(m == 30, || format!("uzolc storage {m} != 30"))?;
    ensure(m < l && l < f, || format!("storage not increasing: {m} {l} {f}"))?;
    Ok(format!("uzolc {m} B, lite {l} B, full {f} B"))
}

fn init_bound() -> Outcome {
    let mut checked = 0;
    for spec in suite() {
        for v in ZolcVariant::ALL {
            let Ok(image) = build_zolc_image(spec.zolc_src.as_deref().unwrap(), v) else { continue };
            let sim = run(&image, CoreVariant::new(CoreKind::Zolc(v)))?;
            let analysis = analyze(&image).map_err(|e| e.to_string())?;
            let fields = generate_zolc_config(&analysis, &image, v).map_err(|e| e.to_string())?.stored_fields() as u64;
            let zcfg = sim.trace.iter().filter(|e| matches!(e.instr, Instruction::Zcfg { .. })).count() as u64;
            let zrun = sim.trace.iter().filter(|e| e.instr == Instruction::Zrun).count();
            let name = format!("{} on {}", spec.name, v.name());
            ensure(zcfg == fields, || format!("{name}: {zcfg} ZCFG for {fields} fields"))?;
            ensure(zrun == 1, || format!("{name}: ZRUN ran {zrun} times"))?;
            let oh = sim.report.init_overhead_cycles;
            ensure(oh <= 2 * fields + 1, || format!("{name}: init {oh} cycles > 2*{fields}+1"))?;
            let (s, e) = image.init_range.unwrap();
            for pc in (s..e).step_by(4) {
                let n = sim.trace.iter().filter(|t| t.pc == pc).count();
                ensure(n == 1, || format!("{name}: init pc {pc:#x} ran {n} times"))?;
            }
            for (i, &w) in image.words.iter().enumerate() {
                let pc = 4 * i as u32;
                if matches!(decode(w), Ok(Instruction::Zcfg { .. })) {
                    ensure(analysis.forest.loops.iter().all(|l| !l.contains_pc(pc)), || format!("{name}: ZCFG at {pc:#x} inside a loop"))?;
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} kernel/variant builds: init <= 2F+1, once, outside loop bodies"))
}

fn chaining() -> Outcome {
    let (n0, n1, n2) = (3u64, 4u64, 5u64);
    let src = format!(
        "\
.loop 0 body=S0 end=E reg=r20 init=0 step=1 final={n0} cmp=LT
.loop 1 body=S1 end=E reg=r21 init=0 step=1 final={n1} cmp=LT
.loop 2 body=S2 end=E reg=r22 init=0 step=1 final={n2} cmp=LT
.output r1, r2, r3
.zolc_init
S0: ADDI r1, r1, 1
S1: ADDI r2, r2, 1
S2: ADDI r3, r3, 1
E:  ADD r4, r1, r2
    HALT
"
    );
    let mut lines = Vec::new();
    for v in [ZolcVariant::Lite, ZolcVariant::Full] {
        let image = build_zolc_image(&src, v).map_err(|e| e.to_string())?;
        let sim = run(&image, CoreVariant::new(CoreKind::Zolc(v)))?;
        let e_pc = image.addr_of("E").unwrap();
        // Oracle: at each pass through E the innermost loop is evaluated,
        // and each loop that just finished hands over to its parent.
        let mut expected = Vec::new();
        for _ in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    expected.push(if i2 + 1 < n2 { 1 } else if i1 + 1 < n1 { 2 } else { 3 });
                }
            }
        }
        let chains: Vec<usize> = sim
            .trace
            .iter()
            .filter(|t| t.pc == e_pc)
            .map(|t| match t.event {
                TraceEvent::Redirect { chain, .. } => chain,
                _ => 0,
            })
            .collect();
        ensure(chains == expected, || format!("{}: chain lengths {chains:?}", v.name()))?;
        let last = sim.trace.iter().rev().find(|t| t.pc == e_pc).unwrap();
        ensure(matches!(last.event, TraceEvent::Redirect { chain: 3, .. }), || format!("{}: final pass not one chain-3 redirect", v.name()))?;
        let triple = [last];
        let last_end = sim.trace.iter().rposition(|t| t.pc == e_pc).unwrap();
        let next = &sim.trace[last_end + 1];
        ensure(next.instr == Instruction::Halt && next.cycle == triple[0].cycle + 1, || {
            format!("{}: final transition charged extra cycles", v.name())
        })?;
        ensure(sim.report.max_chain == 3, || format!("{}: max chain {}", v.name(), sim.report.max_chain))?;
        let body = n0 * (1 + n1 * (1 + n2 * 2));
        let (s, e) = image.loop_range(&image.loop_annotations[0]).unwrap();
        let got = region_cycles(&sim.trace, s, e);
        ensure(got == body, || format!("{}: region {got} != {body}", v.name()))?;
        ensure(sim.report.cycles == sim.report.dyn_instr, || format!("{}: cycles != instructions", v.name()))?;
        lines.push(v.name());
    }
    Ok(format!("final pass resolved by one chain-3 redirect, zero added cycles on {}", lines.join(", ")))
}

fn penalty_sweep() -> Outcome {
    let mut strict = 0;
    let mut notes = Vec::new();
    for spec in suite() {
        let zolc_variant = [ZolcVariant::Lite, ZolcVariant::Full]
            .into_iter()
            .find(|&v| build_zolc_image(spec.zolc_src.as_deref().unwrap(), v).is_ok())
            .unwrap();
        let zimage = build_zolc_image(spec.zolc_src.as_deref().unwrap(), zolc_variant).unwrap();
        let (s, e) = loop_region(&zimage);
        let mut z_region = Vec::new();
        let mut z_control = Vec::new();
        for kind in [CoreKind::Default, CoreKind::Hrdwil] {
            let image = spec.build(kind).map_err(|e| e.to_string())?;
            let cycles: Vec<u64> = (0..=3)
                .map(|p| run(&image, CoreVariant::new(kind).with_penalty(p)).map(|s| s.report.cycles))
                .collect::<Result<_, _>>()?;
            ensure(cycles.windows(2).all(|w| w[0] < w[1]), || format!("{} on {}: {cycles:?} not increasing", spec.name, kind.name()))?;
        }
        for p in 0..=3u32 {
            let sim = run(&zimage, CoreVariant::new(CoreKind::Zolc(zolc_variant)).with_penalty(p))?;
            let region = region_cycles(&sim.trace, s, e);
            z_region.push(region);
            z_control.push(region - p as u64 * region_taken(&sim.trace, s, e));
        }
        ensure(z_control.windows(2).all(|w| w[0] == w[1]), || format!("{}: loop control cycles vary {z_control:?}", spec.name))?;
        if z_region.windows(2).all(|w| w[0] == w[1]) {
            strict += 1;
        } else {
            notes.push(format!("{} region {z_region:?} varies only by its data-dependent branches", spec.name));
        }
    }
    for n in notes {
        println!("    {n}");
    }
    Ok(format!("default/hrdwil strictly increasing; zolc region constant on {strict}/6 kernels, loop control constant on all"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("zero-overhead counted loops", zero_overhead),
        ("variant ordering", variant_ordering),
        ("oracle equivalence", equivalence),
        ("capacity enforcement", capacity),
        ("storage accounting", storage),
        ("init overhead bound", init_bound),
        ("nested last-iteration chaining", chaining),
        ("penalty sensitivity", penalty_sweep),
    ];
    let limits = [1, 10, 60, 10, 1, 10, 1, 10].map(Duration::from_secs);
    let mut failed = 0;
    for (i, ((name, f), limit)) in criteria.into_iter().zip(limits).enumerate() {
        let t = Instant::now();
        let outcome = f();
        let dt = t.elapsed();
        match outcome {
            Ok(msg) => println!("criterion {} {name}: PASS ({msg}; {:.2}s, budget {}s)", i + 1, dt.as_secs_f64(), limit.as_secs()),
            Err(msg) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({msg})", i + 1);
            }
        }
        if dt > limit && cfg!(not(debug_assertions)) {
            println!("    runtime {:.2}s exceeds the {}s budget", dt.as_secs_f64(), limit.as_secs());
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
