use zolc_core::analysis::{analyze, build_zolc_image, emit_init_sequence, generate_zolc_config};
use zolc_core::assembler::assemble;
use zolc_core::machine::run_functional;
use zolc_core::sim::{
    count_loop_pattern_overhead, region_cycles, simulate, verify_equivalence, CoreKind, CoreVariant, SimError,
};
use zolc_core::zolc::ZolcVariant;

const BUDGET: u64 = 1_000_000;

const DEFAULT_LOOP: &str = "
.loop 0 body=L end=E reg=r10 init=0 step=1 final=10 cmp=LT
.output r1, r2, r3
    ADDI r11, r0, 10
    ADDI r10, r0, 0
L:  ADDI r1, r1, 1
    ADDI r2, r2, 2
    ADD r3, r1, r2
    ADDI r10, r10, 1
E:  BLT r10, r11, L
    HALT
";

const ZOLC_LOOP: &str = "
.loop 0 body=L end=E reg=r10 init=0 step=1 final=10 cmp=LT
.output r1, r2, r3
.zolc_init
L:  ADDI r1, r1, 1
    ADDI r2, r2, 2
E:  ADD r3, r1, r2
    HALT
";

#[test]
fn straight_line_costs_one_cycle_each() {
    let mut src = String::new();
    for i in 1..=10 {
        src.push_str(&format!("ADDI r{i}, r0, {i}\n"));
    }
    src.push_str("HALT\n");
    let image = assemble(&src).unwrap();
    let sim = simulate(&image, &CoreVariant::new(CoreKind::Default), BUDGET).unwrap();
    assert_eq!(sim.report.cycles, 11);
    assert_eq!(count_loop_pattern_overhead(&sim.trace), 0);
}

#[test]
fn default_counted_loop_cost() {
    let image = assemble(DEFAULT_LOOP).unwrap();
    let sim = simulate(&image, &CoreVariant::new(CoreKind::Default), BUDGET).unwrap();
    // Trace replay: every retired instruction costs 1, plus 2 per taken branch.
    let state = run_functional(&image, BUDGET).unwrap();
    let replay: u64 = state.dyn_instr + 2 * sim.trace.iter().filter(|e| e.taken).count() as u64;
    assert_eq!(sim.report.cycles, replay);
    assert_eq!(sim.report.cycles, 2 + 10 * 5 + 9 * 2 + 1);
    assert_eq!(count_loop_pattern_overhead(&sim.trace), 10 * 2 + 9 * 2);
}

#[test]
fn zolc_counted_loop_is_overhead_free() {
    let image = build_zolc_image(ZOLC_LOOP, ZolcVariant::Micro).unwrap();
    let sim = simulate(&image, &CoreVariant::new(CoreKind::Zolc(ZolcVariant::Micro)), BUDGET).unwrap();
    let (s, e) = image.loop_range(&image.loop_annotations[0]).unwrap();
    assert_eq!(region_cycles(&sim.trace, s, e), 10 * 3);
    let analysis = analyze(&image).unwrap();
    let config = generate_zolc_config(&analysis, &image, ZolcVariant::Micro).unwrap();
    let init_len = emit_init_sequence(&config).len() as u64;
    assert_eq!(sim.report.init_overhead_cycles, init_len);
    assert_eq!(sim.report.cycles, init_len + 30 + 1);
    assert_eq!(sim.report.redirects, 10);
    assert_eq!(count_loop_pattern_overhead(&sim.trace), 0);
    let reference = assemble(DEFAULT_LOOP).unwrap();
    let v = verify_equivalence(&reference, &image, &CoreVariant::new(CoreKind::Zolc(ZolcVariant::Micro)), BUDGET);
    assert!(v.pass, "{v:?}");
}

#[test]
fn corrupted_bound_fails_equivalence() {
    let image = build_zolc_image(&ZOLC_LOOP.replace("final=10", "final=9"), ZolcVariant::Micro).unwrap();
    let reference = assemble(DEFAULT_LOOP).unwrap();
    let v = verify_equivalence(&reference, &image, &CoreVariant::new(CoreKind::Zolc(ZolcVariant::Micro)), BUDGET);
    assert!(!v.pass);
}

#[test]
fn identical_images_are_equivalent() {
    let image = assemble(DEFAULT_LOOP).unwrap();
    assert!(verify_equivalence(&image, &image, &CoreVariant::new(CoreKind::Default), BUDGET).pass);
}

#[test]
fn cores_reject_foreign_instructions() {
    let image = build_zolc_image(ZOLC_LOOP, ZolcVariant::Lite).unwrap();
    let err = simulate(&image, &CoreVariant::new(CoreKind::Default), BUDGET).unwrap_err();
    assert!(matches!(err, SimError::UnsupportedInstruction { mnemonic: "ZCFG", .. }));
    let err = simulate(&image, &CoreVariant::new(CoreKind::Zolc(ZolcVariant::Full)), BUDGET).unwrap_err();
    assert!(matches!(err, SimError::VariantMismatch { .. }));
    let bdec = assemble("ADDI r1, r0, 2\nL: BDEC r1, L\nHALT\n").unwrap();
    assert!(simulate(&bdec, &CoreVariant::new(CoreKind::Hrdwil), BUDGET).is_ok());
    for kind in [CoreKind::Default, CoreKind::Zolc(ZolcVariant::Lite)] {
        let err = simulate(&bdec, &CoreVariant::new(kind), BUDGET).unwrap_err();
        assert!(matches!(err, SimError::UnsupportedInstruction { mnemonic: "BDEC", .. }));
    }
}
