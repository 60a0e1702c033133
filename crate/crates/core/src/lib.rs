//! Cycle-accurate simulation of a small RISC core with a zero-overhead loop
//! controller (ZOLC), plus the assembler and loop/task analysis that
//! produce ZOLC configurations.

pub mod analysis;
pub mod assembler;
pub mod bench;
pub mod bounds;
pub mod image;
pub mod isa;
pub mod machine;
pub mod sim;
pub mod zolc;
