//! Benchmark suite harness: builds every kernel for every core, checks it
//! against the functional oracle, and tabulates cycle reductions.
//!
//! A suite directory holds one subdirectory per benchmark with up to three
//! sources sharing the same loop bodies and `.output` declarations:
//! `default.s` (compare-branch loops, required), `hrdwil.s` (`BDEC`
//! loops) and `zolc.s` (no loop control; `.loop` directives drive the
//! ZOLC configuration).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{build_zolc_image, AnalysisError};
use crate::assembler::{assemble, AsmError};
use crate::image::ProgramImage;
use crate::sim::{simulate_with, verify_equivalence, CoreKind, CoreVariant, CycleReport, SimOptions};

pub const DEFAULT_MAX_CYCLES: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{bench}/{form}: {source}")]
    Asm { bench: String, form: &'static str, source: AsmError },
    #[error("{bench}: {source}")]
    Analysis { bench: String, source: AnalysisError },
    #[error("{bench} has no {form} form")]
    MissingForm { bench: String, form: &'static str },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchSpec {
    pub name: String,
    pub default_src: String,
    pub hrdwil_src: Option<String>,
    pub zolc_src: Option<String>,
}

/// The kernels shipped with this crate.
pub fn bundled_suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("suite")
}

fn read_opt(path: &Path) -> Result<Option<String>, BenchError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(BenchError::Io { path: path.to_path_buf(), source }),
    }
}

/// Loads every benchmark subdirectory of `dir`, sorted by name.
pub fn load_suite(dir: &Path) -> Result<Vec<BenchSpec>, BenchError> {
    let io = |source| BenchError::Io { path: dir.to_path_buf(), source };
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    names.sort();
    let mut specs = Vec::new();
    for d in names {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let default_src = read_opt(&d.join("default.s"))?
            .ok_or_else(|| BenchError::MissingForm { bench: name.clone(), form: "default" })?;
        specs.push(BenchSpec {
            hrdwil_src: read_opt(&d.join("hrdwil.s"))?,
            zolc_src: read_opt(&d.join("zolc.s"))?,
            name,
            default_src,
        });
    }
    Ok(specs)
}

impl BenchSpec {
    /// Image of the form that runs on `core`.
    pub fn build(&self, core: CoreKind) -> Result<ProgramImage, BenchError> {
        let missing = |form| BenchError::MissingForm { bench: self.name.clone(), form };
        let asm = |form, src: &str| {
            assemble(src).map_err(|source| BenchError::Asm { bench: self.name.clone(), form, source })
        };
        match core {
            CoreKind::Default => asm("default", &self.default_src),
            CoreKind::Hrdwil => asm("hrdwil", self.hrdwil_src.as_deref().ok_or_else(|| missing("hrdwil"))?),
            CoreKind::Zolc(v) => {
                let src = self.zolc_src.as_deref().ok_or_else(|| missing("zolc"))?;
                build_zolc_image(src, v).map_err(|source| BenchError::Analysis { bench: self.name.clone(), source })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RowStatus {
    Ok,
    /// The kernel could not be built for the core (e.g. a loop structure the
    /// variant does not support).
    Unsupported(String),
    /// Simulation failed or the outputs differ from the oracle.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub benchmark: String,
    pub core: String,
    pub status: RowStatus,
    pub cycles: Option<u64>,
    pub default_cycles: Option<u64>,
    pub reduction_pct: Option<f64>,
    pub report: Option<CycleReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub core: String,
    /// Rows with status `Ok`.
    pub rows: usize,
    pub average_pct: f64,
    pub max_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub branch_penalty: u32,
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Percentage of Default-core cycles saved.
pub fn reduction_pct(default_cycles: u64, cycles: u64) -> f64 {
    (1.0 - cycles as f64 / default_cycles as f64) * 100.0
}

fn run_one(spec: &BenchSpec, reference: &Result<(ProgramImage, u64), String>, core: CoreVariant, max_cycles: u64) -> BenchRow {
    let mut row = BenchRow {
        benchmark: spec.name.clone(),
        core: core.kind.name().to_string(),
        status: RowStatus::Ok,
        cycles: None,
        default_cycles: None,
        reduction_pct: None,
        report: None,
    };
    let (reference, default_cycles) = match reference {
        Ok((img, c)) => (img, *c),
        Err(e) => {
            row.status = RowStatus::Failed(format!("default form: {e}"));
            return row;
        }
    };
    row.default_cycles = Some(default_cycles);
    let image = match spec.build(core.kind) {
        Ok(img) => img,
        Err(e @ BenchError::Analysis { .. }) => {
            row.status = RowStatus::Unsupported(e.to_string());
            return row;
        }
        Err(e) => {
            row.status = RowStatus::Failed(e.to_string());
            return row;
        }
    };
    let verdict = verify_equivalence(reference, &image, &core, max_cycles);
    if !verdict.pass {
        row.status = RowStatus::Failed(verdict.cause.unwrap_or_else(|| "outputs differ".into()));
        return row;
    }
    match simulate_with(&image, &core, SimOptions { max_cycles, trace: false, ..SimOptions::default() }) {
        Ok(sim) => {
            row.cycles = Some(sim.report.cycles);
            row.reduction_pct = Some(reduction_pct(default_cycles, sim.report.cycles));
            row.report = Some(sim.report);
        }
        Err(e) => row.status = RowStatus::Failed(e.to_string()),
    }
    row
}

/// Runs every benchmark on every core in parallel. Reductions are taken
/// against the Default core with the same branch penalty, which is always
/// simulated whether or not it is listed in `cores`.
pub fn run_suite(specs: &[BenchSpec], cores: &[CoreKind], branch_penalty: u32, max_cycles: u64) -> SuiteReport {
    let baseline = CoreVariant::new(CoreKind::Default).with_penalty(branch_penalty);
    let references: Vec<Result<(ProgramImage, u64), String>> = specs
        .par_iter()
        .map(|s| {
            let img = s.build(CoreKind::Default).map_err(|e| e.to_string())?;
            let opts = SimOptions { max_cycles, trace: false, ..SimOptions::default() };
            let sim = simulate_with(&img, &baseline, opts).map_err(|e| e.to_string())?;
            Ok((img, sim.report.cycles))
        })
        .collect();
    let jobs: Vec<(usize, CoreKind)> =
        (0..specs.len()).flat_map(|i| cores.iter().map(move |&c| (i, c))).collect();
    let rows: Vec<BenchRow> = jobs
        .par_iter()
        .map(|&(i, kind)| run_one(&specs[i], &references[i], CoreVariant::new(kind).with_penalty(branch_penalty), max_cycles))
        .collect();
    let aggregates = cores
        .iter()
        .map(|c| {
            let pcts: Vec<f64> = rows
                .iter()
                .filter(|r| r.core == c.name() && r.status == RowStatus::Ok)
                .filter_map(|r| r.reduction_pct)
                .collect();
            Aggregate {
                core: c.name().to_string(),
                rows: pcts.len(),
                average_pct: if pcts.is_empty() { 0.0 } else { pcts.iter().sum::<f64>() / pcts.len() as f64 },
                max_pct: if pcts.is_empty() { 0.0 } else { pcts.iter().copied().fold(f64::NEG_INFINITY, f64::max) },
            }
        })
        .collect();
    SuiteReport { branch_penalty, rows, aggregates }
}

impl SuiteReport {
    pub fn row(&self, benchmark: &str, core: CoreKind) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.benchmark == benchmark && r.core == core.name())
    }

    pub fn aggregate(&self, core: CoreKind) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.core == core.name())
    }

    /// CSV with columns `benchmark, core, cycles, default_cycles,
    /// reduction_pct, status`, then one `average` and one `max` row per
    /// core. Percentages use the shortest exact decimal form.
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["benchmark", "core", "cycles", "default_cycles", "reduction_pct", "status"])?;
        let opt_u = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
        let opt_f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            let status = match &r.status {
                RowStatus::Ok => "ok".to_string(),
                RowStatus::Unsupported(m) => format!("unsupported: {m}"),
                RowStatus::Failed(m) => format!("failed: {m}"),
            };
            w.write_record([
                r.benchmark.clone(),
                r.core.clone(),
                opt_u(r.cycles),
                opt_u(r.default_cycles),
                opt_f(r.reduction_pct),
                status,
            ])?;
        }
        for a in &self.aggregates {
            w.write_record(["average".to_string(), a.core.clone(), String::new(), String::new(), a.average_pct.to_string(), format!("rows={}", a.rows)])?;
        }
        for a in &self.aggregates {
            w.write_record(["max".to_string(), a.core.clone(), String::new(), String::new(), a.max_pct.to_string(), format!("rows={}", a.rows)])?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:<10} {:>9} {:>9}  {}\n", "benchmark", "core", "cycles", "reduct%", "status");
        for r in &self.rows {
            let status = match &r.status {
                RowStatus::Ok => "ok",
                RowStatus::Unsupported(_) => "unsupported",
                RowStatus::Failed(_) => "FAILED",
            };
            s.push_str(&format!(
                "{:<10} {:<10} {:>9} {:>9}  {}\n",
                r.benchmark,
                r.core,
                r.cycles.map_or("-".into(), |c| c.to_string()),
                r.reduction_pct.map_or("-".into(), |p| format!("{p:.2}")),
                status
            ));
        }
        for a in &self.aggregates {
            s.push_str(&format!(
                "{:<10} {:<10} avg {:>6.2}%  max {:>6.2}%  over {} rows\n",
                "summary", a.core, a.average_pct, a.max_pct, a.rows
            ));
        }
        s
    }
}
