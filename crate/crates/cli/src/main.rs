//! `zolcsim`: assemble, run, benchmark and analyze programs for the
//! ZOLC-equipped core.
//!
//! Exit status is 0 on success, 1 for user or configuration errors and 2
//! for runtime simulation errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use zolc_core::analysis::{analyze, build_zolc_image, emit_init_sequence, generate_zolc_config, AnalysisReport};
use zolc_core::assembler::assemble;
use zolc_core::bench::{bundled_suite_dir, load_suite, run_suite, DEFAULT_MAX_CYCLES};
use zolc_core::image::ProgramImage;
use zolc_core::sim::{simulate_with, CoreKind, CoreVariant, SimError, SimOptions};
use zolc_core::zolc::{storage_bytes, ZolcVariant};

#[derive(Parser)]
#[command(name = "zolcsim", version, about = "Cycle-accurate RISC simulator with a zero-overhead loop controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a source file into `<out>.img` and `<out>.meta`.
    Asm {
        source: PathBuf,
        /// Output path stem (defaults to the source path without extension).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Embed a ZOLC init sequence for this variant.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run a `.s` source or an `.img` image on one core.
    Run {
        image: PathBuf,
        #[arg(long, default_value = "default")]
        core: String,
        #[arg(long, default_value_t = CoreVariant::DEFAULT_BRANCH_PENALTY)]
        branch_penalty: u32,
        #[arg(long, default_value_t = CoreVariant::DEFAULT_MEM_LATENCY)]
        mem_latency: u32,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
        max_cycles: u64,
        /// Write one `cycle, pc, disasm, event` line per instruction.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the cycle report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a benchmark suite on several cores.
    Bench {
        /// Suite directory (defaults to the bundled suite).
        suite: Option<PathBuf>,
        /// Comma-separated core names.
        #[arg(long, default_value = "default,hrdwil,uzolc,zolc-lite,zolc-full", value_delimiter = ',')]
        cores: Vec<String>,
        #[arg(long, default_value_t = CoreVariant::DEFAULT_BRANCH_PENALTY)]
        branch_penalty: u32,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
        max_cycles: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Dump the task graph, ZOLC configuration or init sequence of a source.
    Analyze {
        source: PathBuf,
        #[arg(long, default_value = "zolc-full")]
        variant: String,
        #[arg(long, value_enum, default_value_t = Dump::Tasks)]
        dump: Dump,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dump {
    Tasks,
    Config,
    Init,
}

enum Failure {
    User(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn user(e: impl std::fmt::Display) -> Failure {
    Failure::User(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn parse_variant(name: &str) -> Result<ZolcVariant, Failure> {
    name.parse().map_err(Failure::User)
}

fn cmd_asm(source: &Path, out: Option<PathBuf>, variant: Option<String>) -> CliResult {
    let text = read(source)?;
    let image = match variant {
        Some(v) => build_zolc_image(&text, parse_variant(&v)?).map_err(|e| user(format!("{}: {e}", source.display())))?,
        None => assemble(&text).map_err(|e| user(format!("{}: {e}", source.display())))?,
    };
    let stem = out.unwrap_or_else(|| source.with_extension(""));
    image.save(&stem).map_err(user)?;
    println!("{} words -> {}.img", image.words.len(), stem.display());
    Ok(())
}

fn load_for_core(path: &Path, core: CoreKind) -> Result<ProgramImage, Failure> {
    if path.extension().is_some_and(|e| e == "img") {
        return ProgramImage::load(path).map_err(|e| user(format!("{}: {e}", path.display())));
    }
    let text = read(path)?;
    let built = match core {
        CoreKind::Zolc(v) => build_zolc_image(&text, v).map_err(|e| e.to_string()),
        _ => assemble(&text).map_err(|e| e.to_string()),
    };
    built.map_err(|e| user(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    path: &Path,
    core: &str,
    branch_penalty: u32,
    mem_latency: u32,
    max_cycles: u64,
    trace: Option<PathBuf>,
    report: Option<PathBuf>,
) -> CliResult {
    let kind: CoreKind = core.parse().map_err(Failure::User)?;
    let image = load_for_core(path, kind)?;
    let variant = CoreVariant { kind, branch_penalty, mem_latency };
    let opts = SimOptions { max_cycles, trace: trace.is_some(), ..SimOptions::default() };
    let sim = simulate_with(&image, &variant, opts).map_err(|e| match e {
        SimError::VariantMismatch { .. } | SimError::UnsupportedInstruction { .. } => user(&e),
        _ => Failure::Runtime(e.to_string()),
    })?;
    let r = &sim.report;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    println!("{name} cycles={} dyn={} redirects={}", r.cycles, r.dyn_instr, r.redirects);
    if let Some(p) = trace {
        let lines: String = sim.trace.iter().map(|e| format!("{e}\n")).collect();
        write(&p, &lines)?;
    }
    if let Some(p) = report {
        write(&p, &serde_json::to_string_pretty(r).expect("report serializes"))?;
    }
    Ok(())
}

fn cmd_bench(
    suite: Option<PathBuf>,
    cores: &[String],
    branch_penalty: u32,
    max_cycles: u64,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> CliResult {
    let kinds = cores.iter().map(|c| c.trim().parse::<CoreKind>()).collect::<Result<Vec<_>, _>>().map_err(Failure::User)?;
    let dir = suite.unwrap_or_else(bundled_suite_dir);
    let specs = load_suite(&dir).map_err(user)?;
    let report = run_suite(&specs, &kinds, branch_penalty, max_cycles);
    print!("{}", report.to_table());
    if let Some(p) = csv {
        write(&p, &report.to_csv().map_err(user)?)?;
    }
    if let Some(p) = json {
        write(&p, &report.to_json())?;
    }
    Ok(())
}

fn cmd_analyze(source: &Path, variant: &str, dump: Dump, json: bool) -> CliResult {
    let variant = parse_variant(variant)?;
    let text = read(source)?;
    let image = assemble(&text).map_err(|e| user(format!("{}: {e}", source.display())))?;
    let analysis = analyze(&image).map_err(user)?;
    let config = generate_zolc_config(&analysis, &image, variant).map_err(user)?;
    match dump {
        Dump::Tasks => {
            let report = AnalysisReport::new(&analysis, None);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text());
            }
        }
        Dump::Config => {
            let bytes = storage_bytes(variant);
            let fields = config.stored_fields();
            let report = AnalysisReport::new(&analysis, Some(config));
            if json {
                let mut v = serde_json::to_value(&report).expect("report serializes");
                v["storage_bytes"] = bytes.into();
                v["stored_fields"] = fields.into();
                println!("{}", serde_json::to_string_pretty(&v).expect("value serializes"));
            } else {
                print!("{}", report.to_text());
                println!("storage_bytes {bytes}");
                println!("stored_fields {fields}");
            }
        }
        Dump::Init => {
            let seq = emit_init_sequence(&config);
            if json {
                let lines: Vec<String> = seq.iter().map(|i| i.to_string()).collect();
                println!("{}", serde_json::to_string_pretty(&lines).expect("strings serialize"));
            } else {
                for i in &seq {
                    println!("{i}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Asm { source, out, variant } => cmd_asm(&source, out, variant),
        Command::Run { image, core, branch_penalty, mem_latency, max_cycles, trace, report } => {
            cmd_run(&image, &core, branch_penalty, mem_latency, max_cycles, trace, report)
        }
        Command::Bench { suite, cores, branch_penalty, max_cycles, csv, json } => {
            cmd_bench(suite, &cores, branch_penalty, max_cycles, csv, json)
        }
        Command::Analyze { source, variant, dump, json } => cmd_analyze(&source, &variant, dump, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("simulation error: {msg}");
            ExitCode::from(2)
        }
    }
}
