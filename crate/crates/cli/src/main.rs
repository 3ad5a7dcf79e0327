use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mco::distrib::{brute_force_arrangement, heuristic_arrangement, tcf, ArrangementGraph, DistribMode};
use mco::gen::{generate, GenConfig};
use mco::macrocomp::MacroMode;
use mco::pipeline::{run_pipeline, Options};
use mco::vm::{execute, ExitStatus, DEFAULT_STEP_LIMIT};
use mco::{read_task, write_task};

#[derive(Parser)]
#[command(name = "mco", version, about = "Post-link optimizer for SDM-1 task files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distrib {
    Off,
    S0,
    S1,
    S0s1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Macro {
    Off,
    Value,
    Length,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize a task file.
    Opt {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        no_elim: bool,
        #[arg(long, value_enum, default_value = "s0s1")]
        distrib: Distrib,
        #[arg(long = "macro", value_enum, default_value = "off")]
        macro_mode: Macro,
        #[arg(long)]
        no_reduce: bool,
        /// Check behaviour of input and output on generated input vectors.
        #[arg(long)]
        verify: bool,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
        /// Print the IR as it stands before relocation.
        #[arg(long)]
        dump_ir: bool,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
    },
    /// Execute a task file on the emulator.
    Run {
        file: PathBuf,
        /// Comma-separated input words.
        #[arg(long = "in", value_delimiter = ',')]
        input: Vec<u32>,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
    },
    /// Generate random task files.
    Gen {
        /// Output file, or directory when --count is above 1.
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        subprograms: Option<usize>,
        #[arg(long)]
        dead_fraction: Option<f64>,
        #[arg(long)]
        call_density: Option<f64>,
        #[arg(long)]
        data_density: Option<f64>,
    },
    /// Compare brute-force and heuristic arrangements of a small graph.
    Arrange {
        graph: PathBuf,
        #[arg(long, short)]
        threshold: u64,
    },
}

fn opt_options(
    no_elim: bool,
    distrib: Distrib,
    macro_mode: Macro,
    no_reduce: bool,
    verify: bool,
    dump_ir: bool,
    step_limit: u64,
) -> Options {
    Options {
        elim: !no_elim,
        distrib: match distrib {
            Distrib::Off => DistribMode::Off,
            Distrib::S0 => DistribMode::S0,
            Distrib::S1 => DistribMode::S1,
            Distrib::S0s1 => DistribMode::S0s1,
        },
        macro_mode: match macro_mode {
            Macro::Off => MacroMode::Off,
            Macro::Value => MacroMode::Value,
            Macro::Length => MacroMode::Length,
        },
        reduce: !no_reduce,
        verify,
        step_limit,
        dump_ir,
        ..Options::default()
    }
}

fn write_one(path: &Path, cfg: &GenConfig, seed: u64) -> Result<()> {
    let bytes = write_task(&generate(cfg, seed))?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Opt { input, output, no_elim, distrib, macro_mode, no_reduce, verify, report, dump_ir, step_limit } => {
            let opts = opt_options(no_elim, distrib, macro_mode, no_reduce, verify, dump_ir, step_limit);
            let out = run_pipeline(&input, &output, &opts)?;
            if let Some(ir) = &out.ir_dump {
                print!("{ir}");
            }
            match report {
                ReportFormat::Text => print!("{}", out.report.to_text()),
                ReportFormat::Json => println!("{}", out.report.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { file, input, step_limit } => {
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let tf = read_task(&bytes).with_context(|| format!("parse: {}", file.display()))?;
            let ex = execute(&tf, &input, step_limit)?;
            for v in &ex.outputs {
                println!("{v}");
            }
            println!("status: {} after {} steps", ex.status, ex.steps);
            Ok(if ex.status == ExitStatus::Halted { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Gen { output, seed, count, subprograms, dead_fraction, call_density, data_density } => {
            let mut cfg = GenConfig::default();
            if let Some(v) = subprograms {
                cfg.subprograms = v;
            }
            if let Some(v) = dead_fraction {
                cfg.dead_fraction = v;
            }
            if let Some(v) = call_density {
                cfg.call_density = v;
            }
            if let Some(v) = data_density {
                cfg.data_density = v;
            }
            if count == 0 {
                bail!("--count must be at least 1");
            }
            if count == 1 {
                return write_one(&output, &cfg, seed).map(|_| ExitCode::SUCCESS);
            }
            std::fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            for k in 0..count {
                write_one(&output.join(format!("prog_{k:04}.mco")), &cfg, seed + k)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Arrange { graph, threshold } => {
            let text = std::fs::read_to_string(&graph).with_context(|| format!("reading {}", graph.display()))?;
            let g = ArrangementGraph::parse(&text)?;
            let (best, best_tcf) = brute_force_arrangement(&g, threshold)?;
            let h = heuristic_arrangement(&g, threshold);
            println!("brute-force tcf {best_tcf} order {:?}", best.order());
            println!("heuristic   tcf {} order {:?}", tcf(&g, &h, threshold), h.order());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mco: {e:#}");
            ExitCode::FAILURE
        }
    }
}
