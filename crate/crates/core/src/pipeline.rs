//! Phase driver: runs the optimizer end to end and collects measurements.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distrib::{self, DistribMode};
use crate::elim::{self, ElimStats};
use crate::ir::{self, Program};
use crate::isa::ArchSpec;
use crate::macrocomp::{self, MacroMode, MacroStats};
use crate::reduce::{self, LengthenStats};
use crate::taskfile::{read_task, write_task, TaskFile};
use crate::vm::{self, DEFAULT_STEP_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Options {
    pub elim: bool,
    pub distrib: DistribMode,
    #[serde(rename = "macro")]
    pub macro_mode: MacroMode,
    pub reduce: bool,
    /// Run input and output on `verify_inputs` and fail on any difference.
    pub verify: bool,
    pub verify_inputs: Vec<Vec<u32>>,
    pub step_limit: u64,
    pub dump_ir: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            elim: true,
            distrib: DistribMode::S0s1,
            macro_mode: MacroMode::Off,
            reduce: true,
            verify: false,
            verify_inputs: crate::gen::inputs(0, 5),
            step_limit: DEFAULT_STEP_LIMIT,
            dump_ir: false,
        }
    }
}

impl Options {
    /// Every optional pass disabled.
    pub fn all_off() -> Options {
        Options { elim: false, distrib: DistribMode::Off, reduce: false, ..Options::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Parse,
    Prepass,
    Blocking,
    Linking,
    Elim,
    Macro,
    Distrib,
    Minimize,
    Lengthen,
    Relocate,
    Verify,
    Io,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Parse => "parse",
            Phase::Prepass => "prepass",
            Phase::Blocking => "blocking",
            Phase::Linking => "linking",
            Phase::Elim => "elim",
            Phase::Macro => "macro",
            Phase::Distrib => "distrib",
            Phase::Minimize => "minimize",
            Phase::Lengthen => "lengthen",
            Phase::Relocate => "relocate",
            Phase::Verify => "verify",
            Phase::Io => "io",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("{phase}: {message}")]
pub struct PipelineError {
    pub phase: Phase,
    pub message: String,
}

fn fail(phase: Phase) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError { phase, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStat {
    pub phase: Phase,
    pub wall_us: u64,
    /// Text bytes removed by the phase; negative when it grew the text.
    pub bytes_delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRow {
    pub name: String,
    pub initial: u32,
    pub fin: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub input_text: u32,
    pub output_text: u32,
    pub input_data: u32,
    pub output_data: u32,
    pub phases: Vec<PhaseStat>,
    pub elim: Option<ElimStats>,
    #[serde(rename = "macro")]
    pub macro_stats: Option<MacroStats>,
    pub distrib_changed: bool,
    pub minimize_saved: u32,
    pub lengthen: LengthenStats,
    pub opcodes: Vec<MixRow>,
    pub modes: Vec<MixRow>,
    /// Input vectors checked by `--verify`.
    pub verified: Option<usize>,
}

impl PhaseReport {
    pub fn delta_sum(&self) -> i64 {
        self.phases.iter().map(|p| p.bytes_delta).sum()
    }

    pub fn reduction_percent(&self) -> f64 {
        if self.input_text == 0 {
            return 0.0;
        }
        100.0 * (self.input_text as f64 - self.output_text as f64) / self.input_text as f64
    }

    /// Same report with timings zeroed, for comparisons.
    pub fn without_timings(&self) -> PhaseReport {
        let mut r = self.clone();
        r.phases.iter_mut().for_each(|p| p.wall_us = 0);
        r
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "text: {} -> {} bytes ({:.1}% smaller)",
            self.input_text,
            self.output_text,
            self.reduction_percent()
        );
        let _ = writeln!(s, "data: {} -> {} bytes", self.input_data, self.output_data);
        let _ = writeln!(s, "{:<10} {:>10} {:>8}", "phase", "us", "delta");
        for p in &self.phases {
            let _ = writeln!(s, "{:<10} {:>10} {:>8}", p.phase.name(), p.wall_us, p.bytes_delta);
        }
        if let Some(e) = &self.elim {
            let _ = writeln!(s, "elim: {} bytes, {} instructions, {} passes", e.bytes_removed, e.nodes_removed, e.passes);
        }
        if let Some(m) = &self.macro_stats {
            let _ = writeln!(s, "macro: {} bodies, {} calls, {} bytes saved", m.bodies, m.calls, m.bytes_saved);
        }
        let _ = writeln!(
            s,
            "lengthen: {} passes, {} expansions, {} bytes added",
            self.lengthen.passes, self.lengthen.expansions, self.lengthen.bytes_added
        );
        if let Some(n) = self.verified {
            let _ = writeln!(s, "verify: {n} input vectors equivalent");
        }
        for (title, rows) in [("opcode", &self.opcodes), ("mode", &self.modes)] {
            let _ = writeln!(s, "{:<10} {:>8} {:>8}", title, "initial", "final");
            for r in rows.iter().filter(|r| r.initial > 0 || r.fin > 0) {
                let _ = writeln!(s, "{:<10} {:>8} {:>8}", r.name, r.initial, r.fin);
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Instruction and operand counts per opcode and mode, in table order.
fn mix(arch: &ArchSpec, prog: &Program) -> (Vec<u32>, Vec<u32>) {
    let mut opc = vec![0; arch.opcodes.len()];
    let mut modes = vec![0; arch.modes.len()];
    for n in prog.flat() {
        let Some(t) = prog.text(n) else { continue };
        opc[t.opc.index()] += 1;
        for op in &t.ops {
            modes[op.mode.index()] += 1;
        }
    }
    (opc, modes)
}

fn rows(names: impl Iterator<Item = String>, initial: &[u32], fin: &[u32]) -> Vec<MixRow> {
    names
        .zip(initial.iter().zip(fin))
        .map(|(name, (&initial, &fin))| MixRow { name, initial, fin })
        .collect()
}

pub struct Optimized {
    pub task: TaskFile,
    pub report: PhaseReport,
    /// IR listing just before relocation, when requested.
    pub ir_dump: Option<String>,
}

struct Timer {
    phases: Vec<PhaseStat>,
}

impl Timer {
    fn run<T>(&mut self, phase: Phase, size: impl Fn(&T) -> u32, before: u32, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        let wall_us = t0.elapsed().as_micros() as u64;
        let after = size(&out);
        self.phases.push(PhaseStat { phase, wall_us, bytes_delta: before as i64 - after as i64 });
        out
    }
}

/// Runs every enabled phase on `input`.
pub fn optimize(input: &TaskFile, opts: &Options) -> Result<Optimized, PipelineError> {
    let arch = ArchSpec::sdm1();
    let mut timer = Timer { phases: Vec::new() };
    let in_text = input.text.len() as u32;

    let mut nodes = timer
        .run(Phase::Parse, |_| in_text, in_text, || {
            ir::parse_instructions(arch, &input.text, input.load_addr, &input.data)
        })
        .map_err(|e| fail(Phase::Parse)(&e))?;
    timer.run(Phase::Prepass, |_| in_text, in_text, || {
        ir::jsr_prepass(arch, &mut nodes, &input.relocs, input.load_addr, input.entry)
    });
    let blocks = timer.run(Phase::Blocking, |_| in_text, in_text, || ir::text_blocking(&nodes));
    let mut prog = Program::from_parts(input.load_addr, nodes, blocks);
    timer
        .run(Phase::Linking, |_| in_text, in_text, || {
            prog.resolve_entry(input)?;
            ir::link_operands(arch, &mut prog, &input.relocs)
        })
        .map_err(|e| fail(Phase::Linking)(&e))?;
    let (opc0, mode0) = mix(arch, &prog);

    let mut elim_stats = None;
    if opts.elim {
        let before = prog.text_size();
        let t0 = Instant::now();
        let s = elim::eliminate(&mut prog).map_err(|e| fail(Phase::Elim)(&e))?;
        timer.phases.push(PhaseStat {
            phase: Phase::Elim,
            wall_us: t0.elapsed().as_micros() as u64,
            bytes_delta: before as i64 - prog.text_size() as i64,
        });
        elim_stats = Some(s);
    }

    let mut macro_stats = None;
    if let Some(priority) = opts.macro_mode.priority() {
        let before = prog.text_size();
        let t0 = Instant::now();
        let s = macrocomp::compress(arch, &mut prog, priority);
        let wall_us = t0.elapsed().as_micros() as u64;
        let delta = before as i64 - prog.text_size() as i64;
        if delta != s.bytes_saved {
            return Err(PipelineError {
                phase: Phase::Macro,
                message: format!("reported {} bytes saved, text shrank by {delta}", s.bytes_saved),
            });
        }
        timer.phases.push(PhaseStat { phase: Phase::Macro, wall_us, bytes_delta: delta });
        macro_stats = Some(s);
    }

    let mut distrib_changed = false;
    if let Some(cfg) = opts.distrib.config(arch) {
        let before = prog.text_size();
        distrib_changed = timer.run(Phase::Distrib, |_| before, before, || distrib::distribute(&mut prog, &cfg));
    }

    let mut minimize_saved = 0;
    if opts.reduce {
        let before = prog.text_size();
        minimize_saved = timer.run(Phase::Minimize, |s| before - s, before, || reduce::minimize(arch, &mut prog));
    }

    let before = prog.text_size();
    let lengthen = timer
        .run(
            Phase::Lengthen,
            |r: &Result<LengthenStats, _>| before + r.as_ref().map_or(0, |s| s.bytes_added),
            before,
            || reduce::lengthen(arch, &mut prog),
        )
        .map_err(|e| fail(Phase::Lengthen)(&e))?;
    let (opc1, mode1) = mix(arch, &prog);
    let ir_dump = opts.dump_ir.then(|| prog.dump(arch));

    let before = prog.text_size();
    let task = timer
        .run(
            Phase::Relocate,
            |r: &Result<TaskFile, _>| r.as_ref().map_or(before, |t| t.text.len() as u32),
            before,
            || reduce::relocate(arch, &mut prog, input),
        )
        .map_err(|e| fail(Phase::Relocate)(&e))?;

    let mut verified = None;
    if opts.verify {
        let t0 = Instant::now();
        let m = vm::compare(input, &task, &opts.verify_inputs, opts.step_limit).map_err(|e| fail(Phase::Verify)(&e))?;
        if let Some(m) = m {
            return Err(PipelineError { phase: Phase::Verify, message: format!("behaviour differs on {m}") });
        }
        timer.phases.push(PhaseStat { phase: Phase::Verify, wall_us: t0.elapsed().as_micros() as u64, bytes_delta: 0 });
        verified = Some(opts.verify_inputs.len());
    }

    let report = PhaseReport {
        input_text: in_text,
        output_text: task.text.len() as u32,
        input_data: input.data.len() as u32,
        output_data: task.data.len() as u32,
        phases: timer.phases,
        elim: elim_stats,
        macro_stats,
        distrib_changed,
        minimize_saved,
        lengthen,
        opcodes: rows(arch.opcodes.iter().map(|o| o.name.to_string()), &opc0, &opc1),
        modes: rows(arch.modes.iter().map(|m| m.name.to_string()), &mode0, &mode1),
        verified,
    };
    Ok(Optimized { task, report, ir_dump })
}

/// Reads `input`, optimizes it and writes `output`.
pub fn run_pipeline(input: &Path, output: &Path, opts: &Options) -> Result<Optimized, PipelineError> {
    let io = fail(Phase::Io);
    let bytes = std::fs::read(input).map_err(|e| io(&format!("{}: {e}", input.display())))?;
    let tf = read_task(&bytes).map_err(|e| fail(Phase::Parse)(&e))?;
    let out = optimize(&tf, opts)?;
    let bytes = write_task(&out.task).map_err(|e| fail(Phase::Relocate)(&e))?;
    std::fs::write(output, bytes).map_err(|e| io(&format!("{}: {e}", output.display())))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate, inputs, GenConfig};

    #[test]
    fn all_off_is_identity_with_zero_deltas() {
        for seed in 0..5 {
            let tf = generate(&GenConfig::small(), seed);
            let out = optimize(&tf, &Options::all_off()).unwrap();
            assert_eq!(out.task, tf);
            assert!(out.report.phases.iter().all(|p| p.bytes_delta == 0));
        }
    }

    #[test]
    fn defaults_shrink_and_preserve_behaviour() {
        let tf = generate(&GenConfig::default(), 3);
        let opts = Options { verify: true, verify_inputs: inputs(3, 5), ..Options::default() };
        let out = optimize(&tf, &opts).unwrap();
        let r = &out.report;
        assert!(r.output_text < r.input_text);
        assert_eq!(r.delta_sum(), r.input_text as i64 - r.output_text as i64);
        assert_eq!(r.input_data, r.output_data);
        assert_eq!(r.verified, Some(5));
    }

    #[test]
    fn mode_mix_counts_every_operand() {
        let tf = generate(&GenConfig::small(), 1);
        let out = optimize(&tf, &Options::default()).unwrap();
        let operands: usize = {
            let p = Program::build(ArchSpec::sdm1(), &out.task).unwrap();
            p.flat().iter().filter_map(|&n| p.text(n)).map(|t| t.ops.len()).sum()
        };
        let fin: u32 = out.report.modes.iter().map(|r| r.fin).sum();
        assert_eq!(fin as usize, operands);
    }

    #[test]
    fn deterministic_and_json_round_trips() {
        let tf = generate(&GenConfig::small(), 9);
        let opts = Options { macro_mode: MacroMode::Value, ..Options::default() };
        let a = optimize(&tf, &opts).unwrap();
        let b = optimize(&tf, &opts).unwrap();
        assert_eq!(a.task, b.task);
        assert_eq!(a.report.without_timings(), b.report.without_timings());
        let back: PhaseReport = serde_json::from_str(&a.report.to_json()).unwrap();
        assert_eq!(back, a.report);
        assert!(a.report.to_text().contains("macro: "));
    }

    #[test]
    fn errors_name_their_phase() {
        let mut tf = generate(&GenConfig::small(), 2);
        tf.text[0] = 0xff;
        let e = optimize(&tf, &Options::default()).err().unwrap();
        assert_eq!(e.phase, Phase::Parse);
        assert!(e.to_string().starts_with("parse: "));
    }
}
