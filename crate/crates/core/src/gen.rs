//! Random SDM-1 program generator.
//!
//! Programs are built from a `main` routine and a set of subprograms forming a
//! call DAG, plus dead subprograms that nothing calls. Bodies mix arithmetic,
//! data loads and stores, counted loops, forward conditional skips, address
//! loads and nop padding. Every program terminates and only ever outputs
//! values that do not depend on code or data addresses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asm::{AsmOperand, Assembler, Ref};
use crate::isa::{sdm1::*, OpcId};
use crate::taskfile::TaskFile;

/// Registers that may be output.
const VALUE_REGS: u8 = 8;
/// First loop counter register; nested loops use the following ones.
const LOOP_REG: u8 = 9;
const MAX_LOOP_DEPTH: u8 = 3;
/// Registers that receive addresses and are never output.
const ADDR_REGS: [u8; 2] = [13, 14];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub load_addr: u32,
    /// Live subprograms besides `main`.
    pub subprograms: usize,
    /// Share of subprograms that are never called.
    pub dead_fraction: f64,
    /// Chance that a statement is a call.
    pub call_density: f64,
    /// Chance that a statement loads or stores a data word.
    pub data_density: f64,
    /// Chance that an address operand is written in absolute form.
    pub abs_fraction: f64,
    /// Statements per subprogram body (upper bound).
    pub max_stmts: usize,
    pub pad_probability: f64,
    pub max_pad: usize,
    /// Chance of a long nop run that pushes targets out of d8 range.
    pub long_pad_probability: f64,
    /// Distinct short instruction sequences reused across bodies.
    pub idioms: usize,
    pub idiom_probability: f64,
    /// Live subprograms also referenced from a data-segment pointer table.
    pub pointer_fraction: f64,
    /// Upper bound on executed instructions per subprogram invocation.
    pub step_budget: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            load_addr: 0x1000,
            subprograms: 10,
            dead_fraction: 0.2,
            call_density: 0.25,
            data_density: 0.2,
            abs_fraction: 0.8,
            max_stmts: 12,
            pad_probability: 0.08,
            max_pad: 24,
            long_pad_probability: 0.02,
            idioms: 4,
            idiom_probability: 0.12,
            pointer_fraction: 0.2,
            step_budget: 5_000,
        }
    }
}

impl GenConfig {
    /// A configuration for quick tests: few, short subprograms.
    pub fn small() -> GenConfig {
        GenConfig { subprograms: 3, max_stmts: 6, long_pad_probability: 0.0, ..GenConfig::default() }
    }

    fn dead_count(&self) -> usize {
        if self.dead_fraction <= 0.0 {
            return 0;
        }
        let live = self.subprograms as f64 + 1.0;
        (live * self.dead_fraction / (1.0 - self.dead_fraction)).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone)]
enum Line {
    Label(String),
    Ins(OpcId, Vec<AsmOperand>),
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    vars: usize,
    idioms: Vec<Vec<Line>>,
    /// Estimated steps per call of each live subprogram.
    costs: Vec<u64>,
    next_label: usize,
}

fn ins(opc: OpcId, ops: Vec<AsmOperand>) -> Line {
    Line::Ins(opc, ops)
}

impl<'a> Gen<'a> {
    fn fresh(&mut self, stem: &str) -> String {
        self.next_label += 1;
        format!("{stem}_{}", self.next_label)
    }

    fn value_reg(&mut self) -> u8 {
        self.rng.gen_range(0..VALUE_REGS)
    }

    fn addr(&mut self, r: Ref) -> AsmOperand {
        if self.rng.gen_bool(self.cfg.abs_fraction) {
            AsmOperand::Addr(r, AM_ABS)
        } else {
            AsmOperand::AddrAuto(r)
        }
    }

    fn arith(&mut self) -> Line {
        let rd = self.value_reg();
        let rs = self.value_reg();
        match self.rng.gen_range(0..5) {
            0 => ins(O_LDI, vec![AsmOperand::Reg(rd), AsmOperand::Imm(self.rng.gen_range(0..1000))]),
            1 => ins(O_ADD, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]),
            2 => ins(O_SUB, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]),
            3 => ins(O_MOV, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]),
            _ => ins(O_ADDI, vec![AsmOperand::Reg(rd), AsmOperand::Imm(self.rng.gen_range(1..50))]),
        }
    }

    fn make_idioms(&mut self) {
        for _ in 0..self.cfg.idioms {
            let len = self.rng.gen_range(2..=5);
            let seq = (0..len).map(|_| self.arith()).collect();
            self.idioms.push(seq);
        }
    }

    /// Emits one statement; returns its estimated step cost.
    fn stmt(&mut self, out: &mut Vec<Line>, me: Option<usize>, depth: u8, budget: u64) -> u64 {
        let live = self.costs.len();
        let callee_lo = me.map_or(0, |i| i + 1);
        let roll: f64 = self.rng.gen();
        let mut acc = self.cfg.call_density;
        if roll < acc && callee_lo < live {
            let j = self.rng.gen_range(callee_lo..live);
            let c = self.costs[j] + 1;
            if c <= budget {
                let op = self.addr(Ref::label(&format!("f{j}")));
                out.push(ins(O_JSR, vec![op]));
                return c;
            }
        }
        acc += self.cfg.data_density;
        if roll < acc && self.vars > 0 {
            let v = format!("v{}", self.rng.gen_range(0..self.vars));
            let op = self.addr(Ref::label(&v));
            let r = self.value_reg();
            out.push(ins(if self.rng.gen_bool(0.5) { O_LD } else { O_ST }, vec![op, AsmOperand::Reg(r)]));
            return 1;
        }
        acc += self.cfg.pad_probability;
        if roll < acc {
            let n = self.rng.gen_range(1..=self.cfg.max_pad);
            out.extend((0..n).map(|_| ins(O_NOP, vec![])));
            return n as u64;
        }
        acc += self.cfg.long_pad_probability;
        if roll < acc {
            let n = self.rng.gen_range(150..400);
            out.extend((0..n).map(|_| ins(O_NOP, vec![])));
            return n as u64;
        }
        acc += self.cfg.idiom_probability;
        if roll < acc && !self.idioms.is_empty() {
            let seq = self.idioms.choose(&mut self.rng).expect("non-empty").clone();
            let n = seq.len() as u64;
            out.extend(seq);
            return n;
        }
        match self.rng.gen_range(0..10) {
            0 if depth < MAX_LOOP_DEPTH => self.counted_loop(out, me, depth, budget),
            1 => self.skip(out, me, depth, budget),
            2 => {
                // address into a register that is never output
                let r = *ADDR_REGS.choose(&mut self.rng).expect("non-empty");
                let target = if self.vars > 0 && self.rng.gen_bool(0.5) {
                    format!("v{}", self.rng.gen_range(0..self.vars))
                } else {
                    format!("f{}", self.rng.gen_range(0..live.max(1)))
                };
                if live == 0 && target.starts_with('f') {
                    out.push(self.arith());
                } else if self.rng.gen_bool(0.5) {
                    let op = self.addr(Ref::label(&target));
                    out.push(ins(O_LEA, vec![op, AsmOperand::Reg(r)]));
                } else {
                    out.push(ins(O_LDI, vec![AsmOperand::Reg(r), AsmOperand::ImmRef(Ref::label(&target))]));
                }
                1
            }
            3 => {
                let r = self.value_reg();
                out.push(ins(O_OUT, vec![AsmOperand::Reg(r)]));
                1
            }
            _ => {
                out.push(self.arith());
                1
            }
        }
    }

    fn body(&mut self, out: &mut Vec<Line>, me: Option<usize>, depth: u8, n: usize, budget: u64) -> u64 {
        let mut cost = 0;
        for _ in 0..n {
            cost += self.stmt(out, me, depth, budget.saturating_sub(cost));
        }
        cost
    }

    fn counted_loop(&mut self, out: &mut Vec<Line>, me: Option<usize>, depth: u8, budget: u64) -> u64 {
        let r = LOOP_REG + depth;
        let iters = self.rng.gen_range(1..=3u64);
        let head = self.fresh("loop");
        let mut inner = Vec::new();
        let n = self.rng.gen_range(1..=3);
        let c = self.body(&mut inner, me, depth + 1, n, budget / iters);
        out.push(ins(O_PUSH, vec![AsmOperand::Reg(r)]));
        out.push(ins(O_LDI, vec![AsmOperand::Reg(r), AsmOperand::Imm(iters as u32)]));
        out.push(Line::Label(head.clone()));
        out.extend(inner);
        out.push(ins(O_ADDI, vec![AsmOperand::Reg(r), AsmOperand::Imm(u32::MAX)]));
        let back = if self.rng.gen_bool(self.cfg.abs_fraction / 2.0) {
            AsmOperand::Addr(Ref::label(&head), AM_ABS)
        } else {
            AsmOperand::AddrAuto(Ref::label(&head))
        };
        out.push(ins(O_BNE, vec![back]));
        out.push(ins(O_POP, vec![AsmOperand::Reg(r)]));
        4 + iters * (c + 2)
    }

    fn skip(&mut self, out: &mut Vec<Line>, me: Option<usize>, depth: u8, budget: u64) -> u64 {
        let over = self.fresh("skip");
        let (a, b) = (self.value_reg(), self.value_reg());
        out.push(ins(O_CMP, vec![AsmOperand::Reg(a), AsmOperand::Reg(b)]));
        let op = if self.rng.gen_bool(self.cfg.abs_fraction / 2.0) {
            AsmOperand::Addr(Ref::label(&over), AM_ABS)
        } else {
            AsmOperand::AddrAuto(Ref::label(&over))
        };
        out.push(ins(if self.rng.gen_bool(0.5) { O_BEQ } else { O_BNE }, vec![op]));
        let n = self.rng.gen_range(1..=3);
        let c = self.body(out, me, depth + 1, n, budget);
        out.push(Line::Label(over));
        2 + c
    }

    fn subprogram(&mut self, name: &str, me: Option<usize>) -> (Vec<Line>, u64) {
        let mut out = vec![Line::Label(name.to_string())];
        let n = self.rng.gen_range(1..=self.cfg.max_stmts);
        let c = self.body(&mut out, me, 0, n, self.cfg.step_budget);
        out.push(ins(O_RET, vec![]));
        (out, c + 1)
    }
}

/// Generates a program from `seed`.
pub fn generate(cfg: &GenConfig, seed: u64) -> TaskFile {
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        vars: 0,
        idioms: Vec::new(),
        costs: Vec::new(),
        next_label: 0,
    };
    g.vars = g.rng.gen_range(1..=6);
    g.make_idioms();

    // Callees get higher numbers than their callers and are generated first,
    // so their costs are known.
    let live = cfg.subprograms;
    let mut units: Vec<Vec<Line>> = Vec::new();
    let mut live_bodies = vec![Vec::new(); live];
    g.costs = vec![0; live];
    for i in (0..live).rev() {
        let (lines, cost) = g.subprogram(&format!("f{i}"), Some(i));
        g.costs[i] = cost;
        live_bodies[i] = lines;
    }
    units.extend(live_bodies);
    for d in 0..cfg.dead_count() {
        let (lines, _) = g.subprogram(&format!("dead{d}"), None);
        units.push(lines);
    }

    let mut main = vec![Line::Label("main".into())];
    for r in 0..3 {
        main.push(ins(O_IN, vec![AsmOperand::Reg(r)]));
    }
    let n = g.rng.gen_range(2..=cfg.max_stmts.max(2));
    g.body(&mut main, None, 0, n, cfg.step_budget * 4);
    for i in 0..live {
        if g.rng.gen_bool(0.5) || i == 0 {
            let op = g.addr(Ref::label(&format!("f{i}")));
            main.push(ins(O_JSR, vec![op]));
        }
    }
    for r in 0..VALUE_REGS {
        main.push(ins(O_OUT, vec![AsmOperand::Reg(r)]));
    }
    main.push(ins(O_HALT, vec![]));
    units.push(main);
    units.shuffle(&mut g.rng);

    let mut a = Assembler::new(cfg.load_addr);
    for u in units {
        for line in u {
            match line {
                Line::Label(l) => a.label(&l),
                Line::Ins(opc, ops) => a.instr(opc, ops),
            }
        }
    }
    for v in 0..g.vars {
        a.data_label(&format!("v{v}"));
        a.data_word(g.rng.gen_range(0..100));
    }
    a.data_label("fptrs");
    for i in 0..live {
        if g.rng.gen_bool(cfg.pointer_fraction) {
            a.data_ptr(Ref::label(&format!("f{i}")));
        }
    }
    if g.rng.gen_bool(0.5) {
        a.data_ptr(Ref::label("v0"));
    }
    a.finish("main").expect("generated programs assemble")
}

/// Random input vectors for a generated program.
pub fn inputs(seed: u64, count: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    (0..count)
        .map(|_| (0..3).map(|_| rng.gen_range(0..8)).collect())
        .collect()
}

/// Number of operands minimize could change.
pub fn reducible_operands(tf: &TaskFile) -> usize {
    let arch = crate::isa::ArchSpec::sdm1();
    let mut at = 0;
    let mut n = 0;
    while at < tf.text.len() {
        let d = arch.decode(&tf.text, at).expect("valid text");
        n += d
            .operands
            .iter()
            .filter(|o| arch.operand_equiv_class(o.mode).map_or(0, |c| c.len()) > 1)
            .count();
        at += d.len;
    }
    n
}
