use proptest::prelude::*;

use mco::distrib::{distribute, DistribMode};
use mco::elim::eliminate;
use mco::gen::{generate, inputs, GenConfig};
use mco::ir::Node;
use mco::isa::{sdm1, RawOperand};
use mco::macrocomp::MacroMode;
use mco::pipeline::{optimize, Options};
use mco::vm;
use mco::{ArchSpec, NodeId, OpcId, Program};

fn arch() -> &'static ArchSpec {
    ArchSpec::sdm1()
}

/// Reference counts recomputed from scratch over live nodes.
fn recount(p: &Program) -> Vec<(u32, u32)> {
    let mut counts = vec![(0u32, 0u32); p.nodes.len()];
    for n in p.flat() {
        let Some(t) = p.text(n) else { continue };
        for op in &t.ops {
            if let Some(target) = op.target {
                counts[target.index()].0 += 1;
                if t.opc == sdm1::O_JSR {
                    counts[target.index()].1 += 1;
                }
            }
        }
    }
    for r in &p.data_relocs {
        counts[r.target.index()].0 += 1;
    }
    if let Some(e) = p.entry {
        counts[e.index()].0 += 1;
        counts[e.index()].1 += 1;
    }
    counts
}

fn check_counts(p: &Program) -> Result<(), TestCaseError> {
    let expect = recount(p);
    for n in p.flat() {
        if let Node::Text(t) = p.node(n) {
            let (refs, jsr) = expect[n.index()];
            prop_assert_eq!(t.refs, refs, "refs at {:#x}", t.iaddr);
            prop_assert_eq!(t.jsr, jsr, "jsr at {:#x}", t.iaddr);
        }
    }
    Ok(())
}

fn linear_find(p: &Program, addr: u32) -> Option<NodeId> {
    p.flat().into_iter().find(|&n| p.node(n).contains(addr) && !p.node(n).is_data())
}

fn options() -> impl Strategy<Value = Options> {
    (
        any::<bool>(),
        prop_oneof![Just(DistribMode::Off), Just(DistribMode::S0), Just(DistribMode::S1), Just(DistribMode::S0s1)],
        prop_oneof![Just(MacroMode::Off), Just(MacroMode::Value), Just(MacroMode::Length)],
        any::<bool>(),
    )
        .prop_map(|(elim, distrib, macro_mode, reduce)| Options { elim, distrib, macro_mode, reduce, ..Options::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_then_decode(opc in 0u8..20, pick in any::<u64>(), value in any::<u32>(), reg in 0u8..16) {
        let d = arch().opcode(OpcId(opc));
        let mut ops = Vec::new();
        for (k, class) in d.class.iter().enumerate() {
            let mode = class[(pick >> (8 * k)) as usize % class.len()];
            let md = arch().mode(mode);
            ops.push(if md.reg_bytes > 0 {
                RawOperand::reg(reg)
            } else {
                let bits = 8 * md.ext_size as u32;
                let v = if bits == 32 { value } else { ((value << (32 - bits)) as i32 >> (32 - bits)) as u32 };
                RawOperand::ext(mode, v)
            });
        }
        let bytes = arch().encode(OpcId(opc), &ops).unwrap();
        let dec = arch().decode(&bytes, 0).unwrap();
        prop_assert_eq!(dec.opc, OpcId(opc));
        prop_assert_eq!(dec.len, bytes.len());
        prop_assert_eq!(dec.operands, ops);
    }

    #[test]
    fn find_node_agrees_with_scan(seed in 0u64..500, probes in proptest::collection::vec(any::<u16>(), 32)) {
        let tf = generate(&GenConfig::small(), seed);
        let p = Program::build(arch(), &tf).unwrap();
        let end = tf.load_addr + tf.text.len() as u32;
        for probe in probes {
            let addr = tf.load_addr.wrapping_sub(4) + probe as u32 % (tf.text.len() as u32 + 8);
            let want = if addr >= tf.load_addr && addr < end { linear_find(&p, addr) } else { None };
            let got = p.find_node(addr).filter(|&n| !p.node(n).is_data());
            prop_assert_eq!(got, want, "addr {:#x}", addr);
        }
    }

    #[test]
    fn reference_counts_match_a_recount(seed in 0u64..500) {
        let tf = generate(&GenConfig::small(), seed);
        let mut p = Program::build(arch(), &tf).unwrap();
        check_counts(&p)?;
        eliminate(&mut p).unwrap();
        check_counts(&p)?;
    }

    #[test]
    fn distribution_permutes_blocks(seed in 0u64..500) {
        let tf = generate(&GenConfig::default(), seed);
        let mut p = Program::build(arch(), &tf).unwrap();
        let mut before = p.order();
        distribute(&mut p, &DistribMode::S0s1.config(arch()).unwrap());
        let mut after = p.order();
        prop_assert_eq!(*after.last().unwrap(), p.data_block);
        before.sort();
        after.sort();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn any_pass_mix_preserves_behaviour(seed in 0u64..1000, opts in options()) {
        let tf = generate(&GenConfig::small(), seed);
        let a = optimize(&tf, &opts).unwrap();
        let r = &a.report;
        prop_assert_eq!(r.delta_sum(), r.input_text as i64 - r.output_text as i64);
        prop_assert_eq!(a.task.data.len(), tf.data.len());
        let ins = inputs(seed, 4);
        prop_assert!(vm::compare(&tf, &a.task, &ins, vm::DEFAULT_STEP_LIMIT).unwrap().is_none());
        let b = optimize(&tf, &opts).unwrap();
        prop_assert_eq!(a.task, b.task);
        prop_assert_eq!(a.report.without_timings(), b.report.without_timings());
    }
}

#[test]
fn reduction_alone_never_grows_text() {
    let spanning = |name: &str| ["d8", "d16", "abs"].contains(&name);
    for seed in 0..50 {
        let tf = generate(&GenConfig::default(), seed);
        let out = optimize(&tf, &Options { reduce: true, ..Options::all_off() }).unwrap();
        assert!(out.task.text.len() <= tf.text.len(), "seed {seed}");
        let rows = out.report.modes.iter().filter(|m| spanning(&m.name));
        let (init, fin) = rows.fold((0, 0), |(i, f), m| (i + m.initial, f + m.fin));
        assert_eq!(init, fin, "seed {seed}");
    }
}
