//! Post-link optimizer for SDM-1 task files.
//!
//! The pipeline reads an MCO1 task file, builds a block/node representation
//! of its text and data, then eliminates dead code, reorders blocks, shrinks
//! span-dependent operands and writes a relocated task file.

pub mod asm;
pub mod distrib;
pub mod elim;
pub mod gen;
pub mod ir;
pub mod isa;
pub mod macrocomp;
pub mod pipeline;
pub mod reduce;
pub mod taskfile;
pub mod vm;

pub use ir::{BlockId, NodeId, Program};
pub use isa::{ArchSpec, ModeId, OpcId};
pub use taskfile::{read_task, write_task, RelocEntry, Segment, Symbol, TaskFile};
