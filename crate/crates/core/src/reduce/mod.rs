//! Operand reduction: shrink every relocatable operand to its cheapest mode,
//! grow the ones whose targets fall out of span, then install final bytes.

mod relocate;
mod translate;

pub use relocate::{relocate, RelocateError};
pub use translate::{
    cost, form_tc, lengthen, minimize, set_faddr, LengthenError, LengthenStats, TranslateEntry, MAX_LENGTHEN_PASSES,
};
