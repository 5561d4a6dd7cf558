//! Relaxation methods for pessimistic bilevel programs.
//!
//! The lower level is replaced by its KKT conditions, the complementarity
//! part is relaxed with one of five schemes, and the resulting smooth
//! system is solved by a smoothed Fischer–Burmeister Newton method while the
//! relaxation parameter is driven to zero.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod expr;
pub mod fbsys;
pub mod newton;
pub mod outer;
pub mod problem;
pub mod relax;
pub mod setlab;
pub mod verify;

pub use expr::{Expr, ExprError, Jet3, JetOrder, VarRef};
pub use fbsys::{FbSystem, Iterate, IterateLayout};
pub use problem::{ProblemError, ProblemSpec, Registry};
pub use bench::{perf_profile, run_suite, summary_table, Measure, ProfileCurve, RunRecord, SuiteOptions, SummaryTable};
pub use newton::NewtonOptions;
pub use outer::{solve, OuterTermination, SolveOptions, SolveReport};
pub use relax::Scheme;
pub use setlab::{GridBox, Predicate, SampledSet};
pub use verify::{assess, Assessment, Flavor, VerifyOptions};

/// Shortest decimal that parses back to `v`, in scientific notation outside
/// `[1e-4, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}
