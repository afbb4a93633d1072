//! Estimators that minimize an objective over the flow field directly: the
//! unsupervised loss via coarse-to-fine Adam, and Horn–Schunck.

mod adam;
mod horn_schunck;
mod trace;
mod unsupervised;

pub use adam::Adam;
pub use horn_schunck::{estimate_horn_schunck, HsConfig, HS_CONFIG_KEYS};
pub use trace::{
    solve_trace_report, FinalTerms, IterRecord, LevelReport, LevelTrace, SolveTrace, TraceReport,
};
pub use unsupervised::{estimate_unsupervised, SolverConfig, MIN_IMAGE_SIZE, SOLVER_CONFIG_KEYS};
