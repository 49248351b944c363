//! Experiment harness: configurations, canonical problems, diagnostics, the
//! run loop, and convergence studies.

pub mod config;
pub mod converge;
pub mod diagnostics;
pub mod problems;
pub mod sim;

pub use config::{ProblemConfig, ProblemKind, SolverKind};
pub use converge::{convergence_study, with_resolution, Study, StudyErrors};
pub use diagnostics::DiagnosticsRecord;
pub use problems::{build_problem, ProblemSetup};
pub use sim::{bench, run, run_to_dir, BenchReport, RunOutput, SimResult};
