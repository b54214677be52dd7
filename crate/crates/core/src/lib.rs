//! Patch validation for IMP+ programs.
//!
//! Candidate patches are woven into one meta-program, compiled with per-method
//! error isolation, and validated by a scheduler that runs each group of
//! test-equivalent patches only once. A plain per-patch validator is kept as
//! an oracle.

pub mod exec;
pub mod lang;
pub mod patch;
pub mod intercept;
pub mod sched;
pub mod harness;
