//! Big-step interpreter for IMP+ with step budgets, and the single-test runner.

mod engine;

pub use engine::{
    run_test, CallResult, Control, DataState, Engine, EngineConfig, Halt, InterceptHook, NoHook, StepBudget, TestOutcome,
    TestResult, TraceEvent, DEFAULT_MAX_DEPTH,
};

/// Exception payloads raised by the engine itself.
pub mod errors {
    pub const DIV_BY_ZERO: &str = "div-by-zero";
    pub const STACK_OVERFLOW: &str = "stack-overflow";
    pub const TYPE_ERROR: &str = "type-error";
    pub const NONDET_BOUND: &str = "nondet-bound";
    pub const UNBOUND_VARIABLE: &str = "unbound-variable";
    pub const UNDEFINED_METHOD: &str = "undefined-method";
    pub const ARITY_MISMATCH: &str = "arity-mismatch";
    pub const STRAY_CONTROL: &str = "stray-control";
}

/// Step budget for a test: `base + ceil(factor * original_steps)`.
pub fn test_budget(base: u64, factor: f64, original_steps: u64) -> u64 {
    base.saturating_add((factor * original_steps as f64).ceil() as u64)
}

#[cfg(test)]
mod tests;
