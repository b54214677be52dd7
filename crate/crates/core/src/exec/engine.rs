use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::errors;
use crate::lang::{BinOp, Expr, Location, Method, Program, Stmt, StmtKind, UnOp, Value, IGNORE_VAR};

pub const DEFAULT_MAX_DEPTH: usize = 10_000;

/// Abnormal control states plus `Normal`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Control {
    Normal,
    Break,
    Continue,
    Return(Value),
    Exception(Value),
}

/// Reasons a run stops without reaching a control state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Halt {
    Timeout,
    /// Raised by an intercept hook to end the current run.
    Abort(String),
}

/// Outcome of a method invocation (the premises of the call rules).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallResult {
    Returned(Value),
    Threw(Value),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepBudget {
    pub limit: u64,
    pub used: u64,
}

impl StepBudget {
    pub fn new(limit: u64) -> Self {
        StepBudget { limit, used: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "value", rename_all = "kebab-case")]
pub enum TestResult {
    Passed,
    /// Uncaught exception, including failed assertions.
    Exception(Value),
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    #[serde(flatten)]
    pub result: TestResult,
    pub steps: u64,
}

impl TestOutcome {
    pub fn passed(&self) -> bool {
        self.result == TestResult::Passed
    }

    pub fn from_run(run: &Result<Control, Halt>, steps: u64) -> TestOutcome {
        let result = match run {
            Ok(Control::Exception(v)) => TestResult::Exception(v.clone()),
            Ok(_) => TestResult::Passed,
            Err(Halt::Timeout) => TestResult::Timeout,
            Err(Halt::Abort(reason)) => TestResult::Exception(Value::str(format!("aborted: {reason}"))),
        };
        TestOutcome { result, steps }
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestResult::Passed => f.write_str("passed"),
            TestResult::Exception(v) => write!(f, "failed(exception {v})"),
            TestResult::Timeout => f.write_str("failed(timeout)"),
        }
    }
}

/// Data state: globals plus the parameters of the innermost frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DataState {
    pub globals: BTreeMap<String, Value>,
    pub locals: Vec<(String, Value)>,
}

impl DataState {
    /// The state without instrumentation (`$`) variables.
    pub fn user_view(&self) -> DataState {
        DataState {
            globals: self.globals.iter().filter(|(k, _)| !k.starts_with('$')).map(|(k, v)| (k.clone(), v.clone())).collect(),
            locals: self.locals.iter().filter(|(k, _)| !k.starts_with('$')).cloned().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.locals.iter().find(|(k, _)| k == name).map(|(_, v)| v).or_else(|| self.globals.get(name))
    }

    /// Variables whose value differs from `before`, sorted by name.
    pub fn diff(&self, before: &DataState) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        for (k, v) in &self.globals {
            if before.globals.get(k) != Some(v) {
                out.push((k.clone(), v.clone()));
            }
        }
        for (k, v) in &self.locals {
            if before.locals.iter().find(|(bk, _)| bk == k).map(|(_, bv)| bv) != Some(v) {
                out.push((k.clone(), v.clone()));
            }
        }
        out.sort();
        out
    }
}

/// Called when execution reaches an `$intercept` statement.
pub trait InterceptHook {
    fn intercept(&mut self, engine: &mut Engine<'_>, site: &str, args: Vec<Value>) -> Result<(), Halt>;
}

/// Hook for runs that must never reach an intercept site.
pub struct NoHook;

impl InterceptHook for NoHook {
    fn intercept(&mut self, _: &mut Engine<'_>, site: &str, _: Vec<Value>) -> Result<(), Halt> {
        Err(Halt::Abort(format!("intercept site `{site}` reached outside of scheduling")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { max_depth: DEFAULT_MAX_DEPTH, seed: 0 }
    }
}

/// One top-level execution of a watched statement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceEvent {
    pub loc: Location,
    /// `None` when the budget ran out inside the statement.
    pub control: Option<Control>,
    pub writes: Vec<(String, Value)>,
}

struct Tracer {
    watch: HashSet<Location>,
    depth: usize,
    events: Vec<TraceEvent>,
}

struct Frame {
    params: Vec<(String, Value)>,
}

enum Raise {
    Exception(Value),
    Halt(Halt),
}

impl From<Halt> for Raise {
    fn from(h: Halt) -> Self {
        Raise::Halt(h)
    }
}

fn raise(msg: &str) -> Raise {
    Raise::Exception(Value::str(msg))
}

const RED_ZONE: usize = 128 * 1024;
const STACK_GROWTH: usize = 4 * 1024 * 1024;

/// A single-threaded interpreter instance over an immutable program.
pub struct Engine<'p> {
    program: &'p Program,
    globals: BTreeMap<String, Value>,
    frames: Vec<Frame>,
    budget: StepBudget,
    total_steps: u64,
    rng: ChaCha8Rng,
    config: EngineConfig,
    tracer: Option<Tracer>,
}

impl<'p> Engine<'p> {
    pub fn new(program: &'p Program, config: EngineConfig) -> Self {
        let mut engine = Engine {
            program,
            globals: BTreeMap::new(),
            frames: Vec::new(),
            budget: StepBudget::new(u64::MAX),
            total_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            tracer: None,
        };
        engine.reset_data();
        engine
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    /// Restores globals to their declared initial values and drops all frames.
    pub fn reset_data(&mut self) {
        self.globals = self.program.globals.iter().map(|g| (g.name.clone(), g.init.clone())).collect();
        self.frames.clear();
    }

    /// Prepares a fresh run: data reset, new budget, generator reseeded.
    pub fn reset(&mut self, limit: u64, seed: u64) {
        self.reset_data();
        self.budget = StepBudget::new(limit);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn budget(&self) -> StepBudget {
        self.budget
    }

    pub fn set_budget(&mut self, budget: StepBudget) {
        self.budget = budget;
    }

    /// Steps executed by this engine since construction, across all runs.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn global(&self, name: &str) -> Option<&Value> {
        self.globals.get(name)
    }

    pub fn set_global(&mut self, name: &str, value: Value) {
        if let Some(slot) = self.globals.get_mut(name) {
            *slot = value;
        } else {
            self.globals.insert(name.to_string(), value);
        }
    }

    pub fn snapshot(&self) -> DataState {
        DataState {
            globals: self.globals.clone(),
            locals: self.frames.last().map(|f| f.params.clone()).unwrap_or_default(),
        }
    }

    /// Replaces globals and the innermost frame's parameters.
    pub fn restore(&mut self, state: &DataState) {
        self.globals = state.globals.clone();
        if let Some(f) = self.frames.last_mut() {
            f.params = state.locals.clone();
        }
    }

    pub fn frame_depth(&self) -> usize {
        self.frames.len()
    }

    pub fn truncate_frames(&mut self, depth: usize) {
        self.frames.truncate(depth);
    }

    pub fn push_frame(&mut self, params: Vec<(String, Value)>) {
        self.frames.push(Frame { params });
    }

    pub fn pop_frame(&mut self) {
        self.frames.pop();
    }

    /// Records a change event for each top-level execution of a statement at
    /// one of `locations`.
    pub fn trace_changes(&mut self, locations: impl IntoIterator<Item = Location>) {
        self.tracer = Some(Tracer { watch: locations.into_iter().collect(), depth: 0, events: Vec::new() });
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.tracer.as_mut().map(|t| std::mem::take(&mut t.events)).unwrap_or_default()
    }

    fn tick(&mut self) -> Result<(), Halt> {
        if self.budget.used >= self.budget.limit {
            return Err(Halt::Timeout);
        }
        self.budget.used += 1;
        self.total_steps += 1;
        Ok(())
    }

    fn lookup(&self, name: &str) -> Option<&Value> {
        if let Some(frame) = self.frames.last() {
            if let Some((_, v)) = frame.params.iter().find(|(k, _)| k == name) {
                return Some(v);
            }
        }
        self.globals.get(name)
    }

    pub fn assign(&mut self, name: &str, value: Value) {
        if name == IGNORE_VAR {
            return;
        }
        if let Some(frame) = self.frames.last_mut() {
            if let Some(slot) = frame.params.iter_mut().find(|(k, _)| k == name) {
                slot.1 = value;
                return;
            }
        }
        self.set_global(name, value);
    }

    /// Runs a test entry method from the current data state.
    pub fn run_entry(&mut self, entry: &str, hook: &mut dyn InterceptHook) -> Result<Control, Halt> {
        match self.invoke(entry, Vec::new(), hook)? {
            CallResult::Returned(v) => Ok(Control::Return(v)),
            CallResult::Threw(e) => Ok(Control::Exception(e)),
        }
    }

    /// Evaluates an expression in the current frame. `Err(Ok(v))` is an
    /// exception with payload `v`.
    pub fn eval(&mut self, e: &Expr) -> Result<Value, Result<Value, Halt>> {
        self.eval_expr(e).map_err(|r| match r {
            Raise::Exception(v) => Ok(v),
            Raise::Halt(h) => Err(h),
        })
    }

    /// Calls `name` with `args`, applying the call rules to the callee's body.
    pub fn invoke(&mut self, name: &str, args: Vec<Value>, hook: &mut dyn InterceptHook) -> Result<CallResult, Halt> {
        let program = self.program;
        let Some(method) = program.method(name) else {
            return Ok(CallResult::Threw(Value::str(errors::UNDEFINED_METHOD)));
        };
        if method.params.len() != args.len() {
            return Ok(CallResult::Threw(Value::str(errors::ARITY_MISMATCH)));
        }
        if self.frames.len() >= self.config.max_depth {
            return Ok(CallResult::Threw(Value::str(errors::STACK_OVERFLOW)));
        }
        self.call_body(method, args, hook)
    }

    fn call_body(&mut self, method: &'p Method, args: Vec<Value>, hook: &mut dyn InterceptHook) -> Result<CallResult, Halt> {
        let depth = self.frames.len();
        self.frames.push(Frame { params: method.params.iter().cloned().zip(args).collect() });
        let r = self.exec_block(&method.body, hook);
        self.frames.truncate(depth);
        Ok(match r? {
            Control::Normal => CallResult::Returned(Value::Unit),
            Control::Return(v) => CallResult::Returned(v),
            Control::Exception(e) => CallResult::Threw(e),
            Control::Break | Control::Continue => CallResult::Threw(Value::str(errors::STRAY_CONTROL)),
        })
    }

    pub fn exec_block(&mut self, stmts: &[Stmt], hook: &mut dyn InterceptHook) -> Result<Control, Halt> {
        for s in stmts {
            let c = self.exec(s, hook)?;
            if c != Control::Normal {
                return Ok(c);
            }
        }
        Ok(Control::Normal)
    }

    /// Executes one statement from a `Normal` state.
    pub fn exec(&mut self, s: &Stmt, hook: &mut dyn InterceptHook) -> Result<Control, Halt> {
        if let Some(tr) = &mut self.tracer {
            if tr.depth == 0 && tr.watch.contains(&s.loc) {
                tr.depth += 1;
                let before = self.snapshot();
                let r = self.exec_inner(s, hook);
                let writes = self.snapshot().diff(&before);
                let tr = self.tracer.as_mut().expect("tracer present");
                tr.depth -= 1;
                tr.events.push(TraceEvent { loc: s.loc.clone(), control: r.as_ref().ok().cloned(), writes });
                return r;
            }
        }
        self.exec_inner(s, hook)
    }

    fn exec_inner(&mut self, s: &Stmt, hook: &mut dyn InterceptHook) -> Result<Control, Halt> {
        stacker::maybe_grow(RED_ZONE, STACK_GROWTH, || self.exec_kind(s, hook))
    }

    fn exec_kind(&mut self, s: &Stmt, hook: &mut dyn InterceptHook) -> Result<Control, Halt> {
        self.tick()?;
        macro_rules! eval_or_throw {
            ($e:expr) => {
                match self.eval_expr($e) {
                    Ok(v) => v,
                    Err(Raise::Exception(v)) => return Ok(Control::Exception(v)),
                    Err(Raise::Halt(h)) => return Err(h),
                }
            };
        }
        match &s.kind {
            StmtKind::Block(b) => self.exec_block(b, hook),
            StmtKind::Skip => Ok(Control::Normal),
            StmtKind::Assign { target, value } => {
                let v = eval_or_throw!(value);
                self.assign(target, v);
                Ok(Control::Normal)
            }
            StmtKind::Call { target, method, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(eval_or_throw!(a));
                }
                match self.invoke(method, vals, hook)? {
                    CallResult::Returned(v) => {
                        self.assign(target, v);
                        Ok(Control::Normal)
                    }
                    CallResult::Threw(e) => Ok(Control::Exception(e)),
                }
            }
            StmtKind::If { cond, then_branch, else_branch } => match eval_or_throw!(cond) {
                Value::Bool(true) => self.exec_block(then_branch, hook),
                Value::Bool(false) => self.exec_block(else_branch, hook),
                _ => Ok(Control::Exception(Value::str(errors::TYPE_ERROR))),
            },
            StmtKind::While { cond, body } => loop {
                match eval_or_throw!(cond) {
                    Value::Bool(true) => {}
                    Value::Bool(false) => return Ok(Control::Normal),
                    _ => return Ok(Control::Exception(Value::str(errors::TYPE_ERROR))),
                }
                match self.exec_block(body, hook)? {
                    Control::Normal | Control::Continue => {}
                    Control::Break => return Ok(Control::Normal),
                    other => return Ok(other),
                }
            },
            StmtKind::Try { body, var, handler } => match self.exec_block(body, hook)? {
                Control::Exception(e) => {
                    self.assign(var, e);
                    self.exec_block(handler, hook)
                }
                other => Ok(other),
            },
            StmtKind::Break => Ok(Control::Break),
            StmtKind::Continue => Ok(Control::Continue),
            StmtKind::Return(e) => Ok(Control::Return(eval_or_throw!(e))),
            StmtKind::Throw(e) => Ok(Control::Exception(eval_or_throw!(e))),
            StmtKind::Intercept { site, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(eval_or_throw!(a));
                }
                hook.intercept(self, site, vals)?;
                Ok(Control::Normal)
            }
        }
    }

    fn eval_expr(&mut self, e: &Expr) -> Result<Value, Raise> {
        stacker::maybe_grow(RED_ZONE, STACK_GROWTH, || self.eval_kind(e))
    }

    fn eval_kind(&mut self, e: &Expr) -> Result<Value, Raise> {
        self.tick()?;
        Ok(match e {
            Expr::Int(i) => Value::Int(*i),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Sentinel => Value::Sentinel,
            Expr::Var(name) => match self.lookup(name) {
                Some(v) => v.clone(),
                None => return Err(Raise::Exception(Value::str(format!("{}: {name}", errors::UNBOUND_VARIABLE)))),
            },
            Expr::Nondet(k) => match self.eval_expr(k)? {
                Value::Int(k) if k >= 1 => Value::Int(self.rng.gen_range(0..k)),
                _ => return Err(raise(errors::NONDET_BOUND)),
            },
            Expr::Unary(op, inner) => match (op, self.eval_expr(inner)?) {
                (UnOp::Neg, Value::Int(i)) => Value::Int(i.wrapping_neg()),
                (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
                _ => return Err(raise(errors::TYPE_ERROR)),
            },
            Expr::Binary(BinOp::And, l, r) => match self.eval_expr(l)? {
                Value::Bool(false) => Value::Bool(false),
                Value::Bool(true) => match self.eval_expr(r)? {
                    b @ Value::Bool(_) => b,
                    _ => return Err(raise(errors::TYPE_ERROR)),
                },
                _ => return Err(raise(errors::TYPE_ERROR)),
            },
            Expr::Binary(BinOp::Or, l, r) => match self.eval_expr(l)? {
                Value::Bool(true) => Value::Bool(true),
                Value::Bool(false) => match self.eval_expr(r)? {
                    b @ Value::Bool(_) => b,
                    _ => return Err(raise(errors::TYPE_ERROR)),
                },
                _ => return Err(raise(errors::TYPE_ERROR)),
            },
            Expr::Binary(op, l, r) => {
                let lv = self.eval_expr(l)?;
                let rv = self.eval_expr(r)?;
                binary(*op, lv, rv)?
            }
        })
    }
}

fn binary(op: BinOp, l: Value, r: Value) -> Result<Value, Raise> {
    match op {
        BinOp::Eq => return Ok(Value::Bool(l == r)),
        BinOp::Ne => return Ok(Value::Bool(l != r)),
        _ => {}
    }
    let (Value::Int(a), Value::Int(b)) = (l, r) else {
        return Err(raise(errors::TYPE_ERROR));
    };
    Ok(match op {
        BinOp::Add => Value::Int(a.wrapping_add(b)),
        BinOp::Sub => Value::Int(a.wrapping_sub(b)),
        BinOp::Mul => Value::Int(a.wrapping_mul(b)),
        BinOp::Div => {
            if b == 0 {
                return Err(raise(errors::DIV_BY_ZERO));
            }
            Value::Int(a.wrapping_div(b))
        }
        BinOp::Lt => Value::Bool(a < b),
        BinOp::Le => Value::Bool(a <= b),
        BinOp::Eq | BinOp::Ne | BinOp::And | BinOp::Or => unreachable!("handled above"),
    })
}

/// Runs `entry` on a fresh engine with the given step limit and seed.
pub fn run_test(program: &Program, entry: &str, limit: u64, config: EngineConfig) -> TestOutcome {
    let mut engine = Engine::new(program, config);
    engine.reset(limit, config.seed);
    let r = engine.run_entry(entry, &mut NoHook);
    TestOutcome::from_run(&r, engine.budget().used)
}
