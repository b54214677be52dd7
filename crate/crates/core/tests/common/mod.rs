//! Random program/patch/test generators and independent oracles shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use patchsched::exec::{run_test, Control, DataState, Engine, EngineConfig, NoHook, TraceEvent};
use patchsched::harness::{Project, RunConfig, TestSpec};
use patchsched::intercept::SELECTOR;
use patchsched::lang::{parse, Location, Program, StmtKind, Value};
use patchsched::patch::{apply_patch, Edit, Patch, PatchSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Gen {
    pub rng: ChaCha8Rng,
    vars: Vec<String>,
}

impl Gen {
    pub fn new(seed: u64) -> Gen {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), vars: Vec::new() }
    }

    pub fn set_vars(&mut self, vars: &[&str]) {
        self.vars = vars.iter().map(|v| v.to_string()).collect();
    }

    fn int(&mut self) -> i64 {
        self.rng.gen_range(-3..=6)
    }

    fn var(&mut self) -> String {
        self.vars.choose(&mut self.rng).expect("variables").clone()
    }

    pub fn expr(&mut self, depth: u32) -> String {
        match self.rng.gen_range(0..10) {
            0..=2 => self.int().to_string(),
            6 | 7 if depth > 0 => {
                let op = ["+", "-", "*", "+"][self.rng.gen_range(0..4)];
                format!("({} {op} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            9 if depth > 0 && self.rng.gen_bool(0.3) => format!("({} / {})", self.expr(depth - 1), self.var()),
            _ => self.var(),
        }
    }

    pub fn cond(&mut self) -> String {
        let op = ["<", "=", "<=", "!="][self.rng.gen_range(0..4)];
        format!("{} {op} {}", self.expr(1), self.expr(1))
    }

    fn assign(&mut self) -> String {
        if self.rng.gen_bool(0.1) {
            return format!("{} := h({});", self.var(), self.expr(1));
        }
        format!("{} := {};", self.var(), self.expr(2))
    }

    /// A replacement statement for a leaf location.
    pub fn replacement(&mut self, in_loop: bool) -> String {
        match self.rng.gen_range(0..20) {
            0 => format!("throw {};", self.expr(1)),
            1 => format!("return {};", self.expr(1)),
            2 if in_loop => "break;".into(),
            3 if in_loop => "continue;".into(),
            4 | 5 => format!("if ({}) {{ {} }} else {{ {} }}", self.cond(), self.assign(), self.assign()),
            6 => format!("{} {}", self.assign(), self.assign()),
            7 => format!("try {{ {} }} catch (ex) {{ {} := ex; }}", self.assign(), self.var()),
            _ => self.assign(),
        }
    }
}

pub struct Instance {
    pub source: String,
    pub program: Program,
    pub tests: Vec<TestSpec>,
    pub patches: Vec<Patch>,
}

impl Instance {
    /// Patch sets grouped by fault location.
    pub fn patch_sets(&self) -> Vec<PatchSet> {
        let mut by_loc: BTreeMap<String, Vec<Patch>> = BTreeMap::new();
        for p in &self.patches {
            by_loc.entry(p.fault_location().unwrap_or_default()).or_default().push(p.clone());
        }
        by_loc.into_values().map(PatchSet::new).collect()
    }

    pub fn project(&self, config: RunConfig) -> Project {
        Project::from_source(&self.source, self.tests.clone(), self.patch_sets(), config).expect("generated project is valid")
    }

    /// Statement locations edited by any patch.
    pub fn patched_locations(&self) -> BTreeSet<Location> {
        self.patches.iter().flat_map(|p| p.stmt_locations().cloned()).collect()
    }
}

fn leaf_locations(program: &Program) -> Vec<Location> {
    program
        .locations()
        .into_iter()
        .filter(|l| l.method == "f")
        .filter(|l| matches!(&program.resolve(l).unwrap().kind, StmtKind::Assign { target, .. } if target.starts_with('g')))
        .collect()
}

/// A loop-free-in-patches, nondet-free program with a patched method `f`,
/// `n_tests` tests calling it, and `n_patches` patches on leaf statements of `f`.
pub fn instance(seed: u64, n_patches: usize, n_tests: usize) -> Instance {
    let mut g = Gen::new(seed);
    let n_vars = g.rng.gen_range(3..=5);
    g.vars = (0..n_vars).map(|i| format!("g{i}")).collect();
    let mut src = String::new();
    for v in g.vars.clone() {
        src.push_str(&format!("var {v} := {};\n", g.int()));
    }
    src.push_str("var c0 := 0;\nvar ex := 0;\ndef h(a) { return a * 2 + 1; }\ndef f() {\n");
    loop {
        let items = g.rng.gen_range(3..=6);
        let mut body = String::new();
        for _ in 0..items {
            let item = match g.rng.gen_range(0..6) {
                0 => format!("if ({}) {{ {} }} else {{ {} }}", g.cond(), g.assign(), g.assign()),
                1 => format!(
                    "c0 := 0; while (c0 < {}) {{ c0 := c0 + 1; {} {} }}",
                    g.rng.gen_range(1..=4),
                    g.assign(),
                    g.assign()
                ),
                2 => format!("try {{ {} {} }} catch (ex) {{ {} := ex; }}", g.assign(), g.assign(), g.var()),
                _ => g.assign(),
            };
            body.push_str("  ");
            body.push_str(&item);
            body.push('\n');
        }
        // Keep bodies that contain at least one leaf assignment to patch.
        if body.contains(":= ") {
            src.push_str(&body);
            break;
        }
    }
    src.push_str("}\n");
    let mut names = Vec::new();
    for t in 0..n_tests {
        let mut body = String::new();
        for _ in 0..g.rng.gen_range(0..=2) {
            body.push_str(&format!("{} := {}; ", g.var(), g.int()));
        }
        body.push_str("f(); ");
        if g.rng.gen_bool(0.4) {
            body.push_str("f(); ");
        }
        body.push_str(&format!("assert({});", g.cond()));
        src.push_str(&format!("def test{t}() {{ {body} }}\n"));
        names.push(format!("test{t}"));
    }
    let program = parse(&src).unwrap_or_else(|d| panic!("generated program does not parse: {d:?}\n{src}"));
    let tests = names
        .iter()
        .map(|n| {
            let failing = !run_test(&program, n, 1_000_000, EngineConfig::default()).passed();
            TestSpec::new(n, failing, "main")
        })
        .collect();
    let leaves = leaf_locations(&program);
    let mut patches = Vec::new();
    for k in 0..n_patches {
        let n_edits = if g.rng.gen_bool(0.1) && leaves.len() > 1 { 2 } else { 1 };
        let locs: Vec<Location> = leaves.choose_multiple(&mut g.rng, n_edits).cloned().collect();
        let edits = locs
            .iter()
            .map(|l| {
                let in_loop = program.in_loop(l);
                Edit { location: l.to_string().parse().unwrap(), replacement: g.replacement(in_loop) }
            })
            .collect();
        patches.push(Patch { id: format!("P{k}"), edits });
    }
    Instance { source: src, program, tests, patches }
}

/// Trace of a patched program on one test: every top-level execution of a
/// statement at `watch`, with its control outcome and changed variables.
pub fn patched_trace(base: &Program, patch: &Patch, entry: &str, watch: &BTreeSet<Location>, limit: u64) -> Option<Vec<TraceEvent>> {
    let patched = apply_patch(base, patch).ok()?;
    let mut e = Engine::new(&patched, EngineConfig::default());
    e.reset(limit, 0);
    e.trace_changes(watch.iter().cloned());
    let _ = e.run_entry(entry, &mut NoHook);
    Some(e.take_trace())
}

/// Number of distinct traces among `patches`: the test-equivalence class count.
pub fn trace_classes(base: &Program, patches: &[&Patch], entry: &str, watch: &BTreeSet<Location>, limit: u64) -> usize {
    let traces: BTreeSet<Vec<TraceEvent>> =
        patches.iter().filter_map(|p| patched_trace(base, p, entry, watch, limit)).collect();
    traces.len()
}

/// Executes the statement at `loc` once from the given state.
pub fn step_once(
    program: &Program,
    loc: &Location,
    globals: &[(String, Value)],
    params: &[(String, Value)],
    selector: Option<&str>,
) -> (Control, DataState, u64) {
    let mut e = Engine::new(program, EngineConfig::default());
    e.reset(1_000_000, 0);
    for (k, v) in globals {
        e.set_global(k, v.clone());
    }
    if let Some(s) = selector {
        e.set_global(SELECTOR, Value::str(s));
    }
    e.push_frame(params.to_vec());
    let s = program.resolve(loc).expect("location resolves").clone();
    let c = e.exec(&s, &mut NoHook).expect("no halt in a single step");
    (c, e.snapshot().user_view(), e.budget().used)
}
