use std::collections::BTreeSet;

use serde::Serialize;

use crate::lang::{is_reserved, Method, Program, Stmt, StmtKind};

/// Variables a statement may modify, over-approximated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChangeScope {
    pub vars: BTreeSet<String>,
    pub calls_impure: bool,
    pub oversized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScopeConfig {
    pub max_vars: usize,
    pub impure_bypass: bool,
}

impl Default for ScopeConfig {
    fn default() -> Self {
        ScopeConfig { max_vars: 8, impure_bypass: true }
    }
}

fn collect(stmt: &Stmt, writes: &mut BTreeSet<String>, calls: &mut BTreeSet<String>) {
    stmt.walk(&mut |s| {
        let target = match &s.kind {
            StmtKind::Assign { target, .. } => Some(target),
            StmtKind::Call { target, method, .. } => {
                calls.insert(method.clone());
                Some(target)
            }
            StmtKind::Try { var, .. } => Some(var),
            _ => None,
        };
        if let Some(t) = target {
            if !is_reserved(t) {
                writes.insert(t.clone());
            }
        }
    });
}

/// Writes of a method body that are not to its own parameters, and its callees.
fn method_effects(m: &Method) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut writes = BTreeSet::new();
    let mut calls = BTreeSet::new();
    for s in &m.body {
        collect(s, &mut writes, &mut calls);
    }
    writes.retain(|w| !m.params.contains(w));
    (writes, calls)
}

/// Transitive closure over the call graph starting from `roots`. Returns the
/// union of callee writes and whether an unknown method was reached.
fn closure(program: &Program, roots: BTreeSet<String>) -> (BTreeSet<String>, BTreeSet<String>, bool) {
    let mut seen = BTreeSet::new();
    let mut writes = BTreeSet::new();
    let mut unresolved = false;
    let mut work: Vec<String> = roots.into_iter().collect();
    while let Some(name) = work.pop() {
        if !seen.insert(name.clone()) {
            continue;
        }
        let Some(m) = program.method(&name) else {
            unresolved = true;
            continue;
        };
        let (w, c) = method_effects(m);
        writes.extend(w);
        work.extend(c.into_iter().filter(|c| !seen.contains(c)));
    }
    (writes, seen, unresolved)
}

/// Methods transitively callable from `stmt`.
pub fn reachable_methods(program: &Program, stmt: &Stmt) -> BTreeSet<String> {
    let mut writes = BTreeSet::new();
    let mut calls = BTreeSet::new();
    collect(stmt, &mut writes, &mut calls);
    closure(program, calls).1
}

pub fn analyze_change_scope(program: &Program, stmt: &Stmt, config: ScopeConfig) -> ChangeScope {
    let mut vars = BTreeSet::new();
    let mut calls = BTreeSet::new();
    collect(stmt, &mut vars, &mut calls);
    let (callee_writes, _, unresolved) = closure(program, calls);
    let calls_impure = unresolved || !callee_writes.is_empty();
    vars.extend(callee_writes);
    let oversized = vars.len() > config.max_vars || (config.impure_bypass && calls_impure);
    ChangeScope { vars, calls_impure, oversized }
}

/// True iff the method (transitively) changes nothing but its own parameters.
pub fn purity(program: &Program, method: &str) -> bool {
    let (writes, _, unresolved) = closure(program, BTreeSet::from([method.to_string()]));
    !unresolved && writes.is_empty()
}
