use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use serde::Serialize;
use thiserror::Error;

use super::scope::{analyze_change_scope, reachable_methods, ScopeConfig};
use crate::lang::{
    parse_program, parse_stmts, quote, static_check, stmt_to_string, Diagnostic, Location, ParseMode, Program, Stmt,
    StmtKind, ValueKind,
};
use crate::patch::PreparedPatch;

pub const SELECTOR: &str = "$selected_patch";
pub const SEL_ORIGINAL: &str = "$original";
pub const SEL_SCHED: &str = "$sched";
pub const CH_ORIG: &str = "$ch_orig";
pub const CH_CTL: &str = "$ch_ctl";
pub const CH_VAL: &str = "$ch_val";
/// Owner recorded for the original statement's components.
pub const ORIGINAL_OWNER: &str = "$original";
/// Group of generated methods.
pub const INSTRUMENT_GROUP: &str = "$instrument";

pub fn dirty_flag(var: &str) -> String {
    format!("$ch_d_{var}")
}

pub fn new_value(var: &str) -> String {
    format!("$ch_n_{var}")
}

/// 32-bit FNV-1a of the location string.
pub fn loc_hash(loc: &Location) -> String {
    let mut h: u32 = 0x811c_9dc5;
    for b in loc.to_string().bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    format!("{h:08x}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterceptConfig {
    pub max_scope_vars: usize,
    pub impure_bypass: bool,
    pub allowed_kinds: BTreeSet<ValueKind>,
    /// Makes weaving panic, to exercise failure containment.
    pub simulate_weave_bug: bool,
}

impl Default for InterceptConfig {
    fn default() -> Self {
        InterceptConfig {
            max_scope_vars: 8,
            impure_bypass: true,
            allowed_kinds: [ValueKind::Unit, ValueKind::Bool, ValueKind::Int, ValueKind::Str].into(),
            simulate_weave_bug: false,
        }
    }
}

impl InterceptConfig {
    pub fn scope(&self) -> ScopeConfig {
        ScopeConfig { max_vars: self.max_scope_vars, impure_bypass: self.impure_bypass }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum BypassReason {
    ImpureCall,
    ScopeTooLarge { vars: usize, limit: usize },
    DisallowedKind { var: String, kind: ValueKind },
    PatchLimitation { what: String },
    ParameterWrite { var: String, location: Location },
    NestedLocation { location: Location },
}

impl fmt::Display for BypassReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BypassReason::ImpureCall => f.write_str("calls an impure or unknown method"),
            BypassReason::ScopeTooLarge { vars, limit } => write!(f, "change scope has {vars} variables (limit {limit})"),
            BypassReason::DisallowedKind { var, kind } => write!(f, "variable `{var}` has kind {kind}, outside the allow-list"),
            BypassReason::PatchLimitation { what } => write!(f, "patch limitation: {what}"),
            BypassReason::ParameterWrite { var, location } => write!(f, "parameter `{var}` is written at {location}"),
            BypassReason::NestedLocation { location } => write!(f, "patched location {location} is nested in another"),
        }
    }
}

/// Per-patch bypass decision. `None` means the patch can be deduplicated.
pub fn bypass_dedup(base: &Program, patch: &PreparedPatch, config: &InterceptConfig) -> Option<BypassReason> {
    if !patch.globals.is_empty() {
        return Some(BypassReason::PatchLimitation { what: "edits a global declaration".into() });
    }
    for (loc, stmt) in &patch.stmts {
        let scope = analyze_change_scope(base, stmt, config.scope());
        if scope.calls_impure && config.impure_bypass {
            return Some(BypassReason::ImpureCall);
        }
        if scope.vars.len() > config.max_scope_vars {
            return Some(BypassReason::ScopeTooLarge { vars: scope.vars.len(), limit: config.max_scope_vars });
        }
        if let Some(reason) = scope_problem(base, loc, &scope.vars, config) {
            return Some(reason);
        }
    }
    None
}

fn scope_problem(base: &Program, loc: &Location, vars: &BTreeSet<String>, config: &InterceptConfig) -> Option<BypassReason> {
    let params = base.method(&loc.method).map(|m| m.params.as_slice()).unwrap_or(&[]);
    for v in vars {
        if params.contains(v) {
            return Some(BypassReason::ParameterWrite { var: v.clone(), location: loc.clone() });
        }
        if let Some(g) = base.global(v) {
            if !config.allowed_kinds.contains(&g.init.kind()) {
                return Some(BypassReason::DisallowedKind { var: v.clone(), kind: g.init.kind() });
            }
        }
    }
    None
}

/// Splits patches into those the scheduler can handle and those that must be
/// validated plainly, with the reason for each of the latter.
pub fn partition<'a>(
    base: &Program,
    patches: &'a [PreparedPatch],
    config: &InterceptConfig,
) -> (Vec<&'a PreparedPatch>, Vec<(&'a PreparedPatch, BypassReason)>) {
    let mut reasons: Vec<Option<BypassReason>> = patches.iter().map(|p| bypass_dedup(base, p, config)).collect();

    // The original statement's own writes must be capturable too.
    let mut site_problem: BTreeMap<Location, Option<BypassReason>> = BTreeMap::new();
    for (p, r) in patches.iter().zip(reasons.iter_mut()) {
        if r.is_some() {
            continue;
        }
        for (loc, _) in &p.stmts {
            let problem = site_problem.entry(loc.clone()).or_insert_with(|| {
                let original = base.resolve(loc).ok()?;
                let scope = analyze_change_scope(base, original, config.scope());
                scope_problem(base, loc, &scope.vars, config)
            });
            if let Some(problem) = problem {
                *r = Some(problem.clone());
                break;
            }
        }
    }

    let sites: BTreeSet<Location> = patches
        .iter()
        .zip(&reasons)
        .filter(|(_, r)| r.is_none())
        .flat_map(|(p, _)| p.stmts.iter().map(|(l, _)| l.clone()))
        .collect();
    for (p, r) in patches.iter().zip(reasons.iter_mut()) {
        if r.is_some() {
            continue;
        }
        for (loc, _) in &p.stmts {
            if sites.iter().any(|other| other != loc && (other.is_within(loc) || loc.is_within(other))) {
                *r = Some(BypassReason::NestedLocation { location: loc.clone() });
                break;
            }
        }
    }

    let mut eligible = Vec::new();
    let mut bypassed = Vec::new();
    for (p, r) in patches.iter().zip(reasons) {
        match r {
            None => eligible.push(p),
            Some(r) => bypassed.push((p, r)),
        }
    }
    (eligible, bypassed)
}

/// A patched location in the woven program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Site {
    pub loc: Location,
    /// Parameters of the enclosing method, passed to every component.
    pub params: Vec<String>,
    /// Union change scope of the original statement and all replacements.
    pub scope: Vec<String>,
    pub in_loop: bool,
    /// Patches editing this location, in weaving order.
    pub patches: Vec<String>,
    /// Capture method per patch id.
    pub components: BTreeMap<String, String>,
    pub original_component: String,
    /// Whether the original statement can call into a method holding a site.
    pub original_reaches_sites: bool,
}

#[derive(Clone, Debug)]
pub struct MetaProgram {
    pub woven: Program,
    /// Sites keyed by their location string (the intercept site name).
    pub sites: BTreeMap<String, Site>,
    pub patch_component_index: BTreeMap<(String, Location), String>,
    /// Generated method name to owning patch id (or [`ORIGINAL_OWNER`]).
    pub component_owner: BTreeMap<String, String>,
    /// Woven patch ids in order.
    pub patches: Vec<String>,
    pub uncompilable: BTreeMap<String, Vec<Diagnostic>>,
    pub compile_rounds: u32,
}

impl MetaProgram {
    pub fn site(&self, name: &str) -> Option<&Site> {
        self.sites.get(name)
    }
}

#[derive(Debug, Error)]
pub enum WeaveError {
    #[error("generated instrumentation does not parse: {0:?}")]
    Generated(Vec<Diagnostic>),
    #[error("diagnostics outside patch components: {0:?}")]
    BaseDiagnostics(Vec<Diagnostic>),
    #[error("second compilation round is not clean: {0:?}")]
    SecondRound(Vec<Diagnostic>),
    #[error("patched locations {0} and {1} are nested")]
    Nested(Location, Location),
}

fn args(items: &[&str]) -> String {
    items.join(", ")
}

fn emit_components(out: &mut String, cap: &str, ret: &str, params: &[String], scope: &[String], body: &Stmt, in_loop: bool) {
    let p: Vec<&str> = params.iter().map(String::as_str).collect();
    let olds: Vec<String> = scope.iter().map(|x| format!("$o_{x}")).collect();
    let mut cap_params = p.clone();
    cap_params.extend(olds.iter().map(String::as_str));
    cap_params.push("$v");
    let mut ret_params = p.clone();
    let mut ret_args = p.clone();
    if in_loop {
        ret_params.push("$fb");
        ret_args.push("0");
    }

    let _ = writeln!(out, "def {cap}({}) {{", args(&cap_params));
    let _ = writeln!(
        out,
        "  try {{ $v := {ret}({}); if ($v != $sentinel) {{ {CH_CTL} := \"return\"; {CH_VAL} := $v; }} }} \
         catch ($v) {{ {CH_CTL} := \"exc\"; {CH_VAL} := $v; }}",
        args(&ret_args)
    );
    for x in scope {
        let (d, n) = (dirty_flag(x), new_value(x));
        let _ = writeln!(out, "  if ($o_{x} != {x}) {{ {d} := true; {n} := {x}; {x} := $o_{x}; }} else {{ {d} := false; }}");
    }
    out.push_str("}\n");

    let body = stmt_to_string(body);
    let _ = writeln!(out, "def {ret}({}) {{", args(&ret_params));
    if in_loop {
        let _ = write!(out, "while (true) {{ $fb := $fb + 1; if (1 < $fb) {{ break; }}\n{body}$fb := $fb + 1; }}\n");
        let _ = writeln!(
            out,
            "if ($fb = 1) {{ {CH_CTL} := \"break\"; }} else if ($fb = 2) {{ {CH_CTL} := \"continue\"; }} \
             else {{ {CH_CTL} := \"normal\"; }}"
        );
    } else {
        let _ = writeln!(out, "{body}{CH_CTL} := \"normal\";");
    }
    out.push_str("return $sentinel;\n}\n");
}

fn dispatch_source(site: &Site) -> String {
    let mut call_args: Vec<String> = site.params.clone();
    call_args.extend(site.scope.iter().cloned());
    let mut out = String::new();
    let _ = write!(
        out,
        "if ({SELECTOR} = {}) {{ $intercept {} ({}); }}",
        quote(SEL_SCHED),
        quote(&site.loc.to_string()),
        call_args.join(", ")
    );
    let mut cap_args = call_args.clone();
    cap_args.push("0".into());
    for pid in &site.patches {
        let _ = write!(
            out,
            " else if ({SELECTOR} = {}) {{ $ignore := {}({}); }}",
            quote(pid),
            site.components[pid],
            cap_args.join(", ")
        );
    }
    let _ = writeln!(out, " else {{ {CH_ORIG} := true; }}");
    let _ = writeln!(out, "if ({CH_ORIG} = true) {{ {CH_ORIG} := false; skip; }} else {{");
    out.push_str(&generate_replay(&site.scope, site.in_loop));
    out.push_str("}\n");
    out
}

/// Replay code: applies the loaded data writes, then re-raises the control
/// effect (exception, return, continue, break).
pub fn generate_replay(scope: &[String], in_loop: bool) -> String {
    let mut out = String::new();
    for x in scope {
        let (d, n) = (dirty_flag(x), new_value(x));
        let _ = writeln!(out, "  if ({d} = true) {{ {x} := {n}; {d} := false; }}");
    }
    let _ = writeln!(out, "  if ({CH_CTL} = \"exc\") {{ throw {CH_VAL}; }}");
    let _ = writeln!(out, "  if ({CH_CTL} = \"return\") {{ return {CH_VAL}; }}");
    if in_loop {
        let _ = writeln!(out, "  if ({CH_CTL} = \"continue\") {{ continue; }}");
        let _ = writeln!(out, "  if ({CH_CTL} = \"break\") {{ break; }}");
    }
    out
}

/// Capture component for `stmt` at `loc`: the `$cap_` method and its `$ret_` wrapper.
pub fn generate_capture(patch_id: &str, loc: &Location, stmt: &Stmt, params: &[String], scope: &[String], in_loop: bool) -> String {
    let h = loc_hash(loc);
    let mut out = String::new();
    emit_components(&mut out, &format!("$cap_{patch_id}_{h}"), &format!("$ret_{patch_id}_{h}"), params, scope, stmt, in_loop);
    out
}

fn declared_scope(base: &Program, stmt: &Stmt, config: &InterceptConfig, into: &mut BTreeSet<String>) {
    let scope = analyze_change_scope(base, stmt, config.scope());
    // Undeclared targets are compile errors of the patch itself; leaving them
    // out keeps the dispatch site (base code) free of them.
    into.extend(scope.vars.into_iter().filter(|v| base.global(v).is_some()));
}

/// Weaves `patches` (all dedup-eligible) into one program. Does not check it.
pub fn weave(base: &Program, patches: &[&PreparedPatch], config: &InterceptConfig) -> Result<MetaProgram, WeaveError> {
    if config.simulate_weave_bug {
        panic!("simulated weaving bug");
    }
    let mut by_loc: BTreeMap<Location, Vec<(&str, &Stmt)>> = BTreeMap::new();
    for p in patches {
        for (loc, stmt) in &p.stmts {
            by_loc.entry(loc.clone()).or_default().push((p.id.as_str(), stmt));
        }
    }
    let locs: Vec<&Location> = by_loc.keys().collect();
    for (i, a) in locs.iter().enumerate() {
        for b in &locs[i + 1..] {
            if a.is_within(b) || b.is_within(a) {
                return Err(WeaveError::Nested((*a).clone(), (*b).clone()));
            }
        }
    }
    let site_methods: BTreeSet<&str> = by_loc.keys().map(|l| l.method.as_str()).collect();

    let mut meta = MetaProgram {
        woven: base.clone(),
        sites: BTreeMap::new(),
        patch_component_index: BTreeMap::new(),
        component_owner: BTreeMap::new(),
        patches: patches.iter().map(|p| p.id.clone()).collect(),
        uncompilable: BTreeMap::new(),
        compile_rounds: 0,
    };
    let mut gen = String::new();
    let mut all_vars = BTreeSet::new();
    let mut hashes = BTreeSet::new();
    let mut originals = Vec::new();

    for (loc, edits) in &by_loc {
        let original = base.resolve(loc).expect("patched locations resolve in the base program");
        let mut scope = BTreeSet::new();
        declared_scope(base, original, config, &mut scope);
        for (_, stmt) in edits {
            declared_scope(base, stmt, config, &mut scope);
        }
        let mut h = loc_hash(loc);
        if !hashes.insert(h.clone()) {
            let mut n = 1;
            while !hashes.insert(format!("{h}_{n}")) {
                n += 1;
            }
            h = format!("{h}_{n}");
        }
        let params = base.method(&loc.method).map(|m| m.params.clone()).unwrap_or_default();
        let in_loop = base.in_loop(loc);
        let scope: Vec<String> = scope.into_iter().collect();
        all_vars.extend(scope.iter().cloned());

        let (ocap, oret) = (format!("$corig_{h}"), format!("$rorig_{h}"));
        emit_components(&mut gen, &ocap, &oret, &params, &scope, original, in_loop);
        meta.component_owner.insert(ocap.clone(), ORIGINAL_OWNER.into());
        meta.component_owner.insert(oret, ORIGINAL_OWNER.into());

        let mut components = BTreeMap::new();
        for (pid, stmt) in edits {
            let (cap, ret) = (format!("$cap_{pid}_{h}"), format!("$ret_{pid}_{h}"));
            emit_components(&mut gen, &cap, &ret, &params, &scope, stmt, in_loop);
            meta.component_owner.insert(cap.clone(), pid.to_string());
            meta.component_owner.insert(ret, pid.to_string());
            meta.patch_component_index.insert((pid.to_string(), loc.clone()), cap.clone());
            components.insert(pid.to_string(), cap);
        }
        let reaches = reachable_methods(base, original);
        let site = Site {
            loc: loc.clone(),
            params,
            scope,
            in_loop,
            patches: edits.iter().map(|(p, _)| p.to_string()).collect(),
            components,
            original_component: ocap,
            original_reaches_sites: reaches.iter().any(|m| site_methods.contains(m.as_str())),
        };
        originals.push(original.clone());
        meta.sites.insert(loc.to_string(), site);
    }

    let mut decls = format!(
        "var {SELECTOR} := {}; var {CH_ORIG} := false; var {CH_CTL} := \"normal\"; var {CH_VAL} := 0;\n",
        quote(SEL_ORIGINAL)
    );
    for x in &all_vars {
        let _ = writeln!(decls, "var {} := false; var {} := 0;", dirty_flag(x), new_value(x));
    }
    decls.push_str(&gen);
    let generated = parse_program(&decls, INSTRUMENT_GROUP, ParseMode::Instrumented).map_err(WeaveError::Generated)?;
    for g in &generated.globals {
        meta.woven.add_global(g.name.clone(), g.init.clone()).expect("instrumentation globals are fresh");
    }
    for m in generated.methods() {
        meta.woven.add_method(m.clone()).expect("component names are fresh");
    }

    for (site, original) in meta.sites.values().zip(originals) {
        let src = dispatch_source(site);
        let mut stmts =
            parse_stmts(&src, &site.loc.method, ParseMode::Instrumented).map_err(WeaveError::Generated)?;
        if let StmtKind::If { then_branch, .. } = &mut stmts[1].kind {
            then_branch[1] = original;
        }
        let mut block = Stmt::new(StmtKind::Block(stmts));
        block.relocate(site.loc.clone());
        *meta.woven.resolve_mut(&site.loc).expect("site resolves") = block;
    }
    Ok(meta)
}

/// Weaves and checks in at most two rounds. Round one attributes every
/// diagnostic to the patch owning the method it occurs in; round two re-weaves
/// without those patches and must be clean.
pub fn compile_meta(base: &Program, patches: &[&PreparedPatch], config: &InterceptConfig) -> Result<MetaProgram, WeaveError> {
    let meta = weave(base, patches, config)?;
    let diags = static_check(&meta.woven);
    if diags.is_empty() {
        return Ok(MetaProgram { compile_rounds: 1, ..meta });
    }
    let mut bad: BTreeMap<String, Vec<Diagnostic>> = BTreeMap::new();
    let mut foreign = Vec::new();
    for d in diags {
        match meta.component_owner.get(&d.isolation_unit) {
            Some(owner) if owner != ORIGINAL_OWNER => bad.entry(owner.clone()).or_default().push(d),
            _ => foreign.push(d),
        }
    }
    if !foreign.is_empty() {
        return Err(WeaveError::BaseDiagnostics(foreign));
    }
    let remaining: Vec<&PreparedPatch> = patches.iter().copied().filter(|p| !bad.contains_key(&p.id)).collect();
    let mut second = weave(base, &remaining, config)?;
    let diags = static_check(&second.woven);
    if !diags.is_empty() {
        return Err(WeaveError::SecondRound(diags));
    }
    second.compile_rounds = 2;
    second.uncompilable = bad;
    Ok(second)
}
