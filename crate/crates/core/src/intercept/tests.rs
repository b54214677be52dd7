use std::collections::BTreeSet;

use super::*;
use crate::exec::{run_test, Control, DataState, EngineConfig, TestOutcome};
use crate::lang::{parse, parse_stmts, Location, ParseMode, Program, Stmt, ValueKind};
use crate::patch::{apply_patch, prepare_patch, Patch, PreparedPatch};
use proptest::prelude::*;

const EX: &str = "var i := 2; var j := 1; def f() { i := i + 2; j := j + 2; } \
    def test() { f(); assert(i = 4 and j = 2); f(); assert(i = 6 and j = 4); }";

fn running_patches() -> Vec<Patch> {
    vec![
        Patch::stmt("P1", "f:0", "i := i * 2;"),
        Patch::stmt("P2", "f:0", "i := j + 3;"),
        Patch::stmt("P3", "f:1", "j := j * 2;"),
        Patch::stmt("P4", "f:1", "j := i - 2;"),
        Patch::stmt("P5", "f:1", "j := 2;"),
    ]
}

fn prepared(base: &Program, patches: &[Patch]) -> Vec<PreparedPatch> {
    patches.iter().map(|p| prepare_patch(base, p).unwrap()).collect()
}

fn stmt(src: &str) -> Stmt {
    let mut s = parse_stmts(src, "m", ParseMode::User).unwrap();
    s.pop().unwrap()
}

fn vars(v: &[&str]) -> BTreeSet<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn scope_of_single_assignment() {
    let p = parse(EX).unwrap();
    let s = analyze_change_scope(&p, &stmt("j := i - 2;"), ScopeConfig::default());
    assert_eq!(s.vars, vars(&["j"]));
    assert!(!s.calls_impure && !s.oversized);
}

#[test]
fn scope_follows_callees() {
    let p = parse("var x := 0; var z := 0; def g() { z := 1; }").unwrap();
    let s = analyze_change_scope(&p, &stmt("x := g();"), ScopeConfig::default());
    assert_eq!(s.vars, vars(&["x", "z"]));
    assert!(s.calls_impure);
}

#[test]
fn scope_fixed_point_on_recursive_calls() {
    // Hand-computed: stmt target {r} plus m1's {a} plus m2's {b}; `n` is a parameter.
    let p = parse("var a := 0; var b := 0; var r := 0; def m1(n) { a := n; n := 0; r := m2(n); } def m2(n) { b := n; r := m1(n); }")
        .unwrap();
    let s = analyze_change_scope(&p, &stmt("r := m1(1);"), ScopeConfig::default());
    assert_eq!(s.vars, vars(&["a", "b", "r"]));
}

#[test]
fn unknown_callee_is_impure() {
    let p = parse("var x := 0;").unwrap();
    let s = analyze_change_scope(&p, &stmt("x := nope();"), ScopeConfig::default());
    assert!(s.calls_impure && s.oversized);
    let s = analyze_change_scope(&p, &stmt("x := nope();"), ScopeConfig { max_vars: 8, impure_bypass: false });
    assert!(s.calls_impure && !s.oversized);
}

#[test]
fn purity_examples() {
    let p = parse("var i := 0; var x := 0; def pure1(x) { return x + 1; } def f() { i := i + 2; } def g() { f(); } def h(a) { a := a + 1; return a; }")
        .unwrap();
    assert!(purity(&p, "pure1"));
    assert!(!purity(&p, "f"));
    assert!(!purity(&p, "g"));
    assert!(purity(&p, "h"));
}

#[test]
fn bypass_examples() {
    let base = parse(&format!(
        "{EX} var a := 0; var b := 0; var c := 0; var d := 0; var e := 0; var g := 0; var h := 0; var k := 0; def helper() {{ i := 0; }}"
    ))
    .unwrap();
    let cfg = InterceptConfig::default();
    let p4 = prepare_patch(&base, &Patch::stmt("P4", "f:1", "j := i - 2;")).unwrap();
    assert_eq!(bypass_dedup(&base, &p4, &cfg), None);
    let imp = prepare_patch(&base, &Patch::stmt("I", "f:1", "helper();")).unwrap();
    assert_eq!(bypass_dedup(&base, &imp, &cfg), Some(BypassReason::ImpureCall));
    let nine = prepare_patch(
        &base,
        &Patch::stmt("N", "f:1", "a := 1; b := 1; c := 1; d := 1; e := 1; g := 1; h := 1; k := 1; j := 1;"),
    )
    .unwrap();
    assert_eq!(bypass_dedup(&base, &nine, &cfg), Some(BypassReason::ScopeTooLarge { vars: 9, limit: 8 }));
    let glob = prepare_patch(&base, &Patch::stmt("G", "global:i", "var i := 5;")).unwrap();
    assert!(matches!(bypass_dedup(&base, &glob, &cfg), Some(BypassReason::PatchLimitation { .. })));
    let restricted = InterceptConfig { allowed_kinds: [ValueKind::Bool].into(), ..cfg.clone() };
    assert!(matches!(bypass_dedup(&base, &p4, &restricted), Some(BypassReason::DisallowedKind { .. })));
}

#[test]
fn partition_routes_parameter_writes_and_nesting() {
    let base = parse("var x := 0; def m(n) { n := n + 1; x := n; if (x = 1) { x := 2; } } def test() { m(0); }").unwrap();
    let ps = prepared(
        &base,
        &[
            Patch::stmt("A", "m:0", "x := 5;"),
            Patch::stmt("B", "m:1", "x := n * 2;"),
            Patch::stmt("C", "m:2", "skip;"),
            Patch::stmt("D", "m:2.0.0", "x := 3;"),
        ],
    );
    let (eligible, bypassed) = partition(&base, &ps, &InterceptConfig::default());
    let ids: Vec<_> = eligible.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, vec!["B"]);
    let reasons: Vec<_> = bypassed.iter().map(|(p, r)| (p.id.as_str(), r.clone())).collect();
    assert!(matches!(reasons[0], ("A", BypassReason::ParameterWrite { .. })));
    assert!(matches!(reasons[1], ("C", BypassReason::NestedLocation { .. })));
    assert!(matches!(reasons[2], ("D", BypassReason::NestedLocation { .. })));
}

#[test]
fn weave_running_example() {
    let base = parse(EX).unwrap();
    let ps = prepared(&base, &running_patches());
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    assert_eq!(meta.compile_rounds, 1);
    assert!(meta.uncompilable.is_empty());
    let caps: Vec<_> = meta.woven.methods().iter().filter(|m| m.name.starts_with("$cap_")).collect();
    assert_eq!(caps.len(), 5);
    assert_eq!(meta.sites.keys().collect::<Vec<_>>(), vec!["f:0", "f:1"]);
    assert_eq!(meta.sites["f:1"].patches, vec!["P3", "P4", "P5"]);
    assert_eq!(meta.patch_component_index[&("P1".to_string(), "f:0".parse().unwrap())], format!("$cap_P1_{}", loc_hash(&"f:0".parse().unwrap())));
    // Printing and re-reading the woven program gives the same program back.
    let text = crate::lang::program_to_string(&meta.woven);
    let reparsed = crate::lang::parse_program(&text, "x", ParseMode::Instrumented).unwrap();
    assert_eq!(reparsed.methods().len(), meta.woven.methods().len());
}

fn run_selected(meta: &MetaProgram, selector: &str) -> TestOutcome {
    let mut e = crate::exec::Engine::new(&meta.woven, EngineConfig::default());
    e.reset(100_000, 0);
    e.set_global(SELECTOR, crate::lang::Value::str(selector));
    let r = e.run_entry("test", &mut crate::exec::NoHook);
    TestOutcome::from_run(&r, e.budget().used)
}

#[test]
fn selector_reproduces_each_program() {
    let base = parse(EX).unwrap();
    let patches = running_patches();
    let ps = prepared(&base, &patches);
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    let original = run_test(&base, "test", 100_000, EngineConfig::default());
    assert_eq!(run_selected(&meta, SEL_ORIGINAL).result, original.result);
    for p in &patches {
        let direct = run_test(&apply_patch(&base, p).unwrap(), "test", 100_000, EngineConfig::default());
        assert_eq!(run_selected(&meta, &p.id).result, direct.result, "{}", p.id);
    }
}

#[test]
fn identity_weave() {
    let base = parse(EX).unwrap();
    let meta = compile_meta(&base, &[], &InterceptConfig::default()).unwrap();
    assert!(meta.sites.is_empty());
    assert_eq!(meta.woven.methods(), base.methods());
    let original = run_test(&base, "test", 100_000, EngineConfig::default());
    assert_eq!(run_selected(&meta, SEL_ORIGINAL), original);
}

#[test]
fn compile_isolation_flags_only_the_broken_patch() {
    let base = parse(EX).unwrap();
    let patches = vec![
        Patch::stmt("A", "f:0", "i := i * 2;"),
        Patch::stmt("B", "f:1", "j := q;"),
        Patch::stmt("C", "f:1", "j := 2;"),
    ];
    let ps = prepared(&base, &patches);
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    assert_eq!(meta.compile_rounds, 2);
    assert_eq!(meta.uncompilable.keys().collect::<Vec<_>>(), vec!["B"]);
    assert_eq!(meta.patches, vec!["A", "C"]);
    assert!(crate::lang::static_check(&meta.woven).is_empty());
}

#[test]
fn stray_break_in_patch_is_uncompilable() {
    let base = parse(EX).unwrap();
    let ps = prepared(&base, &[Patch::stmt("B", "f:1", "break;")]);
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    assert!(meta.uncompilable.contains_key("B"));
}

/// Executes the statement at `loc` once from `globals`/`params`, either
/// directly on the patched program or through the woven site with the patch selected.
fn step_once(program: &Program, loc: &Location, globals: &[(&str, crate::lang::Value)], params: Vec<(String, crate::lang::Value)>, selector: Option<&str>) -> (Control, DataState, u64) {
    let mut e = crate::exec::Engine::new(program, EngineConfig::default());
    e.reset(1_000_000, 0);
    for (k, v) in globals {
        e.set_global(k, v.clone());
    }
    if let Some(s) = selector {
        e.set_global(SELECTOR, crate::lang::Value::str(s));
    }
    e.push_frame(params);
    let s = program.resolve(loc).unwrap().clone();
    let c = e.exec(&s, &mut crate::exec::NoHook).unwrap();
    (c, e.snapshot().user_view(), e.budget().used)
}

fn capture_only(meta: &MetaProgram, pid: &str, loc: &str, globals: &[(&str, crate::lang::Value)]) -> (CapturedChange, DataState, DataState) {
    let site = &meta.sites[loc];
    let mut e = crate::exec::Engine::new(&meta.woven, EngineConfig::default());
    e.reset(1_000_000, 0);
    for (k, v) in globals {
        e.set_global(k, v.clone());
    }
    e.push_frame(vec![]);
    let before = e.snapshot();
    let args: Vec<_> = site.scope.iter().map(|x| e.global(x).cloned().unwrap()).collect();
    let c = run_capture(&mut e, &site.components[pid], pid, &args, &site.scope).unwrap();
    (c.change, before.user_view(), e.snapshot().user_view())
}

#[test]
fn capture_examples() {
    use crate::lang::Value::Int;
    let base = parse("var i := 2; var j := 1; def m() { while (true) { i := i + 2; } }").unwrap();
    let ps = prepared(
        &base,
        &[Patch::stmt("P1", "m:0.0.0", "i := i * 2;"), Patch::stmt("B", "m:0.0.0", "break;"), Patch::stmt("T", "m:0.0.0", "throw 7;")],
    );
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    let g = [("i", Int(2)), ("j", Int(1))];

    let (c, before, after) = capture_only(&meta, "P1", "m:0.0.0", &g);
    assert_eq!(c, CapturedChange::new(ChangeControl::Normal, vec![("i".into(), Int(4))]));
    assert_eq!(before, after);

    let (c, before, after) = capture_only(&meta, "B", "m:0.0.0", &g);
    assert_eq!(c, CapturedChange::new(ChangeControl::Break, vec![]));
    assert_eq!(before, after);

    let (c, before, after) = capture_only(&meta, "T", "m:0.0.0", &g);
    assert_eq!(c, CapturedChange::new(ChangeControl::Exception(Int(7)), vec![]));
    assert_eq!(before, after);
}

#[test]
fn replay_examples() {
    use crate::lang::Value::Int;
    let base = parse("var i := 2; var j := 1; var n := 0; def m() { while (n < 3) { n := n + 1; i := i + 2; } }").unwrap();
    let ps = prepared(&base, &[Patch::stmt("P1", "m:0.0.1", "i := i * 2;"), Patch::stmt("B", "m:0.0.1", "break;")]);
    let refs: Vec<_> = ps.iter().collect();
    let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
    let site = meta.sites["m:0.0.1"].clone();

    let mut e = crate::exec::Engine::new(&meta.woven, EngineConfig::default());
    e.reset(100_000, 0);
    e.push_frame(vec![]);
    load_change(&mut e, &site.scope, &CapturedChange::new(ChangeControl::Normal, vec![("i".into(), Int(4))]));
    let replay = parse_stmts(&generate_replay(&site.scope, true), "m", ParseMode::Instrumented).unwrap();
    let c = e.exec_block(&replay, &mut crate::exec::NoHook).unwrap();
    assert_eq!(c, Control::Normal);
    assert_eq!(e.global("i"), Some(&Int(4)));
    assert_eq!(e.global("j"), Some(&Int(1)));

    // A replayed break leaves the real loop after one iteration.
    let (c, state, _) = step_once(&meta.woven, &"m:0".parse().unwrap(), &[], vec![], Some("B"));
    assert_eq!(c, Control::Normal);
    assert_eq!(state.globals["n"], Int(1));
    assert_eq!(state.globals["i"], Int(2));
}

#[test]
fn generated_capture_text_parses() {
    let src = generate_capture("P1", &"f:0".parse().unwrap(), &stmt("i := i * 2;"), &[], &["i".into()], false);
    let p = crate::lang::parse_program(&src, "g", ParseMode::Instrumented).unwrap();
    assert_eq!(p.methods().len(), 2);
    assert!(p.methods()[0].name.starts_with("$cap_P1_"));
}

#[test]
fn sentinel_is_unforgeable() {
    assert!(crate::lang::parse_expr("$sentinel", ParseMode::User).is_err());
    assert!(parse("var x := 0; def t() { x := $sentinel; }").is_err());
}

proptest! {
    #[test]
    fn sentinel_differs_from_user_values(i in any::<i64>(), b in any::<bool>(), s in ".*") {
        use crate::lang::Value;
        for v in [Value::Int(i), Value::Bool(b), Value::Str(s.clone()), Value::Unit] {
            prop_assert_ne!(v, Value::Sentinel);
        }
    }

    #[test]
    fn capture_then_replay_matches_direct_execution(x in -5i64..5, y in -5i64..5, which in 0usize..8) {
        use crate::lang::Value::Int;
        let reps = [
            "x := x + y;", "y := x * 2; x := 1;", "if (x < y) { break; } else { x := 0; }", "continue;",
            "return x;", "throw y;", "x := 10 / y;", "try { throw x; } catch (y) { x := y + 1; }",
        ];
        let base = parse("var x := 0; var y := 0; def m(p) { while (true) { x := x + p; } }").unwrap();
        let patch = Patch::stmt("P", "m:0.0.0", reps[which]);
        let patched = apply_patch(&base, &patch).unwrap();
        let ps = prepared(&base, &[patch]);
        let refs: Vec<_> = ps.iter().collect();
        let meta = compile_meta(&base, &refs, &InterceptConfig::default()).unwrap();
        let loc: Location = "m:0.0.0".parse().unwrap();
        let g = [("x", Int(x)), ("y", Int(y))];
        let params = vec![("p".to_string(), Int(3))];
        let direct = step_once(&patched, &loc, &g, params.clone(), None);
        let woven = step_once(&meta.woven, &loc, &g, params, Some("P"));
        prop_assert_eq!(&direct.0, &woven.0);
        prop_assert_eq!(&direct.1, &woven.1);
    }
}
