use super::*;
use crate::lang::{parse, parse_stmts, ParseMode, Value};

fn run(src: &str) -> TestOutcome {
    let p = parse(src).unwrap();
    run_test(&p, "test", 100_000, EngineConfig::default())
}

fn exec_in(globals: &str, stmt: &str) -> (Control, DataState) {
    let p = parse(globals).unwrap();
    let stmts = parse_stmts(stmt, "m", ParseMode::User).unwrap();
    let mut e = Engine::new(&p, EngineConfig::default());
    e.reset(100_000, 0);
    e.push_frame(vec![]);
    let c = e.exec_block(&stmts, &mut NoHook).unwrap();
    (c, e.snapshot())
}

fn eval_in(globals: &str, expr: &str) -> Result<Value, Value> {
    let p = parse(globals).unwrap();
    let e = crate::lang::parse_expr(expr, ParseMode::User).unwrap();
    let mut engine = Engine::new(&p, EngineConfig::default());
    engine.reset(1000, 0);
    engine.eval(&e).map_err(|r| r.unwrap())
}

#[test]
fn eval_examples() {
    assert_eq!(eval_in("var i := 2; var j := 1;", "j + 3"), Ok(Value::Int(4)));
    assert_eq!(eval_in("var x := 5;", "x / 0"), Err(Value::str("div-by-zero")));
    assert_eq!(eval_in("", "1 = 1 and not (2 < 1)"), Ok(Value::Bool(true)));
}

#[test]
fn eval_wraps_and_type_errors() {
    assert_eq!(eval_in("", "9223372036854775807 + 1"), Ok(Value::Int(i64::MIN)));
    assert_eq!(eval_in("", "-9223372036854775808 / -1"), Ok(Value::Int(i64::MIN)));
    assert_eq!(eval_in("", "1 + true"), Err(Value::str("type-error")));
    assert_eq!(eval_in("", "\"a\" = \"a\""), Ok(Value::Bool(true)));
    assert_eq!(eval_in("", "false and 1"), Ok(Value::Bool(false)));
}

#[test]
fn eval_charges_one_step_per_node() {
    let p = parse("var i := 2;").unwrap();
    let e = crate::lang::parse_expr("i + 2 * 3", ParseMode::User).unwrap();
    let mut engine = Engine::new(&p, EngineConfig::default());
    engine.reset(1000, 0);
    engine.eval(&e).unwrap();
    assert_eq!(engine.budget().used, 5);
}

#[test]
fn method_body_of_running_example() {
    let (c, s) = exec_in("var i := 2; var j := 1;", "i := i + 2; j := j + 2;");
    assert_eq!(c, Control::Normal);
    assert_eq!(s.globals["i"], Value::Int(4));
    assert_eq!(s.globals["j"], Value::Int(3));
}

#[test]
fn while_break_is_normal() {
    let (c, s) = exec_in("var x := 0;", "while (true) { break; }");
    assert_eq!(c, Control::Normal);
    assert_eq!(s.globals["x"], Value::Int(0));
}

#[test]
fn catch_binds_exception() {
    let (c, s) = exec_in("var x := 0; var e := 0;", "try { throw 7; } catch (e) { x := e; }");
    assert_eq!(c, Control::Normal);
    assert_eq!(s.globals["x"], Value::Int(7));
}

#[test]
fn abnormal_states_short_circuit_sequences() {
    let (c, s) = exec_in("var x := 0;", "x := 1; return 5; x := 2;");
    assert_eq!(c, Control::Return(Value::Int(5)));
    assert_eq!(s.globals["x"], Value::Int(1));
    let (c, _) = exec_in("var x := 0;", "while (x < 3) { x := x + 1; if (x = 2) { throw x; } }");
    assert_eq!(c, Control::Exception(Value::Int(2)));
    let (c, s) = exec_in("var x := 0; var n := 0;", "while (x < 5) { x := x + 1; if (x < 3) { continue; } n := n + 1; }");
    assert_eq!(c, Control::Normal);
    assert_eq!(s.globals["n"], Value::Int(3));
}

#[test]
fn run_test_examples() {
    const EX: &str = "var i := 2; var j := 1; def f() { i := i + 2; j := j + 2; } \
        def test() { f(); assert(i = 4 and j = 2); f(); assert(i = 6 and j = 4); }";
    assert_eq!(run(EX).result, TestResult::Exception(Value::str("assertion failed")));
    let patched = EX.replace("j := j + 2;", "j := j * 2;");
    assert!(run(&patched).passed());
    let p = parse("def test() { skip; }").unwrap();
    assert!(run_test(&p, "test", 2, EngineConfig::default()).passed());
}

#[test]
fn calls_return_unit_and_values() {
    let o = run("var x := 0; def g(a) { return a * 2; } def h() { skip; } \
        def test() { x := g(4); assert(x = 8); x := h(); assert(x = unit_is_not_a_literal); }");
    // `unit_is_not_a_literal` is undeclared, so the unchecked run raises.
    assert!(matches!(o.result, TestResult::Exception(_)));
    let o = run("var x := 0; def g(a) { return a * 2; } def h() { skip; } def test() { x := g(4); assert(x = 8); x := h(); }");
    assert!(o.passed());
}

#[test]
fn exceptions_propagate_through_calls() {
    let o = run("var x := 0; def g() { throw \"boom\"; } def test() { try { g(); } catch (x) { skip; } assert(x = \"boom\"); g(); }");
    assert_eq!(o.result, TestResult::Exception(Value::str("boom")));
}

#[test]
fn timeout_when_budget_runs_out() {
    let p = parse("def test() { while (true) { skip; } }").unwrap();
    let o = run_test(&p, "test", 500, EngineConfig::default());
    assert_eq!(o.result, TestResult::Timeout);
    assert_eq!(o.steps, 500);
}

#[test]
fn deep_recursion_overflows_into_exception() {
    let src = "var n := 0; def r() { n := n + 1; r(); } def test() { r(); }";
    let p = parse(src).unwrap();
    let o = run_test(&p, "test", 10_000_000, EngineConfig::default());
    assert_eq!(o.result, TestResult::Exception(Value::str("stack-overflow")));
    let src = "var n := 0; var e := 0; def r() { n := n + 1; r(); } def test() { try { r(); } catch (e) { skip; } assert(n = 9999); }";
    let p = parse(src).unwrap();
    let o = run_test(&p, "test", 10_000_000, EngineConfig::default());
    assert!(o.passed(), "{o:?}");
}

#[test]
fn nondet_is_seeded() {
    let p = parse("var x := 0; def test() { x := nondet(1); }").unwrap();
    let mut e = Engine::new(&p, EngineConfig::default());
    e.reset(100, 3);
    e.run_entry("test", &mut NoHook).unwrap();
    assert_eq!(e.global("x"), Some(&Value::Int(0)));

    let draws = |seed: u64| {
        let p = parse("var x := 0; def test() { x := nondet(1000); }").unwrap();
        let mut e = Engine::new(&p, EngineConfig::default());
        let mut out = Vec::new();
        e.reset(u64::MAX, seed);
        for _ in 0..100 {
            let k = crate::lang::parse_expr("nondet(1000)", ParseMode::User).unwrap();
            out.push(e.eval(&k).unwrap());
        }
        out
    };
    assert_eq!(draws(7), draws(7));
    assert_ne!(draws(7), draws(8));
    assert!(draws(7).iter().all(|v| matches!(v, Value::Int(i) if (0..1000).contains(i))));
    assert_eq!(eval_in("", "nondet(0)"), Err(Value::str("nondet-bound")));
}

#[test]
fn budget_formula() {
    assert_eq!(test_budget(5000, 1.5, 0), 5000);
    assert_eq!(test_budget(5000, 1.5, 3), 5005);
    assert_eq!(test_budget(5000, 0.0, 1000), 5000);
}

#[test]
fn tracer_records_top_level_changes() {
    let p = parse("var i := 2; var j := 1; def f() { i := i + 2; j := j + 2; } def test() { f(); f(); }").unwrap();
    let mut e = Engine::new(&p, EngineConfig::default());
    e.reset(10_000, 0);
    e.trace_changes(["f:1".parse().unwrap()]);
    e.run_entry("test", &mut NoHook).unwrap();
    let t = e.take_trace();
    assert_eq!(t.len(), 2);
    assert_eq!(t[0].writes, vec![("j".to_string(), Value::Int(3))]);
    assert_eq!(t[1].writes, vec![("j".to_string(), Value::Int(5))]);
    assert_eq!(t[0].control, Some(Control::Normal));
}
