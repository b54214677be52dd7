//! The IMP+ language: syntax tree, concrete syntax, printer and static checker.

mod ast;
mod check;
mod diag;
pub mod lexer;
mod parser;
mod printer;
mod value;

use thiserror::Error;

pub use ast::{
    is_reserved, relocate_block, BinOp, Expr, Global, Location, Method, Program, Stmt, StmtKind, UnOp, IGNORE_VAR,
    RESERVED_PREFIX,
};
pub use check::{check_method, static_check};
pub use diag::{DiagKind, Diagnostic, Position, TOPLEVEL_UNIT};
pub use parser::{
    desugar_assert, parse, parse_expr, parse_method, parse_program, parse_sources, parse_stmts, ParseMode,
    ASSERTION_FAILED,
};
pub use printer::{expr_to_string, method_to_string, program_to_string, quote, stmt_summary, stmt_to_string, stmts_to_string};
pub use value::{Value, ValueKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("location `{0}` does not exist")]
    NotFound(String),
    #[error("malformed location `{0}` (expected `<method>:<i0>.<i1>...`)")]
    BadLocation(String),
    #[error("duplicate definition of {0}")]
    Duplicate(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RUNNING_EXAMPLE: &str = "var i := 2; var j := 1; \
        def f() { i := i + 2; j := j + 2; } \
        def test() { f(); assert(i = 4 and j = 2); f(); assert(i = 6 and j = 4); }";

    #[test]
    fn single_statement_program() {
        let p = parse("var x := 1; def t() { x := x + 1; }").unwrap();
        assert_eq!(p.globals, vec![Global { name: "x".into(), init: Value::Int(1) }]);
        assert_eq!(p.methods().len(), 1);
        let s = p.resolve(&"t:0".parse().unwrap()).unwrap();
        assert_eq!(
            s.kind,
            StmtKind::Assign { target: "x".into(), value: Expr::binary(BinOp::Add, Expr::var("x"), Expr::Int(1)) }
        );
    }

    #[test]
    fn running_example_structure() {
        let p = parse(RUNNING_EXAMPLE).unwrap();
        let names: Vec<_> = p.globals.iter().map(|g| (g.name.as_str(), g.init.clone())).collect();
        assert_eq!(names, vec![("i", Value::Int(2)), ("j", Value::Int(1))]);
        assert!(p.method("f").is_some() && p.method("test").is_some());
        assert_eq!(p.test_entries(), vec!["test"]);
        assert!(static_check(&p).is_empty());
        let s1 = p.resolve(&"f:0".parse().unwrap()).unwrap();
        assert_eq!(stmt_summary(s1), "i := i + 2;");
        assert!(matches!(p.resolve(&"f:9".parse().unwrap()), Err(LangError::NotFound(_))));
    }

    #[test]
    fn missing_expression_is_a_syntax_error() {
        let err = parse("def t() { x := ; }").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].kind, DiagKind::SyntaxError);
        assert_eq!(err[0].isolation_unit, "t");
        assert_eq!(err[0].position, Position::Source { line: 1, col: 16 });
    }

    #[test]
    fn reserved_prefix_is_rejected_in_user_code() {
        let err = parse("var $x := 1;").unwrap_err();
        assert_eq!(err[0].kind, DiagKind::ReservedIdentifier);
        let err = parse("def t() { $y := 1; }").unwrap_err();
        assert_eq!(err[0].kind, DiagKind::ReservedIdentifier);
        assert!(parse_program("var $x := 1;", "g", ParseMode::Instrumented).is_ok());
    }

    #[test]
    fn syntax_errors_are_recovered_per_method() {
        let src = "var x := 0; def a() { x := (1; } def b() { x := ; } def c() { x := 2; }";
        let err = parse(src).unwrap_err();
        let units: Vec<_> = err.iter().map(|d| d.isolation_unit.as_str()).collect();
        assert_eq!(units, vec!["a", "b"]);
    }

    #[test]
    fn assert_desugars_to_conditional_throw() {
        let p = parse("var x := 0; def t() { assert(x = 0); }").unwrap();
        let s = p.resolve(&"t:0".parse().unwrap()).unwrap();
        let mut expected = Stmt::new(desugar_assert(Expr::binary(BinOp::Eq, Expr::var("x"), Expr::Int(0))));
        expected.relocate("t:0".parse().unwrap());
        assert_eq!(s, &expected);
        assert!(p.resolve(&"t:0.0.0".parse().unwrap()).is_ok());
        assert!(matches!(p.resolve(&"t:0.1.0".parse().unwrap()).unwrap().kind, StmtKind::Skip));
    }

    #[test]
    fn call_sugar_uses_ignore_target() {
        let p = parse("def g() { skip; } def t() { g(); }").unwrap();
        let s = p.resolve(&"t:0".parse().unwrap()).unwrap();
        assert_eq!(s.kind, StmtKind::Call { target: IGNORE_VAR.into(), method: "g".into(), args: vec![] });
        assert_eq!(stmt_summary(s), "g();");
    }

    #[test]
    fn calls_inside_expressions_are_rejected() {
        let err = parse("var x := 0; def g() { return 1; } def t() { x := g() + 1; }").unwrap_err();
        assert_eq!(err[0].kind, DiagKind::SyntaxError);
    }

    #[test]
    fn negative_literals_and_extremes() {
        let e = parse_expr("-9223372036854775808", ParseMode::User).unwrap();
        assert_eq!(e, Expr::Int(i64::MIN));
        assert!(parse_expr("9223372036854775808", ParseMode::User).is_err());
        let e = parse_expr("-(5)", ParseMode::User).unwrap();
        assert_eq!(e, Expr::unary(UnOp::Neg, Expr::Int(5)));
        assert_eq!(expr_to_string(&e), "-(5)");
        assert_eq!(expr_to_string(&parse_expr("a - -5 * 2", ParseMode::User).unwrap()), "a - -5 * 2");
    }

    #[test]
    fn precedence_round_trips() {
        for src in ["1 = 1 and not (2 < 1)", "(a + b) * c", "a - (b - c)", "not a or b and c", "(a = b) = c"] {
            let e = parse_expr(src, ParseMode::User).unwrap();
            let printed = expr_to_string(&e);
            assert_eq!(parse_expr(&printed, ParseMode::User).unwrap(), e, "{src} -> {printed}");
        }
        assert!(parse_expr("a = b = c", ParseMode::User).is_err());
    }

    #[test]
    fn location_strings_round_trip() {
        for s in ["f:0", "test:3.1.0", "m:10.0.2.1.7"] {
            let loc: Location = s.parse().unwrap();
            assert_eq!(loc.to_string(), s);
        }
        for bad in ["f", "f:", ":0", "f:a", "f:1..2"] {
            assert!(bad.parse::<Location>().is_err(), "{bad}");
        }
    }

    #[test]
    fn static_check_reports_undeclared_variable() {
        let p = parse("var x := 0; def t() { q := 1; }").unwrap();
        let d = static_check(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].isolation_unit, "t");
        assert_eq!(d[0].kind, DiagKind::UndeclaredVariable);
    }

    #[test]
    fn static_check_diagnostics_stay_in_their_method() {
        let p = parse("var x := 0; def a() { y := nope(1); break; } def b(n) { x := n; while (true) { continue; } }")
            .unwrap();
        let d = static_check(&p);
        assert!(!d.is_empty());
        assert!(d.iter().all(|d| d.isolation_unit == "a"));
        let kinds: Vec<_> = d.iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagKind::UndeclaredVariable));
        assert!(kinds.contains(&DiagKind::UndefinedMethod));
        assert!(kinds.contains(&DiagKind::BreakOutsideLoop));
    }

    #[test]
    fn static_check_arity() {
        let p = parse("var x := 0; def g(a, b) { return a; } def t() { x := g(1); }").unwrap();
        let d = static_check(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagKind::ArityMismatch);
    }

    #[test]
    fn in_loop_tracks_enclosing_while() {
        let p = parse("var x := 0; def t() { x := 1; while (true) { if (x = 1) { break; } } }").unwrap();
        assert!(!p.in_loop(&"t:0".parse().unwrap()));
        assert!(!p.in_loop(&"t:1".parse().unwrap()));
        assert!(p.in_loop(&"t:1.0.0".parse().unwrap()));
        assert!(p.in_loop(&"t:1.0.0.0.0".parse().unwrap()));
    }

    #[test]
    fn duplicate_definitions_are_reported() {
        let err = parse("var x := 0; var x := 1; def f() { skip; } def f() { skip; }").unwrap_err();
        assert_eq!(err.len(), 2);
        assert!(err.iter().all(|d| d.kind == DiagKind::DuplicateDefinition));
    }
}
