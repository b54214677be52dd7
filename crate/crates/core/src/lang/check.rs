use std::collections::BTreeSet;

use super::ast::{Expr, Method, Program, Stmt, StmtKind, IGNORE_VAR};
use super::diag::{DiagKind, Diagnostic, Position};

/// Checks every method of `program`. The result is empty iff the program compiles.
pub fn static_check(program: &Program) -> Vec<Diagnostic> {
    program.methods().iter().flat_map(|m| check_method(program, m)).collect()
}

/// Checks one method (one isolation unit). Diagnostics never mention other methods.
pub fn check_method(program: &Program, method: &Method) -> Vec<Diagnostic> {
    let mut cx = MethodCx {
        program,
        method,
        params: method.params.iter().map(String::as_str).collect(),
        diags: Vec::new(),
    };
    cx.block(&method.body, 0);
    cx.diags
}

struct MethodCx<'a> {
    program: &'a Program,
    method: &'a Method,
    params: BTreeSet<&'a str>,
    diags: Vec<Diagnostic>,
}

impl<'a> MethodCx<'a> {
    fn report(&mut self, stmt: &Stmt, kind: DiagKind, message: String) {
        self.diags.push(Diagnostic {
            isolation_unit: self.method.name.clone(),
            kind,
            position: Position::Location(stmt.loc.clone()),
            message,
        });
    }

    fn declared(&self, name: &str) -> bool {
        self.params.contains(name) || self.program.global(name).is_some()
    }

    fn target(&mut self, stmt: &Stmt, name: &str) {
        if name != IGNORE_VAR && !self.declared(name) {
            self.report(stmt, DiagKind::UndeclaredVariable, format!("assignment to undeclared variable `{name}`"));
        }
    }

    fn expr(&mut self, stmt: &Stmt, e: &Expr) {
        let mut missing = Vec::new();
        e.for_each_var(&mut |v| {
            if !self.declared(v) {
                missing.push(v.to_string());
            }
        });
        for v in missing {
            self.report(stmt, DiagKind::UndeclaredVariable, format!("use of undeclared variable `{v}`"));
        }
    }

    fn block(&mut self, stmts: &[Stmt], loops: usize) {
        for s in stmts {
            self.stmt(s, loops);
        }
    }

    fn stmt(&mut self, s: &Stmt, loops: usize) {
        match &s.kind {
            StmtKind::Block(b) => self.block(b, loops),
            StmtKind::Assign { target, value } => {
                self.expr(s, value);
                self.target(s, target);
            }
            StmtKind::Call { target, method, args } => {
                for a in args {
                    self.expr(s, a);
                }
                self.target(s, target);
                match self.program.method(method) {
                    None => self.report(s, DiagKind::UndefinedMethod, format!("call to undefined method `{method}`")),
                    Some(callee) if callee.params.len() != args.len() => self.report(
                        s,
                        DiagKind::ArityMismatch,
                        format!("`{method}` takes {} argument(s) but {} were supplied", callee.params.len(), args.len()),
                    ),
                    Some(_) => {}
                }
            }
            StmtKind::If { cond, then_branch, else_branch } => {
                self.expr(s, cond);
                self.block(then_branch, loops);
                self.block(else_branch, loops);
            }
            StmtKind::While { cond, body } => {
                self.expr(s, cond);
                self.block(body, loops + 1);
            }
            StmtKind::Try { body, var, handler } => {
                self.block(body, loops);
                self.target(s, var);
                self.block(handler, loops);
            }
            StmtKind::Break if loops == 0 => {
                self.report(s, DiagKind::BreakOutsideLoop, "`break` outside of a loop".into());
            }
            StmtKind::Continue if loops == 0 => {
                self.report(s, DiagKind::ContinueOutsideLoop, "`continue` outside of a loop".into());
            }
            StmtKind::Return(e) | StmtKind::Throw(e) => self.expr(s, e),
            StmtKind::Intercept { args, .. } => {
                for a in args {
                    self.expr(s, a);
                }
            }
            StmtKind::Break | StmtKind::Continue | StmtKind::Skip => {}
        }
    }
}
