use std::fmt::Write;

use super::ast::{BinOp, Expr, Method, Program, Stmt, StmtKind, UnOp, IGNORE_VAR};
use super::value::Value;

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Or, ..) => 1,
        Expr::Binary(BinOp::And, ..) => 2,
        Expr::Unary(UnOp::Not, _) => 3,
        Expr::Binary(BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le, ..) => 4,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 5,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 6,
        Expr::Unary(UnOp::Neg, _) => 7,
        Expr::Int(i) if *i < 0 => 7,
        _ => 8,
    }
}

fn op_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le => 4,
        BinOp::Add | BinOp::Sub => 5,
        BinOp::Mul | BinOp::Div => 6,
    }
}

fn write_at(out: &mut String, e: &Expr, min: u8) {
    if prec(e) < min {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Expr::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Expr::Str(s) => out.push_str(&quote(s)),
        Expr::Var(v) => out.push_str(v),
        Expr::Sentinel => out.push_str("$sentinel"),
        Expr::Nondet(k) => {
            out.push_str("nondet(");
            write_expr(out, k);
            out.push(')');
        }
        Expr::Unary(UnOp::Not, inner) => {
            out.push_str("not ");
            write_at(out, inner, 3);
        }
        Expr::Unary(UnOp::Neg, inner) => {
            out.push('-');
            // `-5` would re-read as a negative literal, and `--x` is fine but
            // `- -5` must keep the literal intact.
            if matches!(**inner, Expr::Int(i) if i >= 0) {
                out.push('(');
                write_expr(out, inner);
                out.push(')');
            } else {
                write_at(out, inner, 7);
            }
        }
        Expr::Binary(op, l, r) => {
            let p = op_prec(*op);
            let (lmin, rmin) = if p == 4 { (5, 5) } else { (p, p + 1) };
            write_at(out, l, lmin);
            let _ = write!(out, " {} ", op.symbol());
            write_at(out, r, rmin);
        }
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
    out.push(')');
}

fn write_block(out: &mut String, stmts: &[Stmt], level: usize) {
    out.push_str("{\n");
    for s in stmts {
        write_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

pub fn write_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::Block(b) => write_block(out, b, level),
        StmtKind::Assign { target, value } => {
            let _ = write!(out, "{target} := ");
            write_expr(out, value);
            out.push(';');
        }
        StmtKind::Call { target, method, args } => {
            if target != IGNORE_VAR {
                let _ = write!(out, "{target} := ");
            }
            out.push_str(method);
            write_args(out, args);
            out.push(';');
        }
        StmtKind::If { cond, then_branch, else_branch } => {
            out.push_str("if (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, then_branch, level);
            if !else_branch.is_empty() {
                out.push_str(" else ");
                write_block(out, else_branch, level);
            }
        }
        StmtKind::While { cond, body } => {
            out.push_str("while (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, body, level);
        }
        StmtKind::Try { body, var, handler } => {
            out.push_str("try ");
            write_block(out, body, level);
            let _ = write!(out, " catch ({var}) ");
            write_block(out, handler, level);
        }
        StmtKind::Break => out.push_str("break;"),
        StmtKind::Continue => out.push_str("continue;"),
        StmtKind::Return(e) => {
            out.push_str("return ");
            write_expr(out, e);
            out.push(';');
        }
        StmtKind::Throw(e) => {
            out.push_str("throw ");
            write_expr(out, e);
            out.push(';');
        }
        StmtKind::Skip => out.push_str("skip;"),
        StmtKind::Intercept { site, args } => {
            let _ = write!(out, "$intercept {} ", quote(site));
            write_args(out, args);
            out.push(';');
        }
    }
    out.push('\n');
}

pub fn stmt_to_string(s: &Stmt) -> String {
    let mut out = String::new();
    write_stmt(&mut out, s, 0);
    out
}

pub fn stmts_to_string(stmts: &[Stmt], level: usize) -> String {
    let mut out = String::new();
    for s in stmts {
        write_stmt(&mut out, s, level);
    }
    out
}

/// One-line rendering, for listings and reports.
pub fn stmt_summary(s: &Stmt) -> String {
    stmt_to_string(s).split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn literal(v: &Value) -> String {
    v.to_string()
}

pub fn method_to_string(m: &Method) -> String {
    let mut out = format!("def {}({}) ", m.name, m.params.join(", "));
    write_block(&mut out, &m.body, 0);
    out.push('\n');
    out
}

pub fn program_to_string(p: &Program) -> String {
    let mut out = String::new();
    for g in &p.globals {
        let _ = writeln!(out, "var {} := {};", g.name, literal(&g.init));
    }
    for m in p.methods() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&method_to_string(m));
    }
    out
}
