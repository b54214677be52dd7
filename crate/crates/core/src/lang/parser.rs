//! Recursive-descent parser for the `.imp` concrete syntax.
//!
//! ```text
//! program := (global | method)*
//! global  := "var" ident ":=" literal ";"
//! method  := "def" ident "(" [ident ("," ident)*] ")" block
//! stmt    := ident ":=" expr ";" | ident ":=" ident "(" args ")" ";" | ident "(" args ")" ";"
//!          | "if" "(" expr ")" block ["else" (block | if-stmt)]
//!          | "while" "(" expr ")" block | "try" block "catch" "(" ident ")" block
//!          | "break" ";" | "continue" ";" | "return" expr ";" | "throw" expr ";"
//!          | "assert" "(" expr ")" ";" | "skip" ";" | block
//! ```
//!
//! Errors inside a method body are recovered at the method's closing brace, so
//! one broken method never hides diagnostics (or definitions) of another.

use super::ast::{relocate_block, BinOp, Expr, Global, Location, Method, Program, Stmt, StmtKind, UnOp, IGNORE_VAR};
use super::diag::{DiagKind, Diagnostic, Position, TOPLEVEL_UNIT};
use super::lexer::{tokenize, Kw, Tok, Token};
use super::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    /// User sources: `$`-prefixed names are rejected.
    User,
    /// Generated instrumentation code.
    Instrumented,
}

/// Parses a single-file program whose methods all belong to group `main`.
pub fn parse(source: &str) -> Result<Program, Vec<Diagnostic>> {
    parse_sources(&[("main", source)])
}

/// Parses several source files into one program. Each method's group is the
/// name paired with the file that declares it.
pub fn parse_sources<S: AsRef<str>>(files: &[(S, S)]) -> Result<Program, Vec<Diagnostic>> {
    let mut globals = Vec::new();
    let mut methods = Vec::new();
    let mut diags = Vec::new();
    for (group, text) in files {
        match parse_unit(text.as_ref(), group.as_ref(), ParseMode::User) {
            Ok((g, m)) => {
                globals.extend(g);
                methods.extend(m);
            }
            Err(d) => diags.extend(d),
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    assemble(globals, methods)
}

/// Parses a program unit in the given mode without merging it anywhere.
pub fn parse_program(source: &str, group: &str, mode: ParseMode) -> Result<Program, Vec<Diagnostic>> {
    let (globals, methods) = parse_unit(source, group, mode)?;
    assemble(globals, methods)
}

fn assemble(globals: Vec<Global>, methods: Vec<Method>) -> Result<Program, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut program = Program::default();
    for g in globals {
        if program.add_global(g.name.clone(), g.init).is_err() {
            diags.push(dup(TOPLEVEL_UNIT, &format!("global `{}` is declared twice", g.name)));
        }
    }
    for m in methods {
        let name = m.name.clone();
        if program.add_method(m).is_err() {
            diags.push(dup(&name, &format!("method `{name}` is declared twice")));
        }
    }
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(diags)
    }
}

fn dup(unit: &str, message: &str) -> Diagnostic {
    Diagnostic {
        isolation_unit: unit.to_string(),
        kind: DiagKind::DuplicateDefinition,
        position: Position::Source { line: 0, col: 0 },
        message: message.to_string(),
    }
}

/// Parses a single method definition (used for generated components).
pub fn parse_method(source: &str, group: &str, mode: ParseMode) -> Result<Method, Vec<Diagnostic>> {
    let (globals, mut methods) = parse_unit(source, group, mode)?;
    if !globals.is_empty() || methods.len() != 1 {
        return Err(vec![Diagnostic {
            isolation_unit: TOPLEVEL_UNIT.into(),
            kind: DiagKind::SyntaxError,
            position: Position::Source { line: 1, col: 1 },
            message: "expected exactly one method definition".into(),
        }]);
    }
    Ok(methods.pop().unwrap())
}

/// Parses a statement list (e.g. a patch replacement). Locations are relative
/// to a placeholder method named `unit`; callers relocate the result.
pub fn parse_stmts(source: &str, unit: &str, mode: ParseMode) -> Result<Vec<Stmt>, Vec<Diagnostic>> {
    let tokens = tokenize(source).map_err(|e| vec![syntax(unit, e.line, e.col, e.message)])?;
    let mut p = Parser { tokens, pos: 0, mode, unit: unit.to_string() };
    let mut stmts = Vec::new();
    while p.peek() != &Tok::Eof {
        stmts.push(p.stmt().map_err(|d| vec![d])?);
    }
    relocate_block(&mut stmts, &Location::new(unit, vec![]), None);
    Ok(stmts)
}

/// Parses a standalone expression.
pub fn parse_expr(source: &str, mode: ParseMode) -> Result<Expr, Diagnostic> {
    let tokens = tokenize(source).map_err(|e| syntax(TOPLEVEL_UNIT, e.line, e.col, e.message))?;
    let mut p = Parser { tokens, pos: 0, mode, unit: TOPLEVEL_UNIT.to_string() };
    let e = p.expr()?;
    p.expect(&Tok::Eof, "end of input")?;
    Ok(e)
}

fn syntax(unit: &str, line: u32, col: u32, message: String) -> Diagnostic {
    Diagnostic {
        isolation_unit: unit.to_string(),
        kind: DiagKind::SyntaxError,
        position: Position::Source { line, col },
        message,
    }
}

fn parse_unit(source: &str, group: &str, mode: ParseMode) -> Result<(Vec<Global>, Vec<Method>), Vec<Diagnostic>> {
    let tokens = tokenize(source).map_err(|e| vec![syntax(TOPLEVEL_UNIT, e.line, e.col, e.message)])?;
    let mut p = Parser { tokens, pos: 0, mode, unit: TOPLEVEL_UNIT.to_string() };
    let mut globals = Vec::new();
    let mut methods = Vec::new();
    let mut diags = Vec::new();
    while p.peek() != &Tok::Eof {
        match p.peek() {
            Tok::Kw(Kw::Var) => {
                p.unit = TOPLEVEL_UNIT.to_string();
                match p.global() {
                    Ok(g) => globals.push(g),
                    Err(d) => {
                        diags.push(d);
                        p.skip_to_item();
                    }
                }
            }
            Tok::Kw(Kw::Def) => {
                let start = p.pos;
                match p.method(group) {
                    Ok(m) => methods.push(m),
                    Err(d) => {
                        diags.push(d);
                        p.recover_method(start);
                    }
                }
            }
            _ => {
                let t = p.cur().clone();
                diags.push(syntax(TOPLEVEL_UNIT, t.line, t.col, format!("expected `var` or `def`, found {}", describe(&t.tok))));
                p.pos += 1;
                p.skip_to_item();
            }
        }
    }
    if diags.is_empty() {
        Ok((globals, methods))
    } else {
        Err(diags)
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) | Tok::Reserved(s) => format!("`{s}`"),
        Tok::Int(i) => format!("`{i}`"),
        Tok::Str(_) => "string literal".into(),
        Tok::Kw(k) => format!("`{}`", format!("{k:?}").to_lowercase()),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    mode: ParseMode,
    unit: String,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn cur(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek(&self) -> &Tok {
        &self.cur().tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].tok
    }

    fn advance(&mut self) -> Tok {
        let t = self.cur().tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> Diagnostic {
        let t = self.cur();
        syntax(&self.unit, t.line, t.col, message.into())
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> PResult<()> {
        if self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            Tok::Reserved(s) => {
                if self.mode == ParseMode::Instrumented {
                    self.advance();
                    Ok(s)
                } else {
                    let t = self.cur();
                    Err(Diagnostic {
                        isolation_unit: self.unit.clone(),
                        kind: DiagKind::ReservedIdentifier,
                        position: Position::Source { line: t.line, col: t.col },
                        message: format!("`{s}` uses the reserved `$` prefix"),
                    })
                }
            }
            other => Err(self.error(format!("expected identifier, found {}", describe(&other)))),
        }
    }

    fn skip_to_item(&mut self) {
        let mut depth = 0i32;
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::Kw(Kw::Var) | Tok::Kw(Kw::Def) if depth <= 0 => return,
                Tok::LBrace => depth += 1,
                Tok::RBrace => depth -= 1,
                _ => {}
            }
            self.advance();
        }
    }

    /// Skips from the `def` at `start` past the method's matching `}`.
    fn recover_method(&mut self, start: usize) {
        self.pos = start;
        while !matches!(self.peek(), Tok::LBrace | Tok::Eof) {
            self.advance();
        }
        let mut depth = 0i32;
        loop {
            match self.advance() {
                Tok::Eof => return,
                Tok::LBrace => depth += 1,
                Tok::RBrace => {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                _ => {}
            }
        }
    }

    fn global(&mut self) -> PResult<Global> {
        self.expect(&Tok::Kw(Kw::Var), "`var`")?;
        let name = self.ident()?;
        self.expect(&Tok::Assign, "`:=`")?;
        let init = self.literal()?;
        self.expect(&Tok::Semi, "`;`")?;
        Ok(Global { name, init })
    }

    fn literal(&mut self) -> PResult<Value> {
        let neg = self.eat(&Tok::Minus);
        match self.advance() {
            Tok::Int(v) => Ok(Value::Int(self.fold_int(v, neg)?)),
            Tok::Kw(Kw::True) if !neg => Ok(Value::Bool(true)),
            Tok::Kw(Kw::False) if !neg => Ok(Value::Bool(false)),
            Tok::Str(s) if !neg => Ok(Value::Str(s)),
            other => Err(self.error(format!("expected a literal, found {}", describe(&other)))),
        }
    }

    fn fold_int(&self, v: u64, neg: bool) -> PResult<i64> {
        if neg {
            if v <= i64::MAX as u64 + 1 {
                Ok((v as i128).wrapping_neg() as i64)
            } else {
                Err(self.error("integer literal is too large"))
            }
        } else {
            i64::try_from(v).map_err(|_| self.error("integer literal is too large"))
        }
    }

    fn method(&mut self, group: &str) -> PResult<Method> {
        self.expect(&Tok::Kw(Kw::Def), "`def`")?;
        let name = self.ident()?;
        self.unit = name.clone();
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let p = self.ident()?;
                if params.contains(&p) {
                    return Err(self.error(format!("parameter `{p}` is declared twice")));
                }
                params.push(p);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(&Tok::Comma, "`,` or `)`")?;
            }
        }
        let body = self.block()?;
        self.unit = TOPLEVEL_UNIT.to_string();
        Ok(Method::new(name, params, body, group))
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(&Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.peek() == &Tok::Eof {
                return Err(self.error("unclosed block"));
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(&Tok::Comma, "`,` or `)`")?;
            }
        }
        Ok(args)
    }

    fn semi(&mut self) -> PResult<()> {
        self.expect(&Tok::Semi, "`;`")
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let kind = match self.peek().clone() {
            Tok::Ident(_) | Tok::Reserved(_) => {
                if let Tok::Reserved(r) = self.peek() {
                    if r == "$intercept" && self.mode == ParseMode::Instrumented {
                        self.advance();
                        let site = match self.advance() {
                            Tok::Str(s) => s,
                            other => return Err(self.error(format!("expected site string, found {}", describe(&other)))),
                        };
                        let args = self.args()?;
                        self.semi()?;
                        return Ok(Stmt::new(StmtKind::Intercept { site, args }));
                    }
                }
                let name = self.ident()?;
                if self.peek() == &Tok::LParen {
                    let args = self.args()?;
                    self.semi()?;
                    StmtKind::Call { target: IGNORE_VAR.to_string(), method: name, args }
                } else {
                    self.expect(&Tok::Assign, "`:=`")?;
                    let is_call = matches!(self.peek(), Tok::Ident(_) | Tok::Reserved(_)) && self.peek_at(1) == &Tok::LParen;
                    if is_call {
                        let method = self.ident()?;
                        let args = self.args()?;
                        self.semi()?;
                        StmtKind::Call { target: name, method, args }
                    } else {
                        let value = self.expr()?;
                        self.semi()?;
                        StmtKind::Assign { target: name, value }
                    }
                }
            }
            Tok::Kw(Kw::If) => return self.if_stmt(),
            Tok::Kw(Kw::While) => {
                self.advance();
                self.expect(&Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Kw(Kw::Try) => {
                self.advance();
                let body = self.block()?;
                self.expect(&Tok::Kw(Kw::Catch), "`catch`")?;
                self.expect(&Tok::LParen, "`(`")?;
                let var = self.ident()?;
                self.expect(&Tok::RParen, "`)`")?;
                let handler = self.block()?;
                StmtKind::Try { body, var, handler }
            }
            Tok::Kw(Kw::Break) => {
                self.advance();
                self.semi()?;
                StmtKind::Break
            }
            Tok::Kw(Kw::Continue) => {
                self.advance();
                self.semi()?;
                StmtKind::Continue
            }
            Tok::Kw(Kw::Return) => {
                self.advance();
                let e = self.expr()?;
                self.semi()?;
                StmtKind::Return(e)
            }
            Tok::Kw(Kw::Throw) => {
                self.advance();
                let e = self.expr()?;
                self.semi()?;
                StmtKind::Throw(e)
            }
            Tok::Kw(Kw::Skip) => {
                self.advance();
                self.semi()?;
                StmtKind::Skip
            }
            Tok::Kw(Kw::Assert) => {
                self.advance();
                self.expect(&Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                self.semi()?;
                desugar_assert(cond)
            }
            Tok::LBrace => StmtKind::Block(self.block()?),
            other => return Err(self.error(format!("expected a statement, found {}", describe(&other)))),
        };
        Ok(Stmt::new(kind))
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        self.expect(&Tok::Kw(Kw::If), "`if`")?;
        self.expect(&Tok::LParen, "`(`")?;
        let cond = self.expr()?;
        self.expect(&Tok::RParen, "`)`")?;
        let then_branch = self.block()?;
        let else_branch = if self.eat(&Tok::Kw(Kw::Else)) {
            if self.peek() == &Tok::Kw(Kw::If) {
                vec![self.if_stmt()?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(Stmt::new(StmtKind::If { cond, then_branch, else_branch }))
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat(&Tok::Kw(Kw::Or)) {
            let right = self.and_expr()?;
            left = Expr::binary(BinOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat(&Tok::Kw(Kw::And)) {
            let right = self.not_expr()?;
            left = Expr::binary(BinOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Kw(Kw::Not)) {
            Ok(Expr::unary(UnOp::Not, self.not_expr()?))
        } else {
            self.cmp_expr()
        }
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let left = self.add_expr()?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            _ => return Ok(left),
        };
        self.advance();
        let right = self.add_expr()?;
        if matches!(self.peek(), Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le) {
            return Err(self.error("comparison operators do not chain; add parentheses"));
        }
        Ok(Expr::binary(op, left, right))
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut left = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.mul_expr()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut left = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.unary_expr()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn unary_expr(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            if let Tok::Int(v) = *self.peek() {
                self.advance();
                return Ok(Expr::Int(self.fold_int(v, true)?));
            }
            return Ok(Expr::unary(UnOp::Neg, self.unary_expr()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(Expr::Int(self.fold_int(v, false)?))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(Expr::Str(s))
            }
            Tok::Kw(Kw::True) => {
                self.advance();
                Ok(Expr::Bool(true))
            }
            Tok::Kw(Kw::False) => {
                self.advance();
                Ok(Expr::Bool(false))
            }
            Tok::Kw(Kw::Nondet) => {
                self.advance();
                self.expect(&Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Expr::Nondet(Box::new(e)))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Reserved(r) if r == "$sentinel" && self.mode == ParseMode::Instrumented => {
                self.advance();
                Ok(Expr::Sentinel)
            }
            Tok::Ident(_) | Tok::Reserved(_) => {
                let name = self.ident()?;
                if self.peek() == &Tok::LParen {
                    return Err(self.error(format!("method call `{name}(...)` is only allowed as a statement or assignment right-hand side")));
                }
                Ok(Expr::Var(name))
            }
            other => Err(self.error(format!("expected an expression, found {}", describe(&other)))),
        }
    }
}

/// `assert(e);` is `if (not e) { throw "assertion failed"; } else { skip; }`.
pub fn desugar_assert(cond: Expr) -> StmtKind {
    StmtKind::If {
        cond: Expr::unary(UnOp::Not, cond),
        then_branch: vec![Stmt::new(StmtKind::Throw(Expr::Str(ASSERTION_FAILED.into())))],
        else_branch: vec![Stmt::new(StmtKind::Skip)],
    }
}

pub const ASSERTION_FAILED: &str = "assertion failed";
