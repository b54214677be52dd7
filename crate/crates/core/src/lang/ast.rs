use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::value::Value;
use super::LangError;

/// Prefix reserved for generated instrumentation names.
pub const RESERVED_PREFIX: char = '$';

/// Assignment target used by call-statement sugar (`f();`). Writes to it are dropped.
pub const IGNORE_VAR: &str = "$ignore";

pub fn is_reserved(name: &str) -> bool {
    name.starts_with(RESERVED_PREFIX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Str(String),
    Var(String),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    /// `nondet(k)`: an integer in `[0, k)` from the engine's seeded generator.
    Nondet(Box<Expr>),
    /// The return-capture sentinel. Only writable by generated code.
    Sentinel,
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn binary(op: BinOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn unary(op: UnOp, operand: Expr) -> Expr {
        Expr::Unary(op, Box::new(operand))
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) | Expr::Var(_) | Expr::Sentinel => 1,
            Expr::Binary(_, l, r) => 1 + l.size() + r.size(),
            Expr::Unary(_, e) | Expr::Nondet(e) => 1 + e.size(),
        }
    }

    pub fn for_each_var<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Var(name) => f(name),
            Expr::Binary(_, l, r) => {
                l.for_each_var(f);
                r.for_each_var(f);
            }
            Expr::Unary(_, e) | Expr::Nondet(e) => e.for_each_var(f),
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) | Expr::Sentinel => {}
        }
    }
}

/// A statement's position: the enclosing method plus the child-index path from
/// the method body. Compound statements number their child blocks first
/// (`then` = 0, `else` = 1; `try` = 0, `catch` = 1; loop and block bodies = 0)
/// and then the statements inside the block, so `f:2.1.0` is the first
/// statement of the `else` block of the third statement of `f`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub method: String,
    pub path: Vec<u32>,
}

impl Location {
    pub fn new(method: impl Into<String>, path: Vec<u32>) -> Self {
        Location { method: method.into(), path }
    }

    pub fn child(&self, block: u32, index: u32) -> Location {
        let mut path = self.path.clone();
        path.push(block);
        path.push(index);
        Location { method: self.method.clone(), path }
    }

    /// True when `self` is `other` or lies inside it.
    pub fn is_within(&self, other: &Location) -> bool {
        self.method == other.method && self.path.starts_with(&other.path)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.method)?;
        for (i, idx) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

impl FromStr for Location {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LangError::BadLocation(s.to_string());
        let (method, path) = s.rsplit_once(':').ok_or_else(bad)?;
        if method.is_empty() || path.is_empty() {
            return Err(bad());
        }
        let path = path
            .split('.')
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Location::new(method, path))
    }
}

impl Serialize for Location {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stmt {
    pub loc: Location,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StmtKind {
    Block(Vec<Stmt>),
    Assign {
        target: String,
        value: Expr,
    },
    Call {
        target: String,
        method: String,
        args: Vec<Expr>,
    },
    If {
        cond: Expr,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Try {
        body: Vec<Stmt>,
        var: String,
        handler: Vec<Stmt>,
    },
    Break,
    Continue,
    Return(Expr),
    Throw(Expr),
    Skip,
    /// Scheduler hook emitted at woven dispatch sites.
    Intercept {
        site: String,
        args: Vec<Expr>,
    },
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Stmt {
        Stmt { loc: Location::new("", vec![]), kind }
    }

    /// Child blocks in location-numbering order.
    pub fn blocks(&self) -> Vec<&Vec<Stmt>> {
        match &self.kind {
            StmtKind::Block(b) => vec![b],
            StmtKind::If { then_branch, else_branch, .. } => vec![then_branch, else_branch],
            StmtKind::While { body, .. } => vec![body],
            StmtKind::Try { body, handler, .. } => vec![body, handler],
            _ => vec![],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match &mut self.kind {
            StmtKind::Block(b) => vec![b],
            StmtKind::If { then_branch, else_branch, .. } => vec![then_branch, else_branch],
            StmtKind::While { body, .. } => vec![body],
            StmtKind::Try { body, handler, .. } => vec![body, handler],
            _ => vec![],
        }
    }

    /// Number of AST nodes (statements and expressions).
    pub fn size(&self) -> usize {
        let exprs: usize = self.exprs().iter().map(|e| e.size()).sum();
        let nested: usize = self.blocks().iter().flat_map(|b| b.iter()).map(Stmt::size).sum();
        1 + exprs + nested
    }

    /// Expressions directly owned by this statement (not by nested statements).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Assign { value, .. } => vec![value],
            StmtKind::Call { args, .. } | StmtKind::Intercept { args, .. } => args.iter().collect(),
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::Return(e) | StmtKind::Throw(e) => vec![e],
            _ => vec![],
        }
    }

    /// Pre-order traversal over this statement and all nested statements.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        for block in self.blocks() {
            for s in block {
                s.walk(f);
            }
        }
    }

    pub fn relocate(&mut self, loc: Location) {
        let base = loc.clone();
        self.loc = loc;
        for (b, block) in self.blocks_mut().into_iter().enumerate() {
            relocate_block(block, &base, Some(b as u32));
        }
    }
}

/// Reassigns locations of a statement list. `block` is `None` for a method body.
pub fn relocate_block(stmts: &mut [Stmt], parent: &Location, block: Option<u32>) {
    for (i, s) in stmts.iter_mut().enumerate() {
        let loc = match block {
            Some(b) => parent.child(b, i as u32),
            None => Location::new(parent.method.clone(), vec![i as u32]),
        };
        s.relocate(loc);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub init: Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    /// Package analog: the stem of the source file that declared the method.
    pub group: String,
}

impl Method {
    pub fn new(name: impl Into<String>, params: Vec<String>, mut body: Vec<Stmt>, group: impl Into<String>) -> Self {
        let name = name.into();
        relocate_block(&mut body, &Location::new(name.clone(), vec![]), None);
        Method { name, params, body, group: group.into() }
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        for s in &self.body {
            s.walk(f);
        }
    }
}

/// An immutable parsed codebase.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub globals: Vec<Global>,
    methods: Vec<Method>,
    method_index: BTreeMap<String, usize>,
}

impl Program {
    pub fn new(globals: Vec<Global>, methods: Vec<Method>) -> Result<Program, LangError> {
        let mut program = Program { globals: Vec::new(), methods: Vec::new(), method_index: BTreeMap::new() };
        let mut seen = std::collections::BTreeSet::new();
        for g in globals {
            if !seen.insert(g.name.clone()) {
                return Err(LangError::Duplicate(format!("global `{}`", g.name)));
            }
            program.globals.push(g);
        }
        for m in methods {
            program.add_method(m)?;
        }
        Ok(program)
    }

    pub fn add_method(&mut self, method: Method) -> Result<(), LangError> {
        if self.method_index.contains_key(&method.name) {
            return Err(LangError::Duplicate(format!("method `{}`", method.name)));
        }
        self.method_index.insert(method.name.clone(), self.methods.len());
        self.methods.push(method);
        Ok(())
    }

    pub fn add_global(&mut self, name: impl Into<String>, init: Value) -> Result<(), LangError> {
        let name = name.into();
        if self.global(&name).is_some() {
            return Err(LangError::Duplicate(format!("global `{name}`")));
        }
        self.globals.push(Global { name, init });
        Ok(())
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    pub fn method(&self, name: &str) -> Option<&Method> {
        self.method_index.get(name).map(|&i| &self.methods[i])
    }

    pub(crate) fn method_mut(&mut self, name: &str) -> Option<&mut Method> {
        self.method_index.get(name).map(|&i| &mut self.methods[i])
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub(crate) fn global_mut(&mut self, name: &str) -> Option<&mut Global> {
        self.globals.iter_mut().find(|g| g.name == name)
    }

    /// Test entry points: zero-parameter methods whose name starts with `test`.
    pub fn test_entries(&self) -> Vec<&str> {
        self.methods
            .iter()
            .filter(|m| m.params.is_empty() && m.name.starts_with("test"))
            .map(|m| m.name.as_str())
            .collect()
    }

    pub fn resolve(&self, loc: &Location) -> Result<&Stmt, LangError> {
        let not_found = || LangError::NotFound(loc.to_string());
        let method = self.method(&loc.method).ok_or_else(not_found)?;
        let (&first, rest) = loc.path.split_first().ok_or_else(not_found)?;
        let mut stmt = method.body.get(first as usize).ok_or_else(not_found)?;
        let mut rest = rest;
        while !rest.is_empty() {
            if rest.len() < 2 {
                return Err(not_found());
            }
            let block = *stmt.blocks().get(rest[0] as usize).ok_or_else(not_found)?;
            stmt = block.get(rest[1] as usize).ok_or_else(not_found)?;
            rest = &rest[2..];
        }
        Ok(stmt)
    }

    pub(crate) fn resolve_mut(&mut self, loc: &Location) -> Result<&mut Stmt, LangError> {
        let not_found = || LangError::NotFound(loc.to_string());
        let method = self.method_mut(&loc.method).ok_or_else(not_found)?;
        let (&first, rest) = loc.path.split_first().ok_or_else(not_found)?;
        let mut stmt = method.body.get_mut(first as usize).ok_or_else(not_found)?;
        let mut rest = rest;
        while !rest.is_empty() {
            if rest.len() < 2 {
                return Err(not_found());
            }
            let mut blocks = stmt.blocks_mut();
            if rest[0] as usize >= blocks.len() {
                return Err(not_found());
            }
            let block = blocks.swap_remove(rest[0] as usize);
            stmt = block.get_mut(rest[1] as usize).ok_or_else(not_found)?;
            rest = &rest[2..];
        }
        Ok(stmt)
    }

    /// Every statement location in declaration order (the statement index).
    pub fn locations(&self) -> Vec<Location> {
        let mut out = Vec::new();
        for m in &self.methods {
            m.walk(&mut |s| out.push(s.loc.clone()));
        }
        out
    }

    /// True when the statement at `loc` is nested inside a loop of its method.
    pub fn in_loop(&self, loc: &Location) -> bool {
        let Some(method) = self.method(&loc.method) else { return false };
        let mut stmts = &method.body;
        let mut path = loc.path.as_slice();
        let mut inside = false;
        while let Some((&idx, rest)) = path.split_first() {
            let Some(stmt) = stmts.get(idx as usize) else { return false };
            if rest.len() < 2 {
                return inside;
            }
            if matches!(stmt.kind, StmtKind::While { .. }) {
                inside = true;
            }
            let blocks = stmt.blocks();
            let Some(block) = blocks.get(rest[0] as usize) else { return false };
            stmts = block;
            path = &rest[1..];
        }
        inside
    }
}
