use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::Location;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagKind {
    UndeclaredVariable,
    UndefinedMethod,
    ArityMismatch,
    BreakOutsideLoop,
    ContinueOutsideLoop,
    SyntaxError,
    ReservedIdentifier,
    DuplicateDefinition,
}

impl fmt::Display for DiagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagKind::UndeclaredVariable => "undeclared-variable",
            DiagKind::UndefinedMethod => "undefined-method",
            DiagKind::ArityMismatch => "arity-mismatch",
            DiagKind::BreakOutsideLoop => "break-outside-loop",
            DiagKind::ContinueOutsideLoop => "continue-outside-loop",
            DiagKind::SyntaxError => "syntax-error",
            DiagKind::ReservedIdentifier => "reserved-identifier",
            DiagKind::DuplicateDefinition => "duplicate-definition",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", untagged)]
pub enum Position {
    Location(Location),
    Source { line: u32, col: u32 },
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::Location(loc) => write!(f, "{loc}"),
            Position::Source { line, col } => write!(f, "{line}:{col}"),
        }
    }
}

/// A compile error, attributed to the method (isolation unit) that contains it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostic {
    pub isolation_unit: String,
    pub kind: DiagKind,
    pub position: Position,
    pub message: String,
}

/// Isolation unit used for errors outside any method body.
pub const TOPLEVEL_UNIT: &str = "<toplevel>";

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] in `{}`: {}", self.position, self.kind, self.isolation_unit, self.message)
    }
}
