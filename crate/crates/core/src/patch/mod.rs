//! Patches, patch sets, and plain (one program per patch) validation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Engine, EngineConfig, NoHook, TestOutcome};
use crate::lang::{parse_program, parse_stmts, static_check, Diagnostic, LangError, Location, ParseMode, Program, Stmt, StmtKind, Value};

/// What an edit replaces: a statement, or (unsupported by weaving) a global declaration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditTarget {
    Stmt(Location),
    Global(String),
}

const GLOBAL_PREFIX: &str = "global:";

impl fmt::Display for EditTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditTarget::Stmt(loc) => write!(f, "{loc}"),
            EditTarget::Global(name) => write!(f, "{GLOBAL_PREFIX}{name}"),
        }
    }
}

impl FromStr for EditTarget {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix(GLOBAL_PREFIX) {
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Ok(EditTarget::Global(name.to_string()));
            }
        }
        s.parse().map(EditTarget::Stmt)
    }
}

impl Serialize for EditTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EditTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub location: EditTarget,
    pub replacement: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub id: String,
    pub edits: Vec<Edit>,
}

impl Patch {
    pub fn new(id: impl Into<String>, edits: impl IntoIterator<Item = (&'static str, &'static str)>) -> Patch {
        Patch {
            id: id.into(),
            edits: edits
                .into_iter()
                .map(|(l, r)| Edit { location: l.parse().expect("valid edit location"), replacement: r.to_string() })
                .collect(),
        }
    }

    /// Single-statement patch.
    pub fn stmt(id: impl Into<String>, loc: &str, replacement: impl Into<String>) -> Patch {
        Patch {
            id: id.into(),
            edits: vec![Edit { location: loc.parse().expect("valid edit location"), replacement: replacement.into() }],
        }
    }

    /// Grouping key: the lexicographically smallest edit location.
    pub fn fault_location(&self) -> Option<String> {
        self.edits.iter().map(|e| e.location.to_string()).min()
    }

    pub fn stmt_locations(&self) -> impl Iterator<Item = &Location> {
        self.edits.iter().filter_map(|e| match &e.location {
            EditTarget::Stmt(l) => Some(l),
            EditTarget::Global(_) => None,
        })
    }
}

/// Patch ids become part of generated method names and selector values.
pub fn valid_patch_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchSet {
    pub fault_location: String,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn new(patches: Vec<Patch>) -> PatchSet {
        let fault_location = patches.iter().filter_map(Patch::fault_location).min().unwrap_or_default();
        PatchSet { fault_location, patches }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("patch `{0}` has no edits")]
    Empty(String),
    #[error("patch id `{0}` must be non-empty and use only letters, digits and `_`")]
    BadId(String),
    #[error(transparent)]
    Location(#[from] LangError),
    #[error("edits `{0}` and `{1}` overlap")]
    Overlap(String, String),
    #[error("replacement for `{target}` does not parse: {}", first_message(.diagnostics))]
    Parse { target: String, diagnostics: Vec<Diagnostic> },
    #[error("replacement for `{0}` must declare exactly that global")]
    BadGlobal(String),
}

fn first_message(d: &[Diagnostic]) -> String {
    d.first().map(|d| d.to_string()).unwrap_or_default()
}

/// A patch with its replacement text parsed and located.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedPatch {
    pub id: String,
    /// Statement edits; each replacement is already relocated to its target.
    pub stmts: Vec<(Location, Stmt)>,
    pub globals: Vec<(String, Value)>,
}

/// Checks the patch's locations against `base` and parses every replacement.
pub fn prepare_patch(base: &Program, patch: &Patch) -> Result<PreparedPatch, PatchError> {
    if !valid_patch_id(&patch.id) {
        return Err(PatchError::BadId(patch.id.clone()));
    }
    if patch.edits.is_empty() {
        return Err(PatchError::Empty(patch.id.clone()));
    }
    let locs: Vec<&Location> = patch.stmt_locations().collect();
    for (i, a) in locs.iter().enumerate() {
        for b in &locs[i + 1..] {
            if a.is_within(b) || b.is_within(a) {
                return Err(PatchError::Overlap(a.to_string(), b.to_string()));
            }
        }
    }
    let mut out = PreparedPatch { id: patch.id.clone(), stmts: Vec::new(), globals: Vec::new() };
    for edit in &patch.edits {
        let target = edit.location.to_string();
        match &edit.location {
            EditTarget::Stmt(loc) => {
                base.resolve(loc)?;
                let mut stmts = parse_stmts(&edit.replacement, &loc.method, ParseMode::User)
                    .map_err(|diagnostics| PatchError::Parse { target: target.clone(), diagnostics })?;
                let mut stmt = match stmts.len() {
                    0 => Stmt::new(StmtKind::Skip),
                    1 => stmts.pop().unwrap(),
                    _ => Stmt::new(StmtKind::Block(stmts)),
                };
                stmt.relocate(loc.clone());
                out.stmts.push((loc.clone(), stmt));
            }
            EditTarget::Global(name) => {
                if base.global(name).is_none() {
                    return Err(LangError::NotFound(target).into());
                }
                let decl = parse_program(&edit.replacement, "patch", ParseMode::User)
                    .map_err(|diagnostics| PatchError::Parse { target: target.clone(), diagnostics })?;
                match decl.globals.as_slice() {
                    [g] if &g.name == name && decl.methods().is_empty() => out.globals.push((name.clone(), g.init.clone())),
                    _ => return Err(PatchError::BadGlobal(target)),
                }
            }
        }
    }
    Ok(out)
}

/// Applies an already prepared patch.
pub fn apply_prepared(base: &Program, patch: &PreparedPatch) -> Program {
    let mut p = base.clone();
    for (loc, stmt) in &patch.stmts {
        *p.resolve_mut(loc).expect("prepared locations resolve") = stmt.clone();
    }
    for (name, init) in &patch.globals {
        p.global_mut(name).expect("prepared globals exist").init = init.clone();
    }
    p
}

/// Returns `base` with the patch's statements (and globals) replaced.
pub fn apply_patch(base: &Program, patch: &Patch) -> Result<Program, PatchError> {
    Ok(apply_prepared(base, &prepare_patch(base, patch)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchStatus {
    Plausible,
    Implausible,
    Uncompilable,
    FailsToValidate,
}

impl fmt::Display for PatchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchStatus::Plausible => "plausible",
            PatchStatus::Implausible => "implausible",
            PatchStatus::Uncompilable => "uncompilable",
            PatchStatus::FailsToValidate => "fails-to-validate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchVerdict {
    pub patch_id: String,
    pub status: PatchStatus,
    pub per_test: BTreeMap<String, TestOutcome>,
    pub via_fallback: bool,
    /// Number of tests this patch was validated against.
    pub test_executions: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl PatchVerdict {
    pub fn new(patch_id: impl Into<String>, status: PatchStatus) -> PatchVerdict {
        PatchVerdict {
            patch_id: patch_id.into(),
            status,
            per_test: BTreeMap::new(),
            via_fallback: false,
            test_executions: 0,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> PatchVerdict {
        self.detail = Some(detail.into());
        self
    }

    /// Builds a verdict from per-test outcomes: plausible iff every test passed.
    pub fn from_outcomes(patch_id: impl Into<String>, per_test: BTreeMap<String, TestOutcome>) -> PatchVerdict {
        let status =
            if per_test.values().all(TestOutcome::passed) { PatchStatus::Plausible } else { PatchStatus::Implausible };
        PatchVerdict {
            patch_id: patch_id.into(),
            status,
            test_executions: per_test.len() as u32,
            per_test,
            via_fallback: false,
            detail: None,
        }
    }

    /// Same status and same per-test results (step counts ignored).
    pub fn same_result(&self, other: &PatchVerdict) -> bool {
        self.patch_id == other.patch_id
            && self.status == other.status
            && self.per_test.len() == other.per_test.len()
            && self.per_test.iter().zip(&other.per_test).all(|((ta, a), (tb, b))| ta == tb && a.result == b.result)
    }

    pub fn steps(&self) -> u64 {
        self.per_test.values().map(|o| o.steps).sum()
    }
}

/// One test of a suite with its step limit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub entry: String,
    pub limit: u64,
}

impl TestCase {
    pub fn new(name: impl Into<String>, entry: impl Into<String>, limit: u64) -> TestCase {
        TestCase { name: name.into(), entry: entry.into(), limit }
    }
}

/// Runs `tests` in order on an already patched program, stopping at the first failure.
pub fn run_tests_fail_fast(program: &Program, tests: &[TestCase], config: EngineConfig) -> BTreeMap<String, TestOutcome> {
    let mut engine = Engine::new(program, config);
    let mut per_test = BTreeMap::new();
    for t in tests {
        engine.reset(t.limit, config.seed);
        let r = engine.run_entry(&t.entry, &mut NoHook);
        let outcome = TestOutcome::from_run(&r, engine.budget().used);
        let passed = outcome.passed();
        per_test.insert(t.name.clone(), outcome);
        if !passed {
            break;
        }
    }
    per_test
}

/// Validates one patch on its own copy of the program.
pub fn plain_validate_one(base: &Program, patch: &Patch, tests: &[TestCase], config: EngineConfig) -> PatchVerdict {
    let patched = match apply_patch(base, patch) {
        Ok(p) => p,
        Err(e) => return PatchVerdict::new(&patch.id, PatchStatus::Uncompilable).with_detail(e.to_string()),
    };
    let diags = static_check(&patched);
    if let Some(d) = diags.first() {
        return PatchVerdict::new(&patch.id, PatchStatus::Uncompilable).with_detail(d.to_string());
    }
    PatchVerdict::from_outcomes(&patch.id, run_tests_fail_fast(&patched, tests, config))
}

/// The oracle: every patch applied, checked and tested independently.
pub fn plain_validate(base: &Program, patches: &[Patch], tests: &[TestCase], config: EngineConfig) -> Vec<PatchVerdict> {
    patches.iter().map(|p| plain_validate_one(base, p, tests, config)).collect()
}
