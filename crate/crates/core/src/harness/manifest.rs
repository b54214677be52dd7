use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{parse_sources, Diagnostic, Program};
use crate::patch::{Patch, PatchSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Dedup,
    Schemata,
    Prioritization,
    Virtualization,
}

impl Technique {
    pub const ALL: [Technique; 4] =
        [Technique::Dedup, Technique::Schemata, Technique::Prioritization, Technique::Virtualization];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Dedup => "dedup",
            Technique::Schemata => "schemata",
            Technique::Prioritization => "prioritization",
            Technique::Virtualization => "virtualization",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| format!("unknown technique `{s}` (expected dedup, schemata, prioritization or virtualization)"))
    }
}

fn one() -> usize {
    1
}
fn eight() -> usize {
    8
}
fn budget_base() -> u64 {
    5000
}
fn budget_factor() -> f64 {
    1.5
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "eight")]
    pub max_change_scope_vars: usize,
    #[serde(default = "budget_base")]
    pub step_budget_base: u64,
    #[serde(default = "budget_factor")]
    pub step_budget_factor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub disabled_techniques: BTreeSet<Technique>,
    /// Reseed `nondet` every round instead of once per run.
    #[serde(default)]
    pub unstable_seed: bool,
    /// Validate bypassed and unstable patches plainly instead of giving up on them.
    #[serde(default = "yes")]
    pub fallback: bool,
    /// Patch sets (by index) whose weaving is made to panic. Testing aid.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub simulate_weave_bug: BTreeSet<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workers: 1,
            max_change_scope_vars: 8,
            step_budget_base: budget_base(),
            step_budget_factor: budget_factor(),
            seed: 0,
            disabled_techniques: BTreeSet::new(),
            unstable_seed: false,
            fallback: true,
            simulate_weave_bug: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    pub fn enabled(&self, t: Technique) -> bool {
        !self.disabled_techniques.contains(&t)
    }

    pub fn without(mut self, ts: &[Technique]) -> Self {
        self.disabled_techniques.extend(ts.iter().copied());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestSpec {
    pub name: String,
    pub entry: String,
    #[serde(default)]
    pub failing: bool,
    /// Defaults to the group of the entry method.
    #[serde(default)]
    pub group: String,
}

impl TestSpec {
    pub fn new(name: &str, failing: bool, group: &str) -> TestSpec {
        TestSpec { name: name.into(), entry: name.into(), failing, group: group.into() }
    }
}

/// The on-disk project description. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProjectManifest {
    pub sources: Vec<PathBuf>,
    pub tests: Vec<TestSpec>,
    pub patch_sets: Vec<PathBuf>,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("sources do not parse:\n{}", render(.0))]
    Parse(Vec<Diagnostic>),
    #[error("test `{test}`: entry `{entry}` is not a zero-argument method")]
    BadEntry { test: String, entry: String },
    #[error("duplicate test name `{0}`")]
    DuplicateTest(String),
    #[error("workers must be at least 1")]
    Workers,
    #[error("step budget factor must be a non-negative number")]
    Factor,
    #[error("{path}: patch set is empty")]
    EmptySet { path: PathBuf },
    #[error("duplicate patch id `{0}`")]
    DuplicatePatch(String),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// A loaded project: source texts, tests, patch sets and configuration.
#[derive(Clone, Debug)]
pub struct Project {
    /// `(group, text)` per source file; the group is the file stem.
    pub sources: Vec<(String, String)>,
    pub tests: Vec<TestSpec>,
    pub patch_sets: Vec<PatchSet>,
    pub config: RunConfig,
}

fn read(path: &Path) -> Result<String, ManifestError> {
    fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PatchFile {
    One(Patch),
    Many(Vec<Patch>),
}

pub fn load_patch_set(path: &Path) -> Result<PatchSet, ManifestError> {
    let text = read(path)?;
    let file: PatchFile =
        serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: path.to_path_buf(), source })?;
    let patches = match file {
        PatchFile::One(p) => vec![p],
        PatchFile::Many(v) => v,
    };
    if patches.is_empty() {
        return Err(ManifestError::EmptySet { path: path.to_path_buf() });
    }
    Ok(PatchSet::new(patches))
}

pub fn group_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "main".into())
}

impl Project {
    pub fn load(manifest_path: &Path) -> Result<Project, ManifestError> {
        let text = read(manifest_path)?;
        let manifest: ProjectManifest = serde_json::from_str(&text)
            .map_err(|source| ManifestError::Json { path: manifest_path.to_path_buf(), source })?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut sources = Vec::new();
        for s in &manifest.sources {
            let p = dir.join(s);
            sources.push((group_of(&p), read(&p)?));
        }
        let patch_sets = manifest.patch_sets.iter().map(|p| load_patch_set(&dir.join(p))).collect::<Result<_, _>>()?;
        Project::new(sources, manifest.tests, patch_sets, manifest.config)
    }

    /// Builds and checks a project held in memory.
    pub fn new(
        sources: Vec<(String, String)>,
        mut tests: Vec<TestSpec>,
        patch_sets: Vec<PatchSet>,
        config: RunConfig,
    ) -> Result<Project, ManifestError> {
        if config.workers == 0 {
            return Err(ManifestError::Workers);
        }
        if !(config.step_budget_factor >= 0.0 && config.step_budget_factor.is_finite()) {
            return Err(ManifestError::Factor);
        }
        let program = parse_sources(&sources).map_err(ManifestError::Parse)?;
        let mut names = BTreeSet::new();
        for t in &mut tests {
            if !names.insert(t.name.clone()) {
                return Err(ManifestError::DuplicateTest(t.name.clone()));
            }
            match program.method(&t.entry) {
                Some(m) if m.params.is_empty() => {
                    if t.group.is_empty() {
                        t.group = m.group.clone();
                    }
                }
                _ => return Err(ManifestError::BadEntry { test: t.name.clone(), entry: t.entry.clone() }),
            }
        }
        let mut ids = BTreeSet::new();
        for p in patch_sets.iter().flat_map(|s| &s.patches) {
            if !ids.insert(p.id.clone()) {
                return Err(ManifestError::DuplicatePatch(p.id.clone()));
            }
        }
        Ok(Project { sources, tests, patch_sets, config })
    }

    /// Single-file convenience constructor.
    pub fn from_source(source: &str, tests: Vec<TestSpec>, patch_sets: Vec<PatchSet>, config: RunConfig) -> Result<Project, ManifestError> {
        Project::new(vec![("main".into(), source.into())], tests, patch_sets, config)
    }

    pub fn parse(&self) -> Program {
        parse_sources(&self.sources).expect("checked when the project was built")
    }
}
