//! Project ingestion, test ordering, the per-patch-set pipeline, the worker
//! pool and reports.

mod manifest;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

pub use manifest::{
    group_of, load_patch_set, ManifestError, Project, ProjectManifest, RunConfig, Technique, TestSpec,
};
pub use report::{AblationRow, AblationTable, Aggregate, Bypass, SetCounters, SetReport, ValidationReport, VerdictDiff};

use crate::exec::{run_test, test_budget, EngineConfig, DEFAULT_MAX_DEPTH};
use crate::intercept::{compile_meta, partition, InterceptConfig};
use crate::lang::{parse_sources, program_to_string, Program};
use crate::patch::{plain_validate_one, prepare_patch, Patch, PatchSet, PatchStatus, PatchVerdict, TestCase};
use crate::sched::{validate_suite, SchedConfig, SuiteMode, TestTree};

/// Step limit used when measuring the unpatched program offline.
pub const MEASURE_LIMIT: u64 = 200_000_000;

const WORKER_STACK: usize = 256 << 20;

/// Failing tests first, then tests sharing a group with a patched method,
/// then the rest. Stable within each tier.
pub fn prioritize_tests(tests: &[TestSpec], patched_groups: &BTreeSet<String>) -> Vec<TestSpec> {
    let tier = |t: &TestSpec| {
        if t.failing {
            0
        } else if patched_groups.contains(&t.group) {
            1
        } else {
            2
        }
    };
    let mut out = tests.to_vec();
    out.sort_by_key(tier);
    out
}

/// Groups of the methods holding the statements a patch set edits.
pub fn patched_groups(program: &Program, set: &PatchSet) -> BTreeSet<String> {
    set.patches
        .iter()
        .flat_map(Patch::stmt_locations)
        .filter_map(|l| program.method(&l.method).map(|m| m.group.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Also run the plain oracle and diff its verdicts.
    pub compare_plain: bool,
    pub dump_tree: bool,
    pub dump_woven: bool,
}

/// Debug output kept out of the report.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub trees: Vec<(usize, TestTree)>,
    pub woven: Vec<(usize, String)>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: ValidationReport,
    pub artifacts: Artifacts,
}

struct SetOutcome {
    verdicts: Vec<PatchVerdict>,
    report: SetReport,
    plain: Option<(Vec<PatchVerdict>, u64)>,
    trees: Vec<TestTree>,
    woven: Option<String>,
}

fn engine_config(cfg: &RunConfig) -> EngineConfig {
    EngineConfig { max_depth: DEFAULT_MAX_DEPTH, seed: cfg.seed }
}

fn measured_tests(program: &Program, order: &[TestSpec], cfg: &RunConfig, offline: &mut u64) -> Vec<TestCase> {
    order
        .iter()
        .map(|t| {
            let steps = run_test(program, &t.entry, MEASURE_LIMIT, engine_config(cfg)).steps;
            *offline += steps;
            TestCase::new(&t.name, &t.entry, test_budget(cfg.step_budget_base, cfg.step_budget_factor, steps))
        })
        .collect()
}

fn plain_set(base: &Program, set: &PatchSet, tests: &[TestCase], cfg: &RunConfig) -> (Vec<PatchVerdict>, u64) {
    let verdicts: Vec<_> = set.patches.iter().map(|p| plain_validate_one(base, p, tests, engine_config(cfg))).collect();
    let steps = verdicts.iter().map(PatchVerdict::steps).sum();
    (verdicts, steps)
}

fn fallback_verdict(base: &Program, patch: &Patch, tests: &[TestCase], cfg: &RunConfig, reason: &str) -> PatchVerdict {
    if !cfg.fallback {
        return PatchVerdict::new(&patch.id, PatchStatus::FailsToValidate).with_detail(reason);
    }
    let mut v = plain_validate_one(base, patch, tests, engine_config(cfg));
    v.via_fallback = true;
    if v.detail.is_none() {
        v.detail = Some(reason.to_string());
    }
    v
}

fn validate_set(project: &Project, index: usize, cfg: &RunConfig, opts: RunOptions) -> SetOutcome {
    let set = &project.patch_sets[index];
    let base = project.parse();
    let mut rep = SetReport::new(index, set);
    let order = if cfg.enabled(Technique::Prioritization) {
        prioritize_tests(&project.tests, &patched_groups(&base, set))
    } else {
        project.tests.clone()
    };
    rep.test_order = order.iter().map(|t| t.name.clone()).collect();
    let plain_tests = measured_tests(&base, &order, cfg, &mut rep.offline_steps);
    let plain = opts.compare_plain.then(|| {
        let manifest_order = measured_tests(&base, &project.tests, cfg, &mut 0);
        plain_set(&base, set, &manifest_order, cfg)
    });
    let mut out = SetOutcome { verdicts: Vec::new(), report: SetReport::new(index, set), plain, trees: Vec::new(), woven: None };

    if !cfg.enabled(Technique::Schemata) {
        // One compilation per patch, each from a fresh parse of the sources.
        for p in &set.patches {
            let own = parse_sources(&project.sources).expect("sources parsed before");
            rep.counters.parse_count += 1;
            rep.counters.compile_rounds += 1;
            let v = plain_validate_one(&own, p, &plain_tests, engine_config(cfg));
            rep.counters.rounds += v.per_test.len() as u64;
            rep.counters.interpreter_steps += v.steps();
            out.verdicts.push(v);
        }
        rep.counters.test_executions = rep.counters.rounds;
        out.report = rep;
        return out;
    }

    rep.counters.parse_count = 1;
    let icfg = InterceptConfig {
        max_scope_vars: cfg.max_change_scope_vars,
        simulate_weave_bug: cfg.simulate_weave_bug.contains(&index),
        ..InterceptConfig::default()
    };
    let mut decided: BTreeMap<String, PatchVerdict> = BTreeMap::new();
    let mut prepared = Vec::new();
    for p in &set.patches {
        match prepare_patch(&base, p) {
            Ok(pp) => prepared.push(pp),
            Err(e) => {
                decided.insert(p.id.clone(), PatchVerdict::new(&p.id, PatchStatus::Uncompilable).with_detail(e.to_string()));
            }
        }
    }
    let (eligible, bypassed) = partition(&base, &prepared, &icfg);
    let mut to_fallback: Vec<(String, String)> = Vec::new();
    for (p, reason) in bypassed {
        rep.bypassed.push(Bypass { patch_id: p.id.clone(), reason: reason.to_string() });
        to_fallback.push((p.id.clone(), format!("bypassed: {reason}")));
    }

    if !eligible.is_empty() {
        let meta = match compile_meta(&base, &eligible, &icfg) {
            Ok(m) => m,
            Err(e) => return failed_set(index, set, format!("weaving failed: {e}"), out.plain),
        };
        rep.counters.compile_rounds = meta.compile_rounds;
        for (id, diags) in &meta.uncompilable {
            let detail = diags.first().map(|d| d.to_string()).unwrap_or_default();
            decided.insert(id.clone(), PatchVerdict::new(id, PatchStatus::Uncompilable).with_detail(detail));
        }
        if opts.dump_woven {
            out.woven = Some(program_to_string(&meta.woven));
        }
        let live: Vec<String> =
            eligible.iter().map(|p| p.id.clone()).filter(|id| !meta.uncompilable.contains_key(id)).collect();
        let meta_tests = measured_tests(&meta.woven, &order, cfg, &mut rep.offline_steps);
        let mode = if cfg.enabled(Technique::Dedup) { SuiteMode::Scheduled } else { SuiteMode::PerPatch };
        let sched = SchedConfig {
            seed: cfg.seed,
            unstable_seed: cfg.unstable_seed,
            max_depth: DEFAULT_MAX_DEPTH,
            reuse_engine: cfg.enabled(Technique::Virtualization),
            record: opts.dump_tree,
        };
        let suite = validate_suite(&meta, &live, &meta_tests, mode, sched);
            rep.counters.rounds = suite.rounds as u64;
        rep.counters.interpreter_steps += suite.steps;
        rep.counters.unstable_count = suite.unstable_count;
        if !sched.reuse_engine {
            rep.counters.parse_count = suite.engine_loads.max(1);
        }
        for (id, per_test) in suite.per_patch {
            decided.insert(id.clone(), PatchVerdict::from_outcomes(&id, per_test));
        }
        let why = suite.unstable_reason.unwrap_or_default();
        to_fallback.extend(suite.fallback.into_iter().map(|id| (id, format!("unstable test: {why}"))));
        out.trees = suite.trees;
    }

    let mut fallback_execs = 0u64;
    for (id, reason) in &to_fallback {
        let patch = set.patches.iter().find(|p| &p.id == id).expect("patch of this set");
        let v = fallback_verdict(&base, patch, &plain_tests, cfg, reason);
        if v.via_fallback {
            rep.counters.fallback_count += 1;
            fallback_execs += v.per_test.len() as u64;
            rep.counters.interpreter_steps += v.steps();
        }
        decided.insert(id.clone(), v);
    }
    rep.counters.test_executions = rep.counters.rounds + fallback_execs;
    out.verdicts = set
        .patches
        .iter()
        .map(|p| decided.remove(&p.id).unwrap_or_else(|| PatchVerdict::new(&p.id, PatchStatus::FailsToValidate)))
        .collect();
    out.report = rep;
    out
}

fn failed_set(index: usize, set: &PatchSet, error: String, plain: Option<(Vec<PatchVerdict>, u64)>) -> SetOutcome {
    let verdicts = set
        .patches
        .iter()
        .map(|p| PatchVerdict::new(&p.id, PatchStatus::FailsToValidate).with_detail(error.clone()))
        .collect();
    let mut report = SetReport::new(index, set);
    report.error = Some(error);
    SetOutcome { verdicts, report, plain, trees: Vec::new(), woven: None }
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs `f` on every index with `workers` threads; results come back in index order.
pub fn run_pool<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        for w in 0..workers.clamp(1, n.max(1)) {
            let (tx, next, f) = (tx.clone(), &next, &f);
            thread::Builder::new()
                .name(format!("worker-{w}"))
                .stack_size(WORKER_STACK)
                .spawn_scoped(s, move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    if tx.send((i, f(i))).is_err() {
                        break;
                    }
                })
                .expect("spawn worker thread");
        }
        drop(tx);
        for (i, t) in rx {
            slots[i] = Some(t);
        }
    });
    slots.into_iter().map(|t| t.expect("every index produced a result")).collect()
}

fn contained(project: &Project, index: usize, cfg: &RunConfig, opts: RunOptions) -> SetOutcome {
    catch_unwind(AssertUnwindSafe(|| validate_set(project, index, cfg, opts))).unwrap_or_else(|e| {
        let msg = format!("internal error: {}", panic_message(e.as_ref()));
        failed_set(index, &project.patch_sets[index], msg, None)
    })
}

/// The full pipeline over every patch set.
pub fn run_validation(project: &Project, opts: RunOptions) -> RunOutput {
    let start = Instant::now();
    let cfg = &project.config;
    let outcomes = run_pool(project.patch_sets.len(), cfg.workers, |i| contained(project, i, cfg, opts));
    let mut report = ValidationReport::new("validate", cfg);
    let mut artifacts = Artifacts::default();
    let mut plain_steps = 0u64;
    let mut diffs = Vec::new();
    for o in outcomes {
        if let Some((plain, steps)) = &o.plain {
            plain_steps += steps;
            for (v, p) in o.verdicts.iter().zip(plain) {
                if v.status != p.status {
                    diffs.push(VerdictDiff { patch_id: v.patch_id.clone(), validated: v.status, plain: p.status });
                }
            }
        }
        let index = o.report.index;
        artifacts.trees.extend(o.trees.into_iter().map(|t| (index, t)));
        artifacts.woven.extend(o.woven.map(|w| (index, w)));
        report.push_set(o.report, o.verdicts);
    }
    if opts.compare_plain {
        report.aggregate.plain_oracle_steps = Some(plain_steps);
        report.aggregate.verdict_diff = Some(diffs);
    }
    report.finish(start.elapsed().as_secs_f64());
    RunOutput { report, artifacts }
}

/// Every patch validated on its own, tests in manifest order.
pub fn run_plain(project: &Project) -> ValidationReport {
    let start = Instant::now();
    let cfg = &project.config;
    let outcomes = run_pool(project.patch_sets.len(), cfg.workers, |i| {
        let set = &project.patch_sets[i];
        let base = project.parse();
        let mut rep = SetReport::new(i, set);
        rep.test_order = project.tests.iter().map(|t| t.name.clone()).collect();
        let tests = measured_tests(&base, &project.tests, cfg, &mut rep.offline_steps);
        let (verdicts, steps) = plain_set(&base, set, &tests, cfg);
        let c = &mut rep.counters;
        c.parse_count = 1;
        c.compile_rounds = set.patches.len() as u32;
        c.rounds = verdicts.iter().map(|v| v.per_test.len() as u64).sum();
        c.test_executions = c.rounds;
        c.interpreter_steps = steps;
        (rep, verdicts)
    });
    let mut report = ValidationReport::new("plain", cfg);
    for (rep, verdicts) in outcomes {
        report.push_set(rep, verdicts);
    }
    report.finish(start.elapsed().as_secs_f64());
    report
}

/// Configurations compared by [`ablation_matrix`].
pub const ABLATIONS: [(&str, &[Technique]); 5] = [
    ("full", &[]),
    ("-dedup", &[Technique::Dedup]),
    ("-dedup-virt", &[Technique::Dedup, Technique::Virtualization]),
    ("-prioritization", &[Technique::Prioritization]),
    ("-schemata", &[Technique::Schemata]),
];

/// Runs each ablation configuration and checks that verdicts agree.
pub fn ablation_matrix(project: &Project) -> AblationTable {
    let mut table = AblationTable::default();
    let mut reference: Option<(String, Vec<PatchVerdict>)> = None;
    for (name, disabled) in ABLATIONS {
        let mut p = project.clone();
        p.config.disabled_techniques = disabled.iter().copied().collect();
        let report = run_validation(&p, RunOptions::default()).report;
        table.rows.push(AblationRow::from_report(name, &report));
        match &reference {
            None => reference = Some((name.to_string(), report.verdicts)),
            Some((ref_name, ref_verdicts)) => {
                for (a, b) in ref_verdicts.iter().zip(&report.verdicts) {
                    if a.status != b.status {
                        table.divergences.push(format!(
                            "{}: {} under {ref_name} but {} under {name}",
                            a.patch_id, a.status, b.status
                        ));
                    }
                }
            }
        }
    }
    table
}
