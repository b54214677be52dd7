//! Execution scheduling over a state-transition tree: one test execution
//! (round) per group of patches that behave identically on the test.

mod tree;

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::Serialize;

pub use tree::{EdgeDump, NodeDump, NodeId, NodeStatus, SttNode, Tree, TreeDump};

use crate::exec::{Engine, EngineConfig, Halt, InterceptHook, NoHook, StepBudget, TestOutcome, TestResult};
use crate::intercept::{load_change, run_capture, Capture, MetaProgram, CH_ORIG, SELECTOR, SEL_ORIGINAL, SEL_SCHED};
use crate::lang::{parse_program, program_to_string, static_check, ParseMode, Program, Value};
use crate::patch::TestCase;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedConfig {
    pub seed: u64,
    /// Draw a fresh generator seed for every round.
    pub unstable_seed: bool,
    pub max_depth: usize,
    /// Reuse one engine across rounds, resetting its data state in between.
    pub reuse_engine: bool,
    /// Keep trees and round traces in the result.
    pub record: bool,
}

impl Default for SchedConfig {
    fn default() -> Self {
        SchedConfig {
            seed: 0,
            unstable_seed: false,
            max_depth: crate::exec::DEFAULT_MAX_DEPTH,
            reuse_engine: true,
            record: false,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Provides the engine for each round. With reuse on, one engine is kept and
/// its data state reset between rounds; with reuse off, every round reloads
/// the program from its printed source.
pub struct EngineSlot<'p> {
    program: &'p Program,
    config: SchedConfig,
    source: Option<String>,
    engine: Option<Engine<'p>>,
    /// Program loads: one with reuse, one per round without.
    pub loads: u32,
    pub runs: u64,
    retired_steps: u64,
}

impl<'p> EngineSlot<'p> {
    pub fn new(program: &'p Program, config: SchedConfig) -> Self {
        let source = (!config.reuse_engine).then(|| program_to_string(program));
        EngineSlot { program, config, source, engine: None, loads: 0, runs: 0, retired_steps: 0 }
    }

    fn next_seed(&mut self) -> u64 {
        let seed = if self.config.unstable_seed { mix(self.config.seed ^ mix(self.runs)) } else { self.config.seed };
        self.runs += 1;
        seed
    }

    pub fn with_engine<R>(&mut self, limit: u64, f: impl FnOnce(&mut Engine<'_>) -> R) -> R {
        let seed = self.next_seed();
        let cfg = EngineConfig { max_depth: self.config.max_depth, seed };
        match &self.source {
            None => {
                if self.engine.is_none() {
                    self.engine = Some(Engine::new(self.program, cfg));
                    self.loads += 1;
                }
                let e = self.engine.as_mut().expect("engine present");
                e.reset(limit, seed);
                f(e)
            }
            Some(src) => {
                let program = parse_program(src, RELOAD_GROUP, ParseMode::Instrumented)
                    .expect("printed woven program parses");
                assert!(static_check(&program).is_empty(), "reloaded program fails to check");
                self.loads += 1;
                let mut e = Engine::new(&program, cfg);
                e.reset(limit, seed);
                let r = f(&mut e);
                self.retired_steps += e.total_steps();
                r
            }
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.retired_steps + self.engine.as_ref().map_or(0, |e| e.total_steps())
    }
}

const RELOAD_GROUP: &str = "$reload";

#[derive(Clone, Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundTrace {
    /// Nodes entered in this round, starting at the root.
    pub path: Vec<NodeId>,
    /// Patches whose capture components ran in this round.
    pub captured: Vec<String>,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct OneTest {
    pub outcomes: BTreeMap<String, TestOutcome>,
    pub rounds: u32,
    /// Set when the test behaved inconsistently with the tree.
    pub unstable: Option<String>,
    pub tree: Tree,
    pub traces: Vec<RoundTrace>,
}

const ABORT_UNSTABLE: &str = "unstable";
const ABORT_EXHAUSTED: &str = "no patch left in this round";

fn digest(engine: &Engine<'_>) -> u64 {
    let mut h = DefaultHasher::new();
    engine.snapshot().user_view().hash(&mut h);
    h.finish()
}

struct SchedHook<'a> {
    meta: &'a MetaProgram,
    tree: &'a mut Tree,
    outcomes: &'a mut BTreeMap<String, TestOutcome>,
    cur: NodeId,
    unstable: Option<String>,
    trace: RoundTrace,
}

impl SchedHook<'_> {
    fn fail_unstable(&mut self, reason: String) -> Halt {
        self.unstable = Some(reason);
        Halt::Abort(ABORT_UNSTABLE.into())
    }

    /// First visit: capture every patch of the node and group them by change.
    fn expand(&mut self, engine: &mut Engine<'_>, site_name: &str, args: &[Value], digest: u64) -> Result<(), Halt> {
        let site = &self.meta.sites[site_name];
        let cur = self.cur;
        let mut shared_original: Option<Capture> = None;
        for pid in self.tree.nodes[cur].patches.clone() {
            let cap = if let Some(comp) = site.components.get(&pid) {
                run_capture(engine, comp, &pid, args, &site.scope)?
            } else if site.original_reaches_sites {
                run_capture(engine, &site.original_component, &pid, args, &site.scope)?
            } else {
                match &shared_original {
                    Some(c) => c.clone(),
                    None => {
                        let c = run_capture(engine, &site.original_component, SEL_ORIGINAL, args, &site.scope)?;
                        shared_original = Some(c.clone());
                        c
                    }
                }
            };
            self.trace.captured.push(pid.clone());
            if cap.change.is_timeout() {
                let steps = engine.budget().limit;
                self.outcomes.insert(pid.clone(), TestOutcome { result: TestResult::Timeout, steps });
                self.tree.nodes[cur].timed_out.push(pid);
                continue;
            }
            let child = self.tree.child_for(cur, &cap.change, cap.steps);
            self.tree.nodes[child].patches.push(pid);
        }
        self.tree.mark_visited(cur, site_name, digest);
        Ok(())
    }
}

impl InterceptHook for SchedHook<'_> {
    fn intercept(&mut self, engine: &mut Engine<'_>, site_name: &str, args: Vec<Value>) -> Result<(), Halt> {
        let Some(site) = self.meta.site(site_name) else {
            return Err(self.fail_unstable(format!("unknown site `{site_name}`")));
        };
        let node = &self.tree.nodes[self.cur];
        if !node.patches.iter().any(|p| site.components.contains_key(p)) {
            engine.set_global(CH_ORIG, Value::Bool(true));
            return Ok(());
        }
        let d = digest(engine);
        match node.status {
            NodeStatus::NotVisited => self.expand(engine, site_name, &args, d)?,
            NodeStatus::Visited => {
                if node.site.as_deref() != Some(site_name) {
                    let seen = node.site.clone().unwrap_or_default();
                    return Err(self.fail_unstable(format!("reached {site_name} where {seen} was recorded")));
                }
                if node.digest != Some(d) {
                    return Err(self.fail_unstable(format!("state at {site_name} differs from the recorded state")));
                }
            }
            NodeStatus::TestFinished => {
                return Err(self.fail_unstable(format!("reached {site_name} past a finished node")));
            }
        }
        let Some((change, child)) = self.tree.pick_child(self.cur) else {
            // Every patch of this node timed out during capture.
            self.tree.finish(self.cur, None);
            return Err(Halt::Abort(ABORT_EXHAUSTED.into()));
        };
        let change = change.clone();
        let steps = self.tree.nodes[self.cur].edge_steps[&change];
        load_change(engine, &site.scope, &change);
        let b = engine.budget();
        engine.set_budget(StepBudget { limit: b.limit, used: (b.used + steps).min(b.limit) });
        self.cur = child;
        self.trace.path.push(child);
        Ok(())
    }
}

/// Validates `patches` (compilable, dedup-eligible, woven into `meta`)
/// against one test by exploring the state-transition tree.
pub fn scheduled_validate_one_test(
    slot: &mut EngineSlot<'_>,
    meta: &MetaProgram,
    patches: &[String],
    test: &TestCase,
) -> OneTest {
    let mut tree = Tree::new(patches.to_vec());
    let mut outcomes = BTreeMap::new();
    let mut traces = Vec::new();
    let mut rounds = 0u32;
    let done = |tree, outcomes, rounds, traces, unstable| OneTest { outcomes, rounds, unstable, tree, traces };
    if patches.is_empty() {
        return done(tree, outcomes, 0, traces, None);
    }
    while tree.has_not_visited(Tree::ROOT) {
        if rounds as usize > patches.len() {
            return done(tree, outcomes, rounds, traces, Some("no progress".into()));
        }
        rounds += 1;
        let mut hook = SchedHook {
            meta,
            tree: &mut tree,
            outcomes: &mut outcomes,
            cur: Tree::ROOT,
            unstable: None,
            trace: RoundTrace { path: vec![Tree::ROOT], ..Default::default() },
        };
        let (r, used) = slot.with_engine(test.limit, |engine| {
            engine.set_global(SELECTOR, Value::str(SEL_SCHED));
            let start = engine.total_steps();
            let r = engine.run_entry(&test.entry, &mut hook);
            hook.trace.steps = engine.total_steps() - start;
            (r, engine.budget().used)
        });
        let (cur, unstable, trace) = (hook.cur, hook.unstable, hook.trace);
        traces.push(trace);
        if let Some(reason) = unstable {
            return done(tree, outcomes, rounds, traces, Some(reason));
        }
        match &r {
            Err(Halt::Abort(m)) if m == ABORT_EXHAUSTED => continue,
            Err(Halt::Abort(m)) => return done(tree, outcomes, rounds, traces, Some(m.clone())),
            _ => {}
        }
        if tree.nodes[cur].status != NodeStatus::NotVisited {
            let reason = format!("test ended at a node that was already {:?}", tree.nodes[cur].status);
            return done(tree, outcomes, rounds, traces, Some(reason));
        }
        let outcome = TestOutcome::from_run(&r, used);
        for p in &tree.nodes[cur].patches {
            outcomes.insert(p.clone(), outcome.clone());
        }
        tree.finish(cur, Some(outcome));
    }
    done(tree, outcomes, rounds, traces, None)
}

/// How surviving patches are run against each test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteMode {
    /// Tree exploration with deduplication.
    Scheduled,
    /// One run per patch per test through the selector.
    PerPatch,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TestTree {
    pub test: String,
    pub rounds: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unstable: Option<String>,
    pub tree: TreeDump,
    pub traces: Vec<RoundTrace>,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutcome {
    /// Outcomes of every test each patch was run on.
    pub per_patch: BTreeMap<String, BTreeMap<String, TestOutcome>>,
    /// Patches left undecided by an unstable test.
    pub fallback: Vec<String>,
    pub rounds: u32,
    /// Rounds per test, in suite order.
    pub rounds_per_test: Vec<(String, u32)>,
    pub unstable_count: u32,
    pub unstable_reason: Option<String>,
    pub engine_loads: u32,
    pub steps: u64,
    pub trees: Vec<TestTree>,
}

/// Runs the ordered suite, each test only on patches that passed all earlier ones.
pub fn validate_suite(meta: &MetaProgram, patches: &[String], tests: &[TestCase], mode: SuiteMode, config: SchedConfig) -> SuiteOutcome {
    let mut slot = EngineSlot::new(&meta.woven, config);
    let mut out = SuiteOutcome::default();
    for p in patches {
        out.per_patch.insert(p.clone(), BTreeMap::new());
    }
    let mut survivors: Vec<String> = patches.to_vec();
    for test in tests {
        if survivors.is_empty() {
            break;
        }
        let outcomes = match mode {
            SuiteMode::Scheduled => {
                let one = scheduled_validate_one_test(&mut slot, meta, &survivors, test);
                out.rounds += one.rounds;
                out.rounds_per_test.push((test.name.clone(), one.rounds));
                if config.record {
                    out.trees.push(TestTree {
                        test: test.name.clone(),
                        rounds: one.rounds,
                        unstable: one.unstable.clone(),
                        tree: one.tree.dump(),
                        traces: one.traces,
                    });
                }
                if one.unstable.is_some() {
                    out.unstable_count += 1;
                    out.unstable_reason = one.unstable.clone();
                    for p in survivors.drain(..) {
                        out.per_patch.remove(&p);
                        out.fallback.push(p);
                    }
                    break;
                }
                one.outcomes
            }
            SuiteMode::PerPatch => {
                let mut outcomes = BTreeMap::new();
                for p in &survivors {
                    let outcome = slot.with_engine(test.limit, |engine| {
                        engine.set_global(SELECTOR, Value::str(p.as_str()));
                        let r = engine.run_entry(&test.entry, &mut NoHook);
                        TestOutcome::from_run(&r, engine.budget().used)
                    });
                    outcomes.insert(p.clone(), outcome);
                }
                out.rounds += survivors.len() as u32;
                out.rounds_per_test.push((test.name.clone(), survivors.len() as u32));
                outcomes
            }
        };
        survivors.retain(|p| {
            let o = &outcomes[p];
            out.per_patch.get_mut(p).expect("tracked").insert(test.name.clone(), o.clone());
            o.passed()
        });
    }
    out.engine_loads = slot.loads;
    out.steps = slot.total_steps();
    out
}
