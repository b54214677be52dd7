use serde::Serialize;

use super::{RunConfig, Technique};
use crate::patch::{PatchSet, PatchStatus, PatchVerdict};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SetCounters {
    /// Test executions in the main validation pass.
    pub rounds: u64,
    /// `rounds` plus fallback executions.
    pub test_executions: u64,
    pub interpreter_steps: u64,
    pub compile_rounds: u32,
    pub parse_count: u32,
    pub fallback_count: u32,
    pub unstable_count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Bypass {
    pub patch_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SetReport {
    pub index: usize,
    pub fault_location: String,
    pub patches: Vec<String>,
    pub test_order: Vec<String>,
    pub counters: SetCounters,
    /// Steps spent measuring unpatched runs for budgets; not in `counters`.
    pub offline_steps: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bypassed: Vec<Bypass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SetReport {
    pub fn new(index: usize, set: &PatchSet) -> SetReport {
        SetReport {
            index,
            fault_location: set.fault_location.clone(),
            patches: set.patches.iter().map(|p| p.id.clone()).collect(),
            test_order: Vec::new(),
            counters: SetCounters::default(),
            offline_steps: 0,
            bypassed: Vec::new(),
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerdictDiff {
    pub patch_id: String,
    pub validated: PatchStatus,
    pub plain: PatchStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Aggregate {
    /// Seconds.
    pub wall_time: f64,
    pub total_steps: u64,
    pub total_test_executions: u64,
    pub offline_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plain_oracle_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict_diff: Option<Vec<VerdictDiff>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub mode: String,
    pub disabled_techniques: Vec<Technique>,
    pub verdicts: Vec<PatchVerdict>,
    pub patch_sets: Vec<SetReport>,
    pub aggregate: Aggregate,
}

impl ValidationReport {
    pub fn new(mode: &str, cfg: &RunConfig) -> ValidationReport {
        ValidationReport {
            mode: mode.into(),
            disabled_techniques: cfg.disabled_techniques.iter().copied().collect(),
            verdicts: Vec::new(),
            patch_sets: Vec::new(),
            aggregate: Aggregate::default(),
        }
    }

    pub(crate) fn push_set(&mut self, set: SetReport, verdicts: Vec<PatchVerdict>) {
        self.aggregate.total_steps += set.counters.interpreter_steps;
        self.aggregate.total_test_executions += set.counters.test_executions;
        self.aggregate.offline_steps += set.offline_steps;
        self.patch_sets.push(set);
        self.verdicts.extend(verdicts);
    }

    pub(crate) fn finish(&mut self, wall_time: f64) {
        self.aggregate.wall_time = wall_time;
        if let Some(plain) = self.aggregate.plain_oracle_steps {
            self.aggregate.speedup_ratio = Some(plain as f64 / self.aggregate.total_steps.max(1) as f64);
        }
    }

    pub fn verdict(&self, id: &str) -> Option<&PatchVerdict> {
        self.verdicts.iter().find(|v| v.patch_id == id)
    }

    pub fn statuses(&self) -> Vec<(String, PatchStatus)> {
        self.verdicts.iter().map(|v| (v.patch_id.clone(), v.status)).collect()
    }

    /// True when the built-in plain comparison found a different verdict.
    pub fn soundness_violation(&self) -> bool {
        self.aggregate.verdict_diff.as_ref().is_some_and(|d| !d.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with wall time zeroed, for comparing runs.
    pub fn to_json_timeless(&self) -> String {
        let mut r = self.clone();
        r.aggregate.wall_time = 0.0;
        r.to_json()
    }

    /// One row per patch.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["set", "faultLocation", "patch", "status", "viaFallback", "testExecutions", "steps"])
            .expect("write to memory");
        for set in &self.patch_sets {
            for id in &set.patches {
                let Some(v) = self.verdict(id) else { continue };
                w.write_record([
                    set.index.to_string(),
                    set.fault_location.clone(),
                    v.patch_id.clone(),
                    v.status.to_string(),
                    v.via_fallback.to_string(),
                    v.test_executions.to_string(),
                    v.steps().to_string(),
                ])
                .expect("write to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub config: String,
    pub rounds: u64,
    pub test_executions: u64,
    pub steps: u64,
    pub compile_rounds: u64,
    pub parse_count: u64,
    pub fallback_count: u64,
}

impl AblationRow {
    pub(crate) fn from_report(name: &str, r: &ValidationReport) -> AblationRow {
        let sum = |f: &dyn Fn(&super::SetCounters) -> u64| r.patch_sets.iter().map(|s| f(&s.counters)).sum::<u64>();
        AblationRow {
            config: name.into(),
            rounds: sum(&|c| c.rounds),
            test_executions: sum(&|c| c.test_executions),
            steps: sum(&|c| c.interpreter_steps),
            compile_rounds: sum(&|c| c.compile_rounds as u64),
            parse_count: sum(&|c| c.parse_count as u64),
            fallback_count: sum(&|c| c.fallback_count as u64),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Verdict disagreements between configurations; must be empty.
    pub divergences: Vec<String>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == name)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>10} {:>12} {:>8} {:>8} {:>9}\n",
            "config", "rounds", "testExecs", "steps", "compile", "parses", "fallback"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>8} {:>10} {:>12} {:>8} {:>8} {:>9}\n",
                r.config, r.rounds, r.test_executions, r.steps, r.compile_rounds, r.parse_count, r.fallback_count
            ));
        }
        out
    }
}
