//! Capture/replay instrumentation, change-scope analysis, weaving of all
//! patches into one meta-program, and two-round compilation.
//!
//! Generated code talks to the scheduler through reserved `$` globals: the
//! selector picks the active patch, and `$ch_*` variables carry one captured
//! change (control kind, value, and a dirty flag plus new value per scope
//! variable).

mod change;
mod scope;
mod weave;

pub use change::{CapturedChange, ChangeControl};
pub use scope::{analyze_change_scope, purity, reachable_methods, ChangeScope, ScopeConfig};
pub use weave::{
    bypass_dedup, compile_meta, dirty_flag, generate_capture, generate_replay, loc_hash, new_value, partition, weave,
    BypassReason, InterceptConfig, MetaProgram, Site, WeaveError, CH_CTL, CH_ORIG, CH_VAL, INSTRUMENT_GROUP,
    ORIGINAL_OWNER, SELECTOR, SEL_ORIGINAL, SEL_SCHED,
};

use crate::exec::{CallResult, Engine, Halt, NoHook};
use crate::lang::Value;

/// Reads the change left in the `$ch_*` channel by a capture component.
pub fn read_change(engine: &Engine<'_>, scope: &[String]) -> CapturedChange {
    let val = engine.global(CH_VAL).cloned().unwrap_or(Value::Unit);
    let control = match engine.global(CH_CTL) {
        Some(Value::Str(s)) if s == "return" => ChangeControl::Return(val),
        Some(Value::Str(s)) if s == "exc" => ChangeControl::Exception(val),
        Some(Value::Str(s)) if s == "break" => ChangeControl::Break,
        Some(Value::Str(s)) if s == "continue" => ChangeControl::Continue,
        _ => ChangeControl::Normal,
    };
    let writes = scope
        .iter()
        .filter(|x| engine.global(&dirty_flag(x)) == Some(&Value::Bool(true)))
        .map(|x| (x.clone(), engine.global(&new_value(x)).cloned().unwrap_or(Value::Unit)))
        .collect();
    CapturedChange::new(control, writes)
}

/// Loads `change` into the `$ch_*` channel so the site's replay code applies it.
pub fn load_change(engine: &mut Engine<'_>, scope: &[String], change: &CapturedChange) {
    for x in scope {
        match change.data_writes.iter().find(|(k, _)| k == x) {
            Some((_, v)) => {
                engine.set_global(&dirty_flag(x), Value::Bool(true));
                engine.set_global(&new_value(x), v.clone());
            }
            None => engine.set_global(&dirty_flag(x), Value::Bool(false)),
        }
    }
    let (ctl, val) = match &change.control {
        ChangeControl::Return(v) => ("return", v.clone()),
        ChangeControl::Exception(v) => ("exc", v.clone()),
        ChangeControl::Break => ("break", Value::Unit),
        ChangeControl::Continue => ("continue", Value::Unit),
        ChangeControl::Normal | ChangeControl::Timeout => ("normal", Value::Unit),
    };
    engine.set_global(CH_CTL, Value::str(ctl));
    engine.set_global(CH_VAL, val);
    engine.set_global(CH_ORIG, Value::Bool(false));
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Capture {
    pub change: CapturedChange,
    /// Steps the component used; they are not left charged to the budget.
    pub steps: u64,
}

/// Runs one capture component from the current state with `selector` active.
/// The data state (including the `$ch_*` channel), frames and budget are the
/// same afterwards; a timeout is
/// reported as a [`ChangeControl::Timeout`] change.
pub fn run_capture(
    engine: &mut Engine<'_>,
    component: &str,
    selector: &str,
    site_args: &[Value],
    scope: &[String],
) -> Result<Capture, Halt> {
    let budget = engine.budget();
    let depth = engine.frame_depth();
    let saved_selector = engine.global(SELECTOR).cloned().unwrap_or(Value::Unit);
    let channel: Vec<String> = [CH_CTL.to_string(), CH_VAL.to_string()]
        .into_iter()
        .chain(scope.iter().flat_map(|x| [dirty_flag(x), new_value(x)]))
        .collect();
    let saved_channel: Vec<Option<Value>> = channel.iter().map(|c| engine.global(c).cloned()).collect();
    let before = engine.snapshot();
    engine.set_global(SELECTOR, Value::str(selector));
    let mut args = site_args.to_vec();
    args.push(Value::Int(0));
    let r = engine.invoke(component, args, &mut NoHook);
    let steps = engine.budget().used - budget.used;
    engine.set_budget(budget);
    let change = match r {
        Ok(CallResult::Returned(_)) => read_change(engine, scope),
        Ok(CallResult::Threw(e)) => CapturedChange::new(ChangeControl::Exception(e), Vec::new()),
        Err(Halt::Timeout) => {
            engine.truncate_frames(depth);
            engine.restore(&before);
            CapturedChange::timeout()
        }
        Err(h) => return Err(h),
    };
    engine.set_global(SELECTOR, saved_selector);
    for (c, v) in channel.iter().zip(saved_channel) {
        if let Some(v) = v {
            engine.set_global(c, v);
        }
    }
    Ok(Capture { change, steps })
}

#[cfg(test)]
mod tests;
