use std::fmt;

use serde::{Deserialize, Serialize};

use crate::exec::Control;
use crate::lang::Value;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ChangeControl {
    Normal,
    Break,
    Continue,
    Return(Value),
    Exception(Value),
    Timeout,
}

impl From<Control> for ChangeControl {
    fn from(c: Control) -> Self {
        match c {
            Control::Normal => ChangeControl::Normal,
            Control::Break => ChangeControl::Break,
            Control::Continue => ChangeControl::Continue,
            Control::Return(v) => ChangeControl::Return(v),
            Control::Exception(v) => ChangeControl::Exception(v),
        }
    }
}

/// One statement's effect: its control outcome and the new values of the
/// scope variables it changed. Ordering and equality use the canonical form
/// (writes sorted by name), so it can key tree edges directly.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapturedChange {
    pub control: ChangeControl,
    pub data_writes: Vec<(String, Value)>,
}

impl CapturedChange {
    pub fn new(control: ChangeControl, mut data_writes: Vec<(String, Value)>) -> Self {
        data_writes.sort();
        data_writes.dedup_by(|a, b| a.0 == b.0);
        CapturedChange { control, data_writes }
    }

    pub fn timeout() -> Self {
        CapturedChange { control: ChangeControl::Timeout, data_writes: Vec::new() }
    }

    pub fn is_timeout(&self) -> bool {
        self.control == ChangeControl::Timeout
    }
}

impl fmt::Display for CapturedChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.control {
            ChangeControl::Normal => f.write_str("normal")?,
            ChangeControl::Break => f.write_str("break")?,
            ChangeControl::Continue => f.write_str("continue")?,
            ChangeControl::Return(v) => write!(f, "return {v}")?,
            ChangeControl::Exception(v) => write!(f, "exception {v}")?,
            ChangeControl::Timeout => f.write_str("timeout")?,
        }
        f.write_str(" {")?;
        for (i, (k, v)) in self.data_writes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}
