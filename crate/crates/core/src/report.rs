use std::fmt;

use serde::{Deserialize, Serialize};

/// Per-stage bookkeeping for any filter: `kept + dropped == input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub stage: String,
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped_count: usize,
}

impl FilterReport {
    pub fn new(stage: impl Into<String>, input_count: usize, kept_count: usize) -> Self {
        assert!(kept_count <= input_count, "kept more than received");
        Self {
            stage: stage.into(),
            input_count,
            kept_count,
            dropped_count: input_count - kept_count,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.kept_count + self.dropped_count == self.input_count
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: input {} kept {} dropped {}",
            self.stage, self.input_count, self.kept_count, self.dropped_count
        )
    }
}
