use serde::{Deserialize, Serialize};

use crate::parsing::Violation;

/// Outcome of one execution, fed back to the model and shown to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub success: bool,
    /// World-defined metric, e.g. catch miss distance or remaining range.
    pub goal_metric: f64,
    pub collisions: u32,
    pub violations: Vec<Violation>,
    pub halted_reason: Option<String>,
    pub duration_steps: u64,
    /// Free-form observations (e.g. a missed heading update).
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExecReport {
    /// Builds a report; `success` is forced false when collisions or
    /// violations are present.
    pub fn new(
        goal_reached: bool,
        goal_metric: f64,
        collisions: u32,
        violations: Vec<Violation>,
        halted_reason: Option<String>,
        duration_steps: u64,
    ) -> Self {
        let success =
            goal_reached && collisions == 0 && violations.is_empty() && halted_reason.is_none();
        Self {
            success,
            goal_metric,
            collisions,
            violations,
            halted_reason,
            duration_steps,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}
