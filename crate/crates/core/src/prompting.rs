//! System prompts, clarification priming, and feedback messages.

use serde::{Deserialize, Serialize};

use crate::dsl::{builtins, LANGUAGE_NAME};
use crate::parsing::ViolationKind;
use crate::registry::{is_identifier, ApiRegistry, RegistryError};
use crate::report::ExecReport;

pub const FEEDBACK_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("task context needs at least one goal")]
    NoGoals,
    #[error("invalid directive: {0}")]
    BadDirective(String),
}

impl From<RegistryError> for PromptError {
    fn from(_: RegistryError) -> Self {
        PromptError::EmptyRegistry
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskContext {
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub environment: String,
    #[serde(default)]
    pub current_state: String,
    pub goals: Vec<String>,
    #[serde(default)]
    pub solution_examples: Vec<String>,
}

impl TaskContext {
    pub fn new(goal: impl Into<String>) -> Self {
        Self {
            goals: vec![goal.into()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.goals.iter().all(|g| g.trim().is_empty()) {
            return Err(PromptError::NoGoals);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    CodeInTag,
    NumberedList,
    FreeText,
    ConstrainedAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseDirective {
    pub mode: ResponseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_name: Option<String>,
    #[serde(default = "default_language")]
    pub language_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarification_example: Option<String>,
}

fn default_language() -> String {
    LANGUAGE_NAME.to_string()
}

impl ResponseDirective {
    fn with_mode(mode: ResponseMode) -> Self {
        Self {
            mode,
            tag_name: None,
            language_label: default_language(),
            clarification_example: None,
        }
    }

    pub fn code_in_tag(tag: &str) -> Self {
        Self {
            tag_name: Some(tag.to_string()),
            ..Self::with_mode(ResponseMode::CodeInTag)
        }
    }

    pub fn numbered_list() -> Self {
        Self::with_mode(ResponseMode::NumberedList)
    }

    pub fn free_text() -> Self {
        Self::with_mode(ResponseMode::FreeText)
    }

    pub fn constrained_action() -> Self {
        Self::with_mode(ResponseMode::ConstrainedAction)
    }

    pub fn with_clarification(mut self, example: &str) -> Self {
        self.clarification_example = Some(example.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        match (&self.mode, &self.tag_name) {
            (ResponseMode::CodeInTag, None) => Err(PromptError::BadDirective(
                "code_in_tag requires tag_name".into(),
            )),
            (ResponseMode::CodeInTag, Some(t)) if !is_identifier(t) => Err(
                PromptError::BadDirective(format!("tag_name `{t}` is not an identifier")),
            ),
            (ResponseMode::CodeInTag, Some(_)) => Ok(()),
            (_, Some(_)) => Err(PromptError::BadDirective(
                "tag_name is only allowed with code_in_tag".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Tag to extract code from; `code` when unset.
    pub fn tag(&self) -> &str {
        self.tag_name.as_deref().unwrap_or("code")
    }

    fn clause(&self) -> String {
        match self.mode {
            ResponseMode::CodeInTag => {
                let tag = self.tag();
                format!(
                    "Write your solution as a {lang} program that uses only the functions \
                     listed above, and put the program inside <{tag}>...</{tag}> tags. \
                     Keep any explanation outside the tags.",
                    lang = self.language_label
                )
            }
            ResponseMode::NumberedList => "Answer only as a numbered list (1., 2., 3., ...) \
                 with one step per line and no other text."
                .to_string(),
            ResponseMode::FreeText => "Answer in plain text.".to_string(),
            ResponseMode::ConstrainedAction => "Reply with exactly one line of the form \
                 `forward <meters>, turn <degrees>` and nothing else. The turn is applied \
                 first; positive degrees turn left (counterclockwise)."
                .to_string(),
        }
    }
}

/// Syntax reminder for the command language.
pub fn language_summary(label: &str) -> String {
    format!(
        "{label} syntax: `x = expr`, calls `f(a, b)`, `if cond {{ ... }} else {{ ... }}`, \
         `while cond {{ ... }}`, `for i in range(a, b) {{ ... }}`, `return expr`, lists `[a, b]`, \
         records `{{k: v}}` with `r.k`, operators `+ - * / == != < <= > >= and or not`. \
         Angles are in degrees unless stated otherwise; `#` starts a comment."
    )
}

/// Frames an example dialogue as a demonstration of asking for help.
/// Returns an empty fragment for an empty example.
pub fn build_clarification_priming(example: &str) -> String {
    if example.trim().is_empty() {
        return String::new();
    }
    format!(
        "If the request is ambiguous or a detail is missing, ask the user a clarifying \
         question before writing any code. For example:\n{example}\n"
    )
}

fn section(out: &mut String, title: &str, body: &str) {
    if body.trim().is_empty() {
        return;
    }
    out.push_str("## ");
    out.push_str(title);
    out.push('\n');
    out.push_str(body.trim_end());
    out.push_str("\n\n");
}

fn bullets(items: &[String]) -> String {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| format!("- {s}\n"))
        .collect()
}

/// Assembles the system prompt. Sections keep a fixed order and empty
/// optional sections are omitted; the directive clause is always last.
pub fn build_system_prompt(
    context: &TaskContext,
    registry: &ApiRegistry,
    directive: &ResponseDirective,
) -> Result<String, PromptError> {
    context.validate()?;
    directive.validate()?;
    let mut api = registry.render_prompt_section()?;
    if directive.mode == ResponseMode::CodeInTag {
        let helpers: Vec<&str> = builtins().iter().map(|b| b.name).collect();
        api.push_str(&format!("\nBuilt-in helpers: {}.\n", helpers.join(", ")));
        api.push_str(&format!("{}\n", language_summary(&directive.language_label)));
    }
    let mut out = String::new();
    out.push_str(
        "You are an assistant that helps a user control a robot. You can only act through \
         the high-level functions listed below; do not invent other functions or \
         parameters.\n\n",
    );
    section(&mut out, "Available functions", &api);
    section(&mut out, "Environment", &context.environment);
    section(&mut out, "Current state", &context.current_state);
    section(&mut out, "Constraints", &bullets(&context.constraints));
    section(&mut out, "Goals", &bullets(&context.goals));
    let examples: String = context
        .solution_examples
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| format!("{}\n\n", s.trim_end()))
        .collect();
    section(&mut out, "Solution examples", &examples);
    if let Some(example) = &directive.clarification_example {
        let priming = build_clarification_priming(example);
        section(&mut out, "Asking questions", &priming);
    }
    out.push_str("## Response format\n");
    out.push_str(&directive.clause());
    out.push('\n');
    Ok(out)
}

fn truncate_chars(text: &mut String, limit: usize) {
    if text.chars().count() <= limit {
        return;
    }
    let marker = "\n[truncated]";
    let keep = limit - marker.chars().count();
    let cut = text.char_indices().nth(keep).map_or(text.len(), |(i, _)| i);
    text.truncate(cut);
    text.push_str(marker);
}

fn mentions_orientation(note: &str) -> bool {
    let n = note.to_lowercase();
    ["heading", "yaw", "orientation", "facing"]
        .iter()
        .any(|k| n.contains(k))
}

/// Drafts the correction message sent back to the model after a run.
pub fn build_feedback_message(report: &ExecReport) -> String {
    let mut out = String::new();
    if report.success {
        out.push_str(&format!(
            "The goal was achieved. Final metric: {:.3}. The run took {} steps.\n",
            report.goal_metric, report.duration_steps
        ));
    } else {
        out.push_str(&format!(
            "The goal was not achieved. Final metric: {:.3}. Collisions: {}. Steps: {}.\n",
            report.goal_metric, report.collisions, report.duration_steps
        ));
    }
    if let Some(reason) = &report.halted_reason {
        out.push_str(&format!("Execution halted: {reason}.\n"));
    }
    let unknown: Vec<&str> = report
        .violations
        .iter()
        .filter(|v| v.kind == ViolationKind::UnknownFunction)
        .map(|v| v.subject.as_str())
        .collect();
    if !unknown.is_empty() {
        out.push_str("These functions do not exist: ");
        out.push_str(&unknown.join(", "));
        out.push_str(". Use only the listed functions.\n");
    }
    for v in &report.violations {
        out.push_str(&format!("- {v}\n"));
    }
    let mut orientation = false;
    for note in &report.notes {
        out.push_str(&format!("Note: {note}\n"));
        orientation |= mentions_orientation(note);
    }
    if orientation {
        out.push_str(
            "Check the robot's orientation: update the heading so it faces the direction \
             of travel before moving or reading sensors.\n",
        );
    }
    if !report.success {
        out.push_str("Please revise the program.\n");
    }
    truncate_chars(&mut out, FEEDBACK_LIMIT);
    out
}

/// Feedback draft for a proposal the user rejected.
pub fn build_rejection_message(reason: &str) -> String {
    let mut out = format!("The proposed program was rejected: {reason}. Please revise it.");
    truncate_chars(&mut out, FEEDBACK_LIMIT);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Pos;
    use crate::parsing::Violation;
    use crate::registry::{ApiFunction, ParamSpec};

    fn registry() -> ApiRegistry {
        ApiRegistry::new()
            .register(ApiFunction::primitive(
                "fly_to",
                vec![ParamSpec::number("x", "meters")],
                None,
                "flies",
            ))
            .unwrap()
            .register(ApiFunction::primitive("takeoff", vec![], None, "takes off"))
            .unwrap()
    }

    fn context() -> TaskContext {
        TaskContext {
            constraints: vec!["stay below 10 m".into()],
            environment: "a field with a turbine".into(),
            current_state: "landed at the origin".into(),
            goals: vec!["inspect the turbine".into()],
            solution_examples: vec!["takeoff()".into()],
        }
    }

    #[test]
    fn section_order_and_directive_last() {
        let p = build_system_prompt(&context(), &registry(), &ResponseDirective::code_in_tag("code"))
            .unwrap();
        let order = [
            "You are",
            "## Available functions",
            "## Environment",
            "## Current state",
            "## Constraints",
            "## Goals",
            "## Solution examples",
            "## Response format",
        ];
        let idx: Vec<usize> = order.iter().map(|s| p.find(s).unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(p.trim_end().ends_with("Keep any explanation outside the tags."));
        assert!(p.contains("<code>...</code>"));
    }

    #[test]
    fn numbered_list_clause() {
        let p = build_system_prompt(&context(), &registry(), &ResponseDirective::numbered_list())
            .unwrap();
        let last = p.trim_end().lines().last().unwrap();
        assert!(last.starts_with("Answer only as a numbered list"));
    }

    #[test]
    fn deterministic_and_names_once() {
        let d = ResponseDirective::code_in_tag("code");
        let a = build_system_prompt(&context(), &registry(), &d).unwrap();
        let b = build_system_prompt(&context(), &registry(), &d).unwrap();
        assert_eq!(a, b);
        let api = registry().render_prompt_section().unwrap();
        assert_eq!(api.matches("fly_to").count(), 1);
    }

    #[test]
    fn errors() {
        let d = ResponseDirective::code_in_tag("code");
        assert_eq!(
            build_system_prompt(&context(), &ApiRegistry::new(), &d),
            Err(PromptError::EmptyRegistry)
        );
        let mut c = context();
        c.goals.clear();
        assert_eq!(build_system_prompt(&c, &registry(), &d), Err(PromptError::NoGoals));
        let mut bad = d.clone();
        bad.tag_name = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn priming() {
        let f = build_clarification_priming("ask which room");
        assert!(f.contains("ask which room"));
        assert!(build_clarification_priming("").is_empty());
        let d = ResponseDirective::code_in_tag("code").with_clarification("ask which room");
        let p = build_system_prompt(&context(), &registry(), &d).unwrap();
        assert!(p.find("ask which room").unwrap() < p.find("## Response format").unwrap());
    }

    #[test]
    fn feedback_cases() {
        let r = ExecReport::new(false, 3.0, 1, vec![], None, 10).with_note("heading not updated");
        assert!(build_feedback_message(&r).contains("orientation"));

        let r = ExecReport::new(true, 0.12, 0, vec![], None, 40);
        let m = build_feedback_message(&r);
        assert!(m.contains("goal was achieved") && m.contains("0.120"));

        let v = Violation {
            kind: ViolationKind::UnknownFunction,
            subject: "fly_up".into(),
            expected: "a registered function".into(),
            found: "fly_up".into(),
            location: Pos::new(2, 1),
            suggestion: None,
        };
        let r = ExecReport::new(false, 0.0, 0, vec![v], None, 0);
        assert!(build_feedback_message(&r).contains("fly_up"));

        let long = ExecReport::new(false, 0.0, 0, vec![], None, 0).with_note("x".repeat(5000));
        assert!(build_feedback_message(&long).chars().count() <= FEEDBACK_LIMIT);
    }

    #[test]
    fn rejection_carries_reason() {
        assert!(build_rejection_message("wrong direction").contains("wrong direction"));
    }
}
