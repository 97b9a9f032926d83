//! Console-facing event frames derived from the session log.

use looppilot::session::SessionEvent;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiEventType {
    TurnAdded,
    CodeProposed,
    ApprovalRequired,
    ExecutionUpdate,
    WorldState,
    Report,
    StoreChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiEvent {
    #[serde(rename = "type")]
    pub kind: UiEventType,
    pub session_id: String,
    /// Per-session position, starting at 0 with no gaps.
    pub seq: u64,
    pub payload: Value,
}

/// Frames produced by one session event, without ids or sequence numbers.
/// Bookkeeping events the console does not render map to nothing.
pub fn frames_for(event: &SessionEvent) -> Vec<(UiEventType, Value)> {
    use UiEventType::*;
    match event {
        SessionEvent::TurnAdded { role, content } => {
            vec![(TurnAdded, json!({ "role": role, "content": content }))]
        }
        SessionEvent::CodeProposed { source, violations } => vec![
            (CodeProposed, json!({ "source": source, "violations": violations })),
            (
                ApprovalRequired,
                json!({ "approvable": violations.is_empty(), "violations": violations.len() }),
            ),
        ],
        SessionEvent::SyntaxRejected { error } => {
            vec![(CodeProposed, json!({ "syntax_error": error, "violations": [] }))]
        }
        SessionEvent::ActionProposed { action } => {
            vec![(CodeProposed, json!({ "action": action.render(), "violations": [] }))]
        }
        SessionEvent::MalformedReply { reason } => {
            vec![(CodeProposed, json!({ "malformed": reason, "violations": [] }))]
        }
        SessionEvent::ApprovalGranted { actor } => {
            vec![(ExecutionUpdate, json!({ "phase": "approved", "actor": actor }))]
        }
        SessionEvent::ApprovalRejected { reason } => {
            vec![(ExecutionUpdate, json!({ "phase": "rejected", "reason": reason }))]
        }
        SessionEvent::ExecutionStarted => vec![(ExecutionUpdate, json!({ "phase": "started" }))],
        SessionEvent::ExecutionUpdate { index, call, args } => vec![(
            ExecutionUpdate,
            json!({ "phase": "call", "index": index, "call": call, "args": args }),
        )],
        SessionEvent::ExecutionFinished { report } => {
            vec![(Report, json!({ "kind": "execution", "report": report }))]
        }
        SessionEvent::FeedbackDrafted { text } => {
            vec![(Report, json!({ "kind": "feedback_draft", "text": text }))]
        }
        SessionEvent::DialogFinished { outcome } => {
            vec![(Report, json!({ "kind": "dialog", "outcome": outcome }))]
        }
        SessionEvent::WorldState { snapshot } => vec![(WorldState, snapshot.clone())],
        SessionEvent::SessionStarted { .. }
        | SessionEvent::ReplyClassified { .. }
        | SessionEvent::ProposalSuperseded
        | SessionEvent::ObservationSent { .. }
        | SessionEvent::SkillAdded { .. } => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposal_requires_approval() {
        let frames = frames_for(&SessionEvent::CodeProposed {
            source: "takeoff()".into(),
            violations: vec![],
        });
        let kinds: Vec<_> = frames.iter().map(|f| f.0).collect();
        assert_eq!(kinds, [UiEventType::CodeProposed, UiEventType::ApprovalRequired]);
        assert_eq!(frames[1].1["approvable"], true);
    }

    #[test]
    fn type_names_are_snake_case() {
        let e = UiEvent {
            kind: UiEventType::StoreChanged,
            session_id: "s1".into(),
            seq: 0,
            payload: json!({}),
        };
        assert_eq!(serde_json::to_value(&e).unwrap()["type"], "store_changed");
    }
}
