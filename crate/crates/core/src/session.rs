//! The user-on-the-loop engine.
//!
//! A session owns its world, registry and adapter. Model replies become
//! pending proposals; nothing touches the world until a proposal is
//! approved, and every state change is appended to the event log.

use serde::{Deserialize, Serialize};

use crate::dsl::{execute, parse_program, ExecLimits, Program, Value};
use crate::gateway::{send_checked, ChatAdapter, ChatMessage, GatewayError, Role, Transcript, TranscriptMeta};
use crate::parsing::{
    classify_response, extract_code_fences, extract_tagged, parse_action_line, validate_program,
    ActionCommand, ResponseClass, Violation,
};
use crate::prompting::{
    build_feedback_message, build_rejection_message, build_system_prompt, PromptError,
    ResponseDirective, ResponseMode, TaskContext,
};
use crate::registry::{ApiRegistry, FunctionDescriptor, RegistryError};
use crate::report::ExecReport;
use crate::scenario::{Goal, Mode, Scenario, ScenarioError};
use crate::worlds::nav2d::Nav2d;
use crate::worlds::World;

pub const AUTO_ACTOR: &str = "auto";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("nothing pending")]
    NothingPending,
    #[error("approval vetoed: the proposal has {} validator violation(s)", .0.len())]
    VetoedByValidator(Vec<Violation>),
    #[error("no feedback draft to send")]
    NoDraft,
    #[error("operation needs {0} mode")]
    WrongMode(&'static str),
    #[error("dialog actions need an approving actor or auto_approve")]
    ApprovalRequired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStarted { scenario: String, mode: Mode, world_hash: String },
    TurnAdded { role: Role, content: String },
    ReplyClassified { class: ResponseClass, warnings: Vec<String> },
    CodeProposed { source: String, violations: Vec<Violation> },
    ProposalSuperseded,
    SyntaxRejected { error: String },
    ActionProposed { action: ActionCommand },
    MalformedReply { reason: String },
    ApprovalGranted { actor: String },
    ApprovalRejected { reason: String },
    ExecutionStarted,
    ExecutionUpdate { index: usize, call: String, args: Vec<Value> },
    ExecutionFinished { report: ExecReport },
    WorldState { snapshot: serde_json::Value },
    ObservationSent { text: String },
    FeedbackDrafted { text: String },
    SkillAdded { name: String, signature: String },
    DialogFinished { outcome: DialogOutcome },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pending {
    pub source: String,
    pub program: Program,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DialogOutcome {
    Reached { steps: u32 },
    Exhausted { steps: u32 },
    Malformed { step: u32 },
}

/// Everything a session needs besides its world and adapter.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scenario_id: String,
    pub mode: Mode,
    pub auto_approve: bool,
    pub registry: ApiRegistry,
    pub context: TaskContext,
    pub directive: ResponseDirective,
    pub limits: ExecLimits,
    pub seed: u64,
    pub goal: Goal,
}

impl SessionConfig {
    pub fn from_scenario(s: &Scenario) -> Result<Self, ScenarioError> {
        Ok(Self {
            scenario_id: s.name.clone(),
            mode: s.mode,
            auto_approve: s.auto_approve,
            registry: s.registry()?,
            context: s.context.clone(),
            directive: s.directive.clone(),
            limits: s.limits,
            seed: s.world.seed,
            goal: s.goal()?,
        })
    }
}

pub struct Session {
    config: SessionConfig,
    world: Box<dyn World>,
    adapter: Box<dyn ChatAdapter>,
    history: Vec<ChatMessage>,
    pending: Option<Pending>,
    events: Vec<LoggedEvent>,
    last_report: Option<ExecReport>,
    feedback_draft: Option<String>,
}

impl Session {
    pub fn start(scenario: &Scenario, adapter: Box<dyn ChatAdapter>) -> Result<Self, SessionError> {
        let config = SessionConfig::from_scenario(scenario)?;
        let world = scenario.build_world()?;
        Self::new(config, world, adapter)
    }

    pub fn new(
        config: SessionConfig,
        world: Box<dyn World>,
        adapter: Box<dyn ChatAdapter>,
    ) -> Result<Self, SessionError> {
        let system = build_system_prompt(&config.context, &config.registry, &config.directive)?;
        // Fail at start, not at the first approval, when the world lacks an
        // effect the registry promises.
        let mut probe = world;
        config.registry.bind(probe.as_mut())?;
        let mut s = Self {
            world: probe,
            adapter,
            history: vec![ChatMessage::system(system)],
            pending: None,
            events: Vec::new(),
            last_report: None,
            feedback_draft: None,
            config,
        };
        let started = SessionEvent::SessionStarted {
            scenario: s.config.scenario_id.clone(),
            mode: s.config.mode,
            world_hash: s.world.state_hash(),
        };
        s.log(started);
        s.log_world();
        Ok(s)
    }

    fn log(&mut self, event: SessionEvent) {
        let seq = self.events.len() as u64;
        self.events.push(LoggedEvent { seq, event });
    }

    fn log_world(&mut self) {
        let snapshot = self.world.snapshot();
        self.log(SessionEvent::WorldState { snapshot });
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn history(&self) -> &[ChatMessage] {
        &self.history
    }

    pub fn pending(&self) -> Option<&Pending> {
        self.pending.as_ref()
    }

    pub fn world(&self) -> &dyn World {
        &*self.world
    }

    pub fn registry(&self) -> &ApiRegistry {
        &self.config.registry
    }

    pub fn last_report(&self) -> Option<&ExecReport> {
        self.last_report.as_ref()
    }

    pub fn feedback_draft(&self) -> Option<&str> {
        self.feedback_draft.as_deref()
    }

    pub fn adapter_kind(&self) -> &'static str {
        self.adapter.kind()
    }

    /// One JSON object per line.
    pub fn event_log_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    pub fn event_log_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.event_log_jsonl().as_bytes()))
    }

    pub fn record(&self, meta: TranscriptMeta) -> Result<Transcript, GatewayError> {
        Transcript::record(meta, &self.history)
    }

    fn exchange(&mut self, text: &str) -> Result<String, SessionError> {
        self.history.push(ChatMessage::user(text));
        self.log(SessionEvent::TurnAdded {
            role: Role::User,
            content: text.to_string(),
        });
        let reply = match send_checked(self.adapter.as_mut(), &self.history) {
            Ok(r) => r,
            Err(e) => {
                // Keep the history alternating so the session stays usable.
                self.history.pop();
                return Err(e.into());
            }
        };
        self.history.push(reply.clone());
        self.log(SessionEvent::TurnAdded {
            role: Role::Assistant,
            content: reply.content.clone(),
        });
        Ok(reply.content)
    }

    /// Sends `text`, parses the reply per the directive and, when it holds
    /// a program, makes it the pending proposal.
    pub fn user_message(&mut self, text: &str) -> Result<String, SessionError> {
        let reply = self.exchange(text)?;
        self.handle_reply(&reply)?;
        Ok(reply)
    }

    fn handle_reply(&mut self, reply: &str) -> Result<(), SessionError> {
        let directive = self.config.directive.clone();
        let class = classify_response(reply, &directive);
        let (source, warnings) = match directive.mode {
            ResponseMode::CodeInTag => {
                let ex = extract_tagged(reply, directive.tag());
                (program_source(&ex.contents()), ex.warnings)
            }
            _ => (None, Vec::new()),
        };
        self.log(SessionEvent::ReplyClassified { class, warnings });
        let Some(source) = source else {
            return Ok(());
        };
        if self.pending.take().is_some() {
            self.log(SessionEvent::ProposalSuperseded);
        }
        let program = match parse_program(&source) {
            Ok(p) => p,
            Err(e) => {
                self.log(SessionEvent::SyntaxRejected { error: e.to_string() });
                self.draft(format!(
                    "The program could not be parsed: {e}. Please fix the syntax."
                ));
                return Ok(());
            }
        };
        let violations = validate_program(&program, &self.config.registry);
        self.log(SessionEvent::CodeProposed {
            source: source.clone(),
            violations: violations.clone(),
        });
        let clean = violations.is_empty();
        if !clean {
            let report = ExecReport::new(false, 0.0, 0, violations.clone(), None, 0);
            self.draft(build_feedback_message(&report));
        }
        self.pending = Some(Pending {
            source,
            program,
            violations,
        });
        if clean && self.config.auto_approve {
            self.approve(AUTO_ACTOR)?;
        }
        Ok(())
    }

    fn draft(&mut self, text: String) {
        self.log(SessionEvent::FeedbackDrafted { text: text.clone() });
        self.feedback_draft = Some(text);
    }

    /// Executes the pending proposal. Proposals with violations are vetoed
    /// and stay pending.
    pub fn approve(&mut self, actor: &str) -> Result<ExecReport, SessionError> {
        let pending = self.pending.as_ref().ok_or(SessionError::NothingPending)?;
        if !pending.violations.is_empty() {
            return Err(SessionError::VetoedByValidator(pending.violations.clone()));
        }
        let pending = self.pending.take().expect("checked above");
        self.log(SessionEvent::ApprovalGranted {
            actor: actor.to_string(),
        });
        self.log(SessionEvent::ExecutionStarted);
        let collisions_before = self.world.collisions();
        let trace = {
            let mut bound = self.config.registry.bind(self.world.as_mut())?;
            execute(&pending.program, &mut bound, self.config.limits, self.config.seed)
        };
        for (index, call) in trace.api_calls.iter().enumerate() {
            self.log(SessionEvent::ExecutionUpdate {
                index,
                call: call.name.clone(),
                args: call.args.clone(),
            });
        }
        let status = self.config.goal.evaluate(&*self.world);
        let report = ExecReport::new(
            status.reached,
            status.metric,
            self.world.collisions() - collisions_before,
            Vec::new(),
            trace.halted_reason().map(|h| h.to_string()),
            trace.steps,
        );
        self.log(SessionEvent::ExecutionFinished {
            report: report.clone(),
        });
        self.log_world();
        self.draft(build_feedback_message(&report));
        self.last_report = Some(report.clone());
        Ok(report)
    }

    /// Drops the pending proposal; returns the feedback draft.
    pub fn reject(&mut self, reason: &str) -> Result<String, SessionError> {
        self.pending.take().ok_or(SessionError::NothingPending)?;
        self.log(SessionEvent::ApprovalRejected {
            reason: reason.to_string(),
        });
        let text = build_rejection_message(reason);
        self.draft(text.clone());
        Ok(text)
    }

    /// Sends the current feedback draft as the next user message.
    pub fn send_feedback(&mut self) -> Result<String, SessionError> {
        let draft = self.feedback_draft.take().ok_or(SessionError::NoDraft)?;
        self.user_message(&draft)
    }

    /// Adds a composed function to the registry, e.g. a skill learned in
    /// an earlier task.
    pub fn add_skill(&mut self, descriptor: &FunctionDescriptor) -> Result<(), SessionError> {
        self.config.registry = self.config.registry.add_descriptor(descriptor)?;
        let func = self.config.registry.get(&descriptor.name).expect("just added");
        let (name, signature) = (func.name.clone(), func.signature_line());
        self.log(SessionEvent::SkillAdded { name, signature });
        Ok(())
    }

    /// Prompt that a fresh session with the current registry would use.
    pub fn current_system_prompt(&self) -> Result<String, SessionError> {
        Ok(build_system_prompt(
            &self.config.context,
            &self.config.registry,
            &self.config.directive,
        )?)
    }

    /// Perception-action loop: scene text out, one `forward, turn` action
    /// back, applied as a unit. A malformed reply gets one reprompt.
    pub fn run_dialog_loop(
        &mut self,
        max_steps: u32,
        actor: Option<&str>,
    ) -> Result<DialogOutcome, SessionError> {
        if self.config.mode != Mode::Dialog {
            return Err(SessionError::WrongMode("dialog"));
        }
        let actor = match actor {
            Some(a) => a.to_string(),
            None if self.config.auto_approve => AUTO_ACTOR.to_string(),
            None => return Err(SessionError::ApprovalRequired),
        };
        let Goal::NearObject { label, .. } = self.config.goal.clone() else {
            return Err(ScenarioError::new("goal", "dialog mode needs a near_object goal").into());
        };
        let mut outcome = None;
        for step in 1..=max_steps {
            if self.config.goal.evaluate(&*self.world).reached {
                outcome = Some(DialogOutcome::Reached { steps: step - 1 });
                break;
            }
            let scene = self.nav().describe_scene().to_text();
            let text = format!(
                "{scene}\nGoal: reach the {label}. Reply with `forward <meters>, turn <degrees>`."
            );
            self.log(SessionEvent::ObservationSent { text: text.clone() });
            let reply = self.exchange(&text)?;
            let action = match parse_action_line(reply.trim()) {
                Ok(a) => a,
                Err(e) => {
                    self.log(SessionEvent::MalformedReply { reason: e.reason });
                    let retry = self.exchange(
                        "Your reply did not follow the required format. Reply with exactly one \
                         line: `forward <meters>, turn <degrees>`.",
                    )?;
                    match parse_action_line(retry.trim()) {
                        Ok(a) => a,
                        Err(e) => {
                            self.log(SessionEvent::MalformedReply { reason: e.reason });
                            outcome = Some(DialogOutcome::Malformed { step });
                            break;
                        }
                    }
                }
            };
            self.apply_action(action, &actor)?;
        }
        let outcome = match outcome {
            Some(o) => o,
            None if self.config.goal.evaluate(&*self.world).reached => {
                DialogOutcome::Reached { steps: max_steps }
            }
            None => DialogOutcome::Exhausted { steps: max_steps },
        };
        self.log(SessionEvent::DialogFinished { outcome });
        Ok(outcome)
    }

    fn nav(&self) -> &Nav2d {
        self.world
            .as_any()
            .downcast_ref::<Nav2d>()
            .expect("dialog mode is validated to use nav2d")
    }

    fn apply_action(&mut self, action: ActionCommand, actor: &str) -> Result<(), SessionError> {
        self.log(SessionEvent::ActionProposed { action });
        self.log(SessionEvent::ApprovalGranted {
            actor: actor.to_string(),
        });
        self.log(SessionEvent::ExecutionStarted);
        let nav = self
            .world
            .as_any_mut()
            .downcast_mut::<Nav2d>()
            .expect("dialog mode is validated to use nav2d");
        nav.turn(action.turn_deg);
        let halted = nav.forward(action.forward_m).err().map(|e| e.to_string());
        let status = self.config.goal.evaluate(&*self.world);
        let report = ExecReport::new(status.reached, status.metric, 0, Vec::new(), halted, 2);
        self.log(SessionEvent::ExecutionFinished {
            report: report.clone(),
        });
        self.log_world();
        self.last_report = Some(report);
        Ok(())
    }
}

/// Joins extracted blocks into one program; fenced code inside a tag is
/// unwrapped.
fn program_source(blocks: &[&str]) -> Option<String> {
    if blocks.is_empty() {
        return None;
    }
    let parts: Vec<String> = blocks
        .iter()
        .map(|b| {
            let fences = extract_code_fences(b);
            if fences.blocks.is_empty() {
                b.trim().to_string()
            } else {
                fences.contents().join("\n")
            }
        })
        .collect();
    Some(parts.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedAdapter;

    const DRONE: &str = r#"
name = "hover"
[world]
type = "drone3d"
[context]
goals = ["take off and reach 5 m altitude"]
[directive]
mode = "code_in_tag"
tag_name = "code"
[llm]
adapter = "live"
[goal]
predicate = "reach_pose"
params = { position = [0.0, 0.0, 5.0] }
"#;

    fn session(replies: &[&str], auto: bool) -> Session {
        let mut s = Scenario::parse(DRONE).unwrap();
        s.auto_approve = auto;
        Session::start(&s, Box::new(ScriptedAdapter::new(replies.iter().copied()))).unwrap()
    }

    fn types(s: &Session) -> Vec<String> {
        s.events()
            .iter()
            .map(|e| serde_json::to_value(&e.event).unwrap()["type"].as_str().unwrap().to_string())
            .collect()
    }

    #[test]
    fn start_places_system_prompt() {
        let s = session(&[], false);
        assert_eq!(s.history().len(), 1);
        assert_eq!(s.history()[0].role, Role::System);
        assert_eq!(s.world().kind(), crate::worlds::WorldKind::Drone3d);
    }

    #[test]
    fn valid_code_becomes_pending() {
        let mut s = session(&["Here: <code>takeoff()\nfly_to(0, 0, 5)</code>"], false);
        let hash = s.world().state_hash();
        s.user_message("go").unwrap();
        let p = s.pending().unwrap();
        assert!(p.violations.is_empty());
        assert_eq!(s.world().state_hash(), hash);
        let report = s.approve("alice").unwrap();
        assert!(report.success, "{report:?}");
        assert!(s.pending().is_none());
        let t = types(&s);
        let start = t.iter().position(|x| x == "execution_started").unwrap();
        assert_eq!(t[start - 1], "approval_granted");
    }

    #[test]
    fn hallucinated_call_is_vetoed() {
        let mut s = session(&["<code>takeoff()\nfly_up(5)</code>"], false);
        s.user_message("go").unwrap();
        assert_eq!(s.pending().unwrap().violations.len(), 1);
        assert!(matches!(s.approve("alice"), Err(SessionError::VetoedByValidator(_))));
        assert!(s.feedback_draft().unwrap().contains("fly_up"));
    }

    #[test]
    fn prose_reply_sets_nothing() {
        let mut s = session(&["Sure, I will fly the drone upward."], false);
        s.user_message("go").unwrap();
        assert!(s.pending().is_none());
        assert!(s.events().iter().any(|e| matches!(
            e.event,
            SessionEvent::ReplyClassified { class: ResponseClass::UnstructuredResponse, .. }
        )));
        assert!(matches!(s.approve("alice"), Err(SessionError::NothingPending)));
    }

    #[test]
    fn new_proposal_replaces_pending() {
        let mut s = session(&["<code>takeoff()</code>", "<code>land()</code>"], false);
        s.user_message("a").unwrap();
        s.user_message("b").unwrap();
        assert_eq!(s.pending().unwrap().source, "land()");
        assert!(types(&s).contains(&"proposal_superseded".to_string()));
    }

    #[test]
    fn reject_drafts_feedback() {
        let mut s = session(&["<code>takeoff()</code>"], false);
        s.user_message("a").unwrap();
        let draft = s.reject("wrong direction").unwrap();
        assert!(draft.contains("wrong direction"));
        assert!(s.pending().is_none());
    }

    #[test]
    fn auto_approve_logs_actor() {
        let mut s = session(&["<code>takeoff()\nfly_to(0, 0, 5)</code>"], true);
        s.user_message("go").unwrap();
        assert!(s.events().iter().any(|e| matches!(
            &e.event,
            SessionEvent::ApprovalGranted { actor } if actor == AUTO_ACTOR
        )));
        assert!(s.last_report().unwrap().success);
    }

    #[test]
    fn fenced_code_inside_tag() {
        let source = program_source(&["\n```robocmd\ntakeoff()\n```\n"]).unwrap();
        assert_eq!(source, "takeoff()");
    }

    #[test]
    fn exhausted_script_keeps_history_alternating() {
        let mut s = session(&[], false);
        assert!(s.user_message("go").is_err());
        assert_eq!(s.history().len(), 1);
    }
}
