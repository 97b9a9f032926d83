//! Non-interactive scenario runs and transcript replays.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | goal reached |
//! | 1 | I/O failure writing outputs, or a replay whose event log differs |
//! | 2 | scenario error (including live runs without auto-approval) |
//! | 3 | adapter error |
//! | 4 | goal not reached |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{
    ChatAdapter, GatewayError, LiveAdapter, ReplayAdapter, Role, ScriptedAdapter, Transcript,
    TranscriptMeta,
};
use crate::report::ExecReport;
use crate::scenario::{AdapterKind, Mode, Scenario, ScenarioError};
use crate::session::{DialogOutcome, LoggedEvent, Session, SessionError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_SCENARIO: i32 = 2;
pub const EXIT_ADAPTER: i32 = 3;
pub const EXIT_GOAL: i32 = 4;

/// Actor recorded for approvals granted by a non-interactive run.
pub const SCRIPTED_ACTOR: &str = "scripted";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmChoice {
    Live,
    Scripted(PathBuf),
    Replay(PathBuf),
}

impl std::str::FromStr for LlmChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "live" => Ok(LlmChoice::Live),
            Some(("scripted", p)) if !p.is_empty() => Ok(LlmChoice::Scripted(p.into())),
            Some(("replay", p)) if !p.is_empty() => Ok(LlmChoice::Replay(p.into())),
            _ => Err(format!("expected live, scripted:PATH or replay:PATH, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub llm: Option<LlmChoice>,
    pub auto_approve: bool,
    pub seed: Option<u64>,
    pub record: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Adapter(#[from] GatewayError),
    #[error(transparent)]
    Session(SessionError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl From<SessionError> for RunError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Gateway(g) => RunError::Adapter(g),
            SessionError::Scenario(s) => RunError::Scenario(s),
            other => RunError::Session(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Session(_) => EXIT_SCENARIO,
            RunError::Adapter(_) => EXIT_ADAPTER,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub success: bool,
    pub report: Option<ExecReport>,
    pub dialog: Option<DialogOutcome>,
    pub turns: usize,
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: RunSummary,
    pub session: Session,
}

impl RunOutcome {
    pub fn event_log(&self) -> &[LoggedEvent] {
        self.session.events()
    }
}

/// Builds the adapter for `choice`; scripted and replay choices also return
/// the loaded transcript.
pub fn make_adapter(
    scenario: &Scenario,
    choice: &LlmChoice,
) -> Result<(Box<dyn ChatAdapter>, Option<Transcript>), RunError> {
    Ok(match choice {
        LlmChoice::Live => {
            let cfg = scenario.llm.live.clone().unwrap_or_default();
            (Box::new(LiveAdapter::from_env(cfg)?), None)
        }
        LlmChoice::Scripted(p) => {
            let t = Transcript::load(p)?;
            (Box::new(ScriptedAdapter::from_transcript(&t)), Some(t))
        }
        LlmChoice::Replay(p) => {
            let t = Transcript::load(p)?;
            (Box::new(ReplayAdapter::from_transcript(&t)), Some(t))
        }
    })
}

/// The adapter a scenario asks for when no override is given.
pub fn scenario_choice(s: &Scenario) -> Result<LlmChoice, ScenarioError> {
    let path = || {
        s.transcript_path()
            .ok_or_else(|| ScenarioError::new("llm.path", "missing transcript path"))
    };
    Ok(match s.llm.adapter {
        AdapterKind::Live => LlmChoice::Live,
        AdapterKind::Scripted => LlmChoice::Scripted(path()?),
        AdapterKind::Replay => LlmChoice::Replay(path()?),
    })
}

/// Runs `scenario` to completion without a human at the keyboard.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.world.seed = seed;
    }
    scenario.auto_approve |= opts.auto_approve;
    scenario.validate()?;
    let choice = match &opts.llm {
        Some(c) => c.clone(),
        None => scenario_choice(&scenario)?,
    };
    if choice == LlmChoice::Live && !scenario.auto_approve {
        return Err(ScenarioError::new(
            "auto_approve",
            "interactive mode required: live runs need --auto-approve or the repl",
        )
        .into());
    }
    let (adapter, script) = make_adapter(&scenario, &choice)?;
    let mut session = Session::start(&scenario, adapter)?;
    let actor = if scenario.auto_approve { None } else { Some(SCRIPTED_ACTOR) };

    let mut dialog = None;
    if scenario.mode == Mode::Dialog {
        dialog = Some(session.run_dialog_loop(scenario.dialog_steps, actor)?);
    } else {
        drive_conversation(&mut session, &scenario, script.as_ref(), actor)?;
    }

    let report = session.last_report().cloned();
    let success = match dialog {
        Some(d) => matches!(d, DialogOutcome::Reached { .. }),
        None => report.as_ref().is_some_and(|r| r.success),
    };
    let summary = RunSummary {
        scenario: scenario.name.clone(),
        success,
        report,
        dialog,
        turns: session.history().iter().filter(|m| m.role == Role::Assistant).count(),
    };
    if let Some(dir) = &opts.out {
        write_outputs(dir, &summary, &session)?;
    }
    if let Some(path) = &opts.record {
        let mut meta = TranscriptMeta::new(&scenario.name, session.adapter_kind());
        let mut embedded = scenario.clone();
        embedded.llm.path = None;
        embedded.llm.adapter = AdapterKind::Live;
        meta.extra.insert("scenario".into(), embedded.to_toml().into());
        meta.extra.insert("auto_approve".into(), scenario.auto_approve.into());
        let events: Vec<serde_json::Value> = session
            .events()
            .iter()
            .map(|e| serde_json::to_value(e).expect("event serializes"))
            .collect();
        meta.extra.insert("event_log".into(), events.into());
        meta.extra.insert("event_log_digest".into(), session.event_log_digest().into());
        session.record(meta)?.save(path)?;
    }
    let exit_code = if success { EXIT_OK } else { EXIT_GOAL };
    Ok(RunOutcome {
        exit_code,
        summary,
        session,
    })
}

/// Feeds user turns until the goal is reached or no user turn is left.
/// User turns come from the transcript when there is one; in feedback mode
/// the drafted feedback is used once the transcript runs out.
fn drive_conversation(
    session: &mut Session,
    scenario: &Scenario,
    script: Option<&Transcript>,
    actor: Option<&str>,
) -> Result<(), RunError> {
    let mut scripted_user: Vec<String> = script
        .map(|t| {
            t.messages
                .iter()
                .filter(|m| m.role == Role::User)
                .map(|m| m.content.clone())
                .collect()
        })
        .unwrap_or_default();
    scripted_user.reverse();
    let mut next = scripted_user.pop().unwrap_or_else(|| scenario.opening_message());
    for _ in 0..scenario.max_turns {
        session.user_message(&next)?;
        if let (Some(actor), Some(p)) = (actor, session.pending()) {
            if p.violations.is_empty() {
                session.approve(actor)?;
            }
        }
        if session.last_report().is_some_and(|r| r.success) {
            break;
        }
        next = match scripted_user.pop() {
            Some(m) => m,
            None if scenario.mode == Mode::Feedback => match session.feedback_draft() {
                Some(d) => d.to_string(),
                None => break,
            },
            None => break,
        };
    }
    Ok(())
}

fn write_outputs(dir: &Path, summary: &RunSummary, session: &Session) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(dir.join("report.json"), report + "\n")?;
    std::fs::write(dir.join("events.jsonl"), session.event_log_jsonl())?;
    Ok(())
}

/// Loads and runs a scenario file; errors map to exit codes.
pub fn cmd_run(path: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let scenario = Scenario::load(path)?;
    run_scenario(&scenario, opts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Identical { events: usize },
    Differs { first_seq: usize, recorded: String, replayed: String },
}

/// Re-runs a recorded session against the replay adapter and compares the
/// event logs.
pub fn cmd_replay(path: &Path) -> Result<ReplayVerdict, RunError> {
    let transcript = Transcript::load(path)?;
    let meta = &transcript.meta;
    let text = meta
        .extra
        .get("scenario")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ScenarioError::new("scenario", "transcript carries no embedded scenario"))?;
    let scenario = Scenario::parse(text)?;
    let recorded: Vec<String> = meta
        .extra
        .get("event_log")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ScenarioError::new("event_log", "transcript carries no event log"))?
        .iter()
        .map(|v| serde_json::to_string(v).expect("value serializes"))
        .collect();
    let opts = RunOptions {
        llm: Some(LlmChoice::Replay(path.to_path_buf())),
        auto_approve: meta.extra.get("auto_approve").and_then(|v| v.as_bool()).unwrap_or(false),
        ..RunOptions::default()
    };
    let outcome = run_scenario(&scenario, &opts)?;
    let replayed: Vec<String> = outcome
        .event_log()
        .iter()
        .map(|e| {
            let v = serde_json::to_value(e).expect("event serializes");
            serde_json::to_string(&v).expect("value serializes")
        })
        .collect();
    let n = recorded.len().max(replayed.len());
    for i in 0..n {
        let a = recorded.get(i).cloned().unwrap_or_default();
        let b = replayed.get(i).cloned().unwrap_or_default();
        if a != b {
            return Ok(ReplayVerdict::Differs {
                first_seq: i,
                recorded: a,
                replayed: b,
            });
        }
    }
    Ok(ReplayVerdict::Identical { events: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llm_flag_parsing() {
        assert_eq!("live".parse::<LlmChoice>().unwrap(), LlmChoice::Live);
        assert_eq!(
            "scripted:a.jsonl".parse::<LlmChoice>().unwrap(),
            LlmChoice::Scripted("a.jsonl".into())
        );
        assert!("scripted:".parse::<LlmChoice>().is_err());
        assert!("other".parse::<LlmChoice>().is_err());
    }
}
