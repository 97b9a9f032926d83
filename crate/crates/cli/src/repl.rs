//! Line-oriented interactive session.

use std::io::{BufRead, Write};

use looppilot::parsing::extract_tagged;
use looppilot::prompting::ResponseMode;
use looppilot::session::{Session, SessionError};

const HELP: &str = "commands: /approve, /reject <reason>, /feedback, /help, /quit";

/// Actor recorded for approvals typed at the prompt.
pub const REPL_ACTOR: &str = "operator";

fn show_pending(session: &Session, out: &mut dyn Write) -> std::io::Result<()> {
    let Some(p) = session.pending() else {
        return Ok(());
    };
    writeln!(out, "--- proposed code ---")?;
    for (i, line) in p.source.lines().enumerate() {
        writeln!(out, "{:>3} | {line}", i + 1)?;
    }
    if p.violations.is_empty() {
        writeln!(out, "--- no violations; /approve to run ---")?;
    } else {
        writeln!(out, "--- {} violation(s); approval is blocked ---", p.violations.len())?;
        for v in &p.violations {
            writeln!(out, "  {v}")?;
        }
    }
    Ok(())
}

/// Assistant text with the extracted code blocks removed.
fn prose(session: &Session, reply: &str) -> String {
    let directive = &session.config().directive;
    if directive.mode != ResponseMode::CodeInTag {
        return reply.trim().to_string();
    }
    let ex = extract_tagged(reply, directive.tag());
    let mut text = String::new();
    let mut last = 0;
    let chars: Vec<char> = reply.chars().collect();
    for b in &ex.blocks {
        text.extend(&chars[last..b.span.0]);
        last = b.span.1;
    }
    text.extend(&chars[last..]);
    text.trim().to_string()
}

fn report_err(e: SessionError, out: &mut dyn Write) -> std::io::Result<()> {
    match e {
        SessionError::VetoedByValidator(v) => {
            writeln!(out, "approval vetoed:")?;
            for x in v {
                writeln!(out, "  {x}")?;
            }
            Ok(())
        }
        other => writeln!(out, "{other}"),
    }
}

fn exchange(
    session: &mut Session,
    result: Result<String, SessionError>,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    match result {
        Ok(reply) => {
            writeln!(out, "assistant: {}", prose(session, &reply))?;
            show_pending(session, out)
        }
        Err(e) => report_err(e, out),
    }
}

/// Reads lines until EOF or `/quit`.
pub fn run_repl(
    session: &mut Session,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "{HELP}")?;
    let mut line = String::new();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let (cmd, rest) = text.split_once(' ').unwrap_or((text, ""));
        match cmd {
            "/quit" | "/exit" => break,
            "/help" => writeln!(out, "{HELP}")?,
            "/approve" => match session.approve(REPL_ACTOR) {
                Ok(report) => {
                    let verdict = if report.success { "goal reached" } else { "goal not reached" };
                    writeln!(
                        out,
                        "executed: {verdict} (metric {:.3}, collisions {})",
                        report.goal_metric, report.collisions
                    )?;
                    if let Some(r) = &report.halted_reason {
                        writeln!(out, "halted: {r}")?;
                    }
                    if let Some(d) = session.feedback_draft() {
                        writeln!(out, "feedback draft (send with /feedback):\n{d}")?;
                    }
                }
                Err(e) => report_err(e, out)?,
            },
            "/reject" => match session.reject(rest.trim()) {
                Ok(draft) => writeln!(out, "feedback draft (send with /feedback):\n{draft}")?,
                Err(e) => report_err(e, out)?,
            },
            "/feedback" => {
                let r = session.send_feedback();
                exchange(session, r, out)?;
            }
            c if c.starts_with('/') => writeln!(out, "unknown command `{c}`; {HELP}")?,
            _ => {
                let r = session.user_message(text);
                exchange(session, r, out)?;
            }
        }
    }
    Ok(())
}
