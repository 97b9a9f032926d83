//! Subcommand bodies. Each returns the process exit code and writes
//! human-readable output to the given sinks.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use looppilot::gateway::Transcript;
use looppilot::promptstore::{format_row, NewEntry, PromptStore};
use looppilot::runner::{
    cmd_replay, cmd_run, make_adapter, scenario_choice, LlmChoice, ReplayVerdict, RunOptions,
    EXIT_IO, EXIT_OK, EXIT_SCENARIO,
};
use looppilot::scenario::Scenario;
use looppilot::session::Session;
use tokio::sync::watch;

use crate::server::{router, AppState};

pub fn run(path: &Path, opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cmd_run(path, opts) {
        Ok(outcome) => {
            let s = &outcome.summary;
            let verdict = if s.success { "goal reached" } else { "goal not reached" };
            let _ = writeln!(out, "{}: {verdict} after {} model turn(s)", s.scenario, s.turns);
            if let Some(r) = &s.report {
                let _ = writeln!(
                    out,
                    "metric {:.3}, collisions {}, steps {}",
                    r.goal_metric, r.collisions, r.duration_steps
                );
            }
            if let Some(d) = &s.dialog {
                let _ = writeln!(out, "dialog: {d:?}");
            }
            outcome.exit_code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cmd_replay(path) {
        Ok(ReplayVerdict::Identical { events }) => {
            let _ = writeln!(out, "identical ({events} events)");
            EXIT_OK
        }
        Ok(ReplayVerdict::Differs {
            first_seq,
            recorded,
            replayed,
        }) => {
            let _ = writeln!(out, "differs at event {first_seq}");
            let _ = writeln!(out, "  recorded: {recorded}");
            let _ = writeln!(out, "  replayed: {replayed}");
            EXIT_IO
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Opens a session for the repl; live adapters need no auto-approval here.
pub fn open_session(path: &Path, llm: Option<LlmChoice>) -> Result<Session, String> {
    let scenario = Scenario::load(path).map_err(|e| e.to_string())?;
    let choice = match llm {
        Some(c) => c,
        None => scenario_choice(&scenario).map_err(|e| e.to_string())?,
    };
    let (adapter, _) = make_adapter(&scenario, &choice).map_err(|e| e.to_string())?;
    Session::start(&scenario, adapter).map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
pub enum StoreCmd {
    Add {
        category: String,
        title: String,
        transcript: PathBuf,
        tags: Vec<String>,
    },
    List {
        category: Option<String>,
    },
    Vote {
        id: String,
        delta: i32,
        voter: String,
    },
    Export {
        path: PathBuf,
    },
    Import {
        path: PathBuf,
    },
}

pub fn store(dir: &Path, cmd: StoreCmd, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = (|| -> Result<(), Box<dyn std::error::Error>> {
        let store = PromptStore::open(dir)?;
        match cmd {
            StoreCmd::Add {
                category,
                title,
                transcript,
                tags,
            } => {
                let dialogue = Transcript::load(&transcript)?;
                let id = store.add(NewEntry {
                    category,
                    title,
                    dialogue,
                    tags,
                })?;
                writeln!(out, "{id}")?;
            }
            StoreCmd::List { category } => {
                let entries = match category {
                    Some(c) => store.list(&c)?,
                    None => store.all()?,
                };
                writeln!(out, "{:>5}  {:<16}  {:<20}  title", "score", "id", "created")?;
                for e in &entries {
                    writeln!(out, "{}", format_row(e))?;
                }
            }
            StoreCmd::Vote { id, delta, voter } => {
                let score = store.vote(&id, delta, &voter)?;
                writeln!(out, "{id} score {score}")?;
            }
            StoreCmd::Export { path } => {
                let n = store.export(&path)?;
                writeln!(out, "exported {n} records")?;
            }
            StoreCmd::Import { path } => {
                let n = store.import(&path)?;
                writeln!(out, "imported {n} new entries")?;
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_SCENARIO
        }
    }
}

/// Binds, prints the bound address, and serves until ctrl-c.
pub fn serve(
    port: u16,
    store_dir: Option<&Path>,
    scenarios: &[PathBuf],
    auto_approve: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_IO;
        }
    };
    let store = match store_dir.map(PromptStore::open).transpose() {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_SCENARIO;
        }
    };
    let (stop_tx, stop_rx) = watch::channel(false);
    let state = AppState::new(store, stop_rx);
    for path in scenarios {
        let added = Scenario::load(path)
            .map_err(|e| e.to_string())
            .and_then(|s| state.add_session(s, None, auto_approve).map_err(|e| e.to_string()));
        match added {
            Ok(id) => {
                let _ = writeln!(out, "session {id}: {}", path.display());
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_SCENARIO;
            }
        }
    }
    rt.block_on(async move {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let listener = match tokio::net::TcpListener::bind(addr).await {
            Ok(l) => l,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_IO;
            }
        };
        let bound = listener.local_addr().map(|a| a.port()).unwrap_or(port);
        let _ = writeln!(out, "listening on port {bound}");
        let _ = out.flush();
        let shutdown = async move {
            let _ = tokio::signal::ctrl_c().await;
            let _ = stop_tx.send(true);
        };
        match axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown)
            .await
        {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_IO
            }
        }
    })
}
