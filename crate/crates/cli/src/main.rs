use std::io::{self, BufRead};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use looppilot::runner::{LlmChoice, RunOptions};
use looppilot_cli::commands::{self, StoreCmd};
use looppilot_cli::repl::run_repl;

#[derive(Parser)]
#[command(name = "looppilot", version, about = "Language-model-directed robot sessions in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion without interaction.
    Run {
        scenario: PathBuf,
        /// live, scripted:PATH or replay:PATH; defaults to the scenario's adapter.
        #[arg(long)]
        llm: Option<LlmChoice>,
        /// Approve clean proposals without asking.
        #[arg(long)]
        auto_approve: bool,
        /// Overrides the world seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes a replayable transcript.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Directory for report.json and events.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chat with the model and approve proposals at the prompt.
    Repl {
        scenario: PathBuf,
        #[arg(long)]
        llm: Option<LlmChoice>,
    },
    /// Re-run a recorded transcript and compare event logs.
    Replay { transcript: PathBuf },
    /// Manage the prompt store.
    Store {
        #[arg(long, default_value = "promptstore")]
        dir: PathBuf,
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Serve the console HTTP and event-stream endpoints.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        auto_approve: bool,
        /// Scenarios to open as sessions at startup.
        scenarios: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Add a dialogue from a transcript file.
    Add {
        #[arg(long)]
        category: String,
        #[arg(long)]
        title: String,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
    /// List entries, best-scored first.
    List {
        #[arg(long)]
        category: Option<String>,
    },
    /// Vote an entry up or down.
    Vote {
        id: String,
        #[arg(long, conflicts_with = "up")]
        down: bool,
        #[arg(long)]
        up: bool,
        #[arg(long, default_value = "cli")]
        voter: String,
    },
    /// Write all entries and votes to one JSONL file.
    Export { path: PathBuf },
    /// Merge entries and votes from an export file.
    Import { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout();
    let mut err = io::stderr();
    let code = match cli.command {
        Command::Run {
            scenario,
            llm,
            auto_approve,
            seed,
            record,
            out: out_dir,
        } => {
            let opts = RunOptions {
                llm,
                auto_approve,
                seed,
                record,
                out: out_dir,
            };
            commands::run(&scenario, &opts, &mut out, &mut err)
        }
        Command::Repl { scenario, llm } => match commands::open_session(&scenario, llm) {
            Ok(mut session) => {
                let stdin = io::stdin();
                let mut input = stdin.lock();
                match run_repl(&mut session, &mut input as &mut dyn BufRead, &mut out) {
                    Ok(()) => 0,
                    Err(e) => {
                        eprintln!("error: {e}");
                        1
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        Command::Replay { transcript } => commands::replay(&transcript, &mut out, &mut err),
        Command::Store { dir, command } => {
            let cmd = match command {
                StoreCommand::Add {
                    category,
                    title,
                    transcript,
                    tags,
                } => StoreCmd::Add {
                    category,
                    title,
                    transcript,
                    tags,
                },
                StoreCommand::List { category } => StoreCmd::List { category },
                StoreCommand::Vote { id, down, voter, .. } => StoreCmd::Vote {
                    id,
                    delta: if down { -1 } else { 1 },
                    voter,
                },
                StoreCommand::Export { path } => StoreCmd::Export { path },
                StoreCommand::Import { path } => StoreCmd::Import { path },
            };
            commands::store(&dir, cmd, &mut out, &mut err)
        }
        Command::Serve {
            port,
            store,
            auto_approve,
            scenarios,
        } => commands::serve(port, store.as_deref(), &scenarios, auto_approve, &mut out, &mut err),
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
