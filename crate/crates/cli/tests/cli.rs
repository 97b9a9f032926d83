use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_looppilot"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn run_exit_codes() {
    let p = |n| scenario(n).to_str().unwrap().to_string();
    assert_eq!(run(&["run", &p("drone_inspection.toml")]).0, 0);
    assert_eq!(run(&["run", &p("blocks_logo.toml")]).0, 0);
    assert_eq!(run(&["run", &p("unreachable.toml")]).0, 4);
    let (code, _, err) = run(&["run", &p("live_hover.toml")]);
    assert_eq!(code, 2);
    assert!(err.contains("interactive mode required"), "{err}");
    let (code, _, _) = run(&["run", "/nonexistent.toml"]);
    assert_eq!(code, 2);
}

#[test]
fn record_replay_identical() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("session.jsonl");
    let out = dir.path().join("out");
    let s = scenario("drone_inspection.toml");
    let (code, _, err) = run(&[
        "run",
        s.to_str().unwrap(),
        "--record",
        rec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.join("report.json").is_file());
    let (code, stdout, _) = run(&["replay", rec.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("identical"), "{stdout}");
}

#[test]
fn repl_commands() {
    let mut child = bin()
        .args(["repl", scenario("drone_inspection.toml").to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let input = "/approve\n\
                 Inspect the tower.\n\
                 Radius 10 m at 5 m altitude, 8 viewpoints.\n\
                 /reject bad path\n\
                 /quit\n";
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("nothing pending"), "{text}");
    assert!(text.contains("assistant: Before I write the flight plan"), "{text}");
    assert!(text.contains("--- proposed code ---"), "{text}");
    assert!(text.contains("  1 | takeoff()"), "{text}");
    assert!(!text.contains("<code>"), "{text}");
    assert!(text.contains("feedback draft"), "{text}");
    assert!(text.contains("bad path"), "{text}");
}

#[test]
fn store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let st = store.to_str().unwrap();
    let t1 = scenario("transcripts/drone_inspection.jsonl");
    let t2 = scenario("transcripts/unreachable.jsonl");
    let (code, id1, err) = run(&[
        "store", "--dir", st, "add", "--category", "aerial", "--title", "circle", "--transcript",
        t1.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (_, id2, _) = run(&[
        "store", "--dir", st, "add", "--category", "aerial", "--title", "hover", "--transcript",
        t2.to_str().unwrap(),
    ]);
    let (id1, id2) = (id1.trim(), id2.trim());
    assert_eq!(run(&["store", "--dir", st, "vote", id2]).0, 0);
    assert_eq!(run(&["store", "--dir", st, "vote", id1, "--down"]).0, 0);
    let (_, table, _) = run(&["store", "--dir", st, "list", "--category", "aerial"]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows[0].contains(id2) && rows[0].trim_start().starts_with('1'), "{table}");
    assert!(rows[1].contains(id1) && rows[1].trim_start().starts_with("-1"), "{table}");
    let (code, _, _) = run(&["store", "--dir", st, "add", "--category", "cooking", "--title", "x", "--transcript", t1.to_str().unwrap()]);
    assert_eq!(code, 2);

    let export = dir.path().join("export.jsonl");
    assert_eq!(run(&["store", "--dir", st, "export", export.to_str().unwrap()]).0, 0);
    let other = dir.path().join("other");
    let (code, out, _) = run(&["store", "--dir", other.to_str().unwrap(), "import", export.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("imported 2"), "{out}");
    let (_, again, _) = run(&["store", "--dir", other.to_str().unwrap(), "list", "--category", "aerial"]);
    assert_eq!(again, table);
}

#[test]
fn serve_prints_bound_port() {
    let mut child = bin()
        .args(["serve", "--port", "0", scenario("blocks_logo.toml").to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    assert!(lines.next().unwrap().unwrap().starts_with("session s1"));
    let line = lines.next().unwrap().unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    let port: u16 = line.strip_prefix("listening on port ").unwrap().parse().unwrap();
    assert!(port > 0);
}
