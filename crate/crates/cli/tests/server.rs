use std::path::PathBuf;
use std::time::Duration;

use looppilot::promptstore::PromptStore;
use looppilot::scenario::Scenario;
use looppilot_cli::server::{router, AppState};
use serde_json::{json, Value};
use tokio::sync::watch;

const HOVER: &str = r#"
name = "hover"
[world]
type = "drone3d"
[context]
goals = ["take off and reach 5 m altitude"]
[directive]
mode = "code_in_tag"
tag_name = "code"
[llm]
adapter = "scripted"
path = "TRANSCRIPT"
[goal]
predicate = "reach_pose"
params = { position = [0.0, 0.0, 5.0] }
"#;

struct Server {
    base: String,
    state: AppState,
    stop: watch::Sender<bool>,
    _dir: tempfile::TempDir,
}

/// A server with one hover session whose model replies with `replies`.
async fn server(replies: &[&str]) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = vec![json!({"scenario_id": "hover", "created_at": "x", "adapter_kind": "scripted"})];
    for r in replies {
        lines.push(json!({"role": "user", "content": "go"}));
        lines.push(json!({"role": "assistant", "content": r}));
    }
    let transcript = dir.path().join("t.jsonl");
    let text: Vec<String> = lines.iter().map(Value::to_string).collect();
    std::fs::write(&transcript, text.join("\n")).unwrap();
    let scenario = Scenario::parse(&HOVER.replace("TRANSCRIPT", transcript.to_str().unwrap())).unwrap();

    let store = PromptStore::open(&dir.path().join("store")).unwrap();
    let (stop, stop_rx) = watch::channel(false);
    let state = AppState::new(Some(store), stop_rx);
    state.add_session(scenario, None, false).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base,
        state,
        stop,
        _dir: dir,
    }
}

async fn post(s: &Server, path: &str, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("{}{path}", s.base))
        .json(&body)
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

async fn get(s: &Server, path: &str) -> Value {
    reqwest::get(format!("{}{path}", s.base)).await.unwrap().json().await.unwrap()
}

/// Reads event-stream frames until `n` have arrived or 300 ms pass
/// without one. Returns (event name, parsed data) pairs.
async fn frames(resp: &mut reqwest::Response, n: usize) -> Vec<(String, Value)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        match tokio::time::timeout(Duration::from_millis(300), resp.chunk()).await {
            Ok(Ok(Some(bytes))) => buf.push_str(&String::from_utf8_lossy(&bytes)),
            _ => break,
        }
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut name = String::from("message");
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            if !data.is_empty() {
                out.push((name, serde_json::from_str(&data).unwrap()));
            }
        }
    }
    out
}

async fn subscribe(s: &Server, id: &str, from: u64) -> reqwest::Response {
    reqwest::get(format!("{}/sessions/{id}/events?from={from}", s.base)).await.unwrap()
}

fn kinds(f: &[(String, Value)]) -> Vec<String> {
    f.iter().map(|(_, v)| v["type"].as_str().unwrap().to_string()).collect()
}

const GOOD: &str = "<code>takeoff()\nfly_to(0, 0, 5)</code>";

#[tokio::test(flavor = "multi_thread")]
async fn lists_sessions() {
    let s = server(&[GOOD]).await;
    let v = get(&s, "/sessions").await;
    assert_eq!(v["sessions"][0]["id"], "s1");
    assert_eq!(v["sessions"][0]["scenario"], "hover");
    assert_eq!(v["sessions"][0]["pending"], false);
}

#[tokio::test(flavor = "multi_thread")]
async fn approval_round_trip_streams_report() {
    let s = server(&[GOOD]).await;
    let (code, v) = post(&s, "/sessions/s1/approval", json!({"verdict": "approve"})).await;
    assert_eq!(code, 409);
    assert_eq!(v["error"], "nothing_pending");

    let (code, v) = post(&s, "/sessions/s1/message", json!({"text": "go"})).await;
    assert_eq!(code, 200, "{v}");
    assert_eq!(v["pending"]["violations"], json!([]));

    let mut stream = subscribe(&s, "s1", 0).await;
    let before = frames(&mut stream, 100).await;
    let count = before.len();
    assert_eq!(
        kinds(&before),
        ["world_state", "turn_added", "turn_added", "code_proposed", "approval_required"]
    );
    for (i, (name, v)) in before.iter().enumerate() {
        assert_eq!(name, "ui_event");
        assert_eq!(v["seq"], i as u64);
        assert_eq!(v["session_id"], "s1");
    }

    let (code, v) = post(&s, "/sessions/s1/approval", json!({"verdict": "approve", "actor": "ana"})).await;
    assert_eq!(code, 200, "{v}");
    assert_eq!(v["report"]["success"], true);
    let after = frames(&mut stream, 100).await;
    let k = kinds(&after);
    assert_eq!(after[0].1["seq"], count as u64);
    assert_eq!(after[0].1["payload"]["actor"], "ana");
    let first_report = k.iter().position(|x| x == "report").unwrap();
    assert!(k[..first_report].iter().filter(|x| *x == "execution_update").count() >= 3);
    assert_eq!(after[first_report].1["payload"]["report"]["success"], true);
    assert!(k.contains(&"world_state".to_string()));
    let _ = s.stop.send(true);
}

#[tokio::test(flavor = "multi_thread")]
async fn reconnect_has_no_gaps_or_duplicates() {
    let s = server(&[GOOD]).await;
    post(&s, "/sessions/s1/message", json!({"text": "go"})).await;
    post(&s, "/sessions/s1/approval", json!({"verdict": "approve"})).await;
    let mut all = subscribe(&s, "s1", 0).await;
    let full = frames(&mut all, 1000).await;
    let mut resumed = subscribe(&s, "s1", 3).await;
    let tail = frames(&mut resumed, 1000).await;
    assert_eq!(tail.len(), full.len() - 3);
    assert_eq!(&full[3..], &tail[..]);

    let resp = reqwest::Client::new()
        .get(format!("{}/sessions/s1/events", s.base))
        .header("Last-Event-ID", "4")
        .send()
        .await
        .unwrap();
    let mut resp = resp;
    let from_header = frames(&mut resp, 1).await;
    assert_eq!(from_header[0].1["seq"], 5);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_tail_delivers_new_frames() {
    let s = server(&[GOOD]).await;
    let mut stream = subscribe(&s, "s1", 0).await;
    assert_eq!(frames(&mut stream, 1).await.len(), 1);
    post(&s, "/sessions/s1/message", json!({"text": "go"})).await;
    let next = frames(&mut stream, 4).await;
    assert_eq!(kinds(&next), ["turn_added", "turn_added", "code_proposed", "approval_required"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_closes_streams() {
    let s = server(&[GOOD]).await;
    let mut stream = subscribe(&s, "s1", 0).await;
    frames(&mut stream, 1).await;
    s.stop.send(true).unwrap();
    let end = tokio::time::timeout(Duration::from_secs(2), async {
        while let Ok(Some(_)) = stream.chunk().await {}
    })
    .await;
    assert!(end.is_ok());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_gets_error_frame() {
    let s = server(&[]).await;
    let mut resp = subscribe(&s, "nope", 0).await;
    assert_eq!(resp.status().as_u16(), 404);
    let f = frames(&mut resp, 1).await;
    assert_eq!(f[0].0, "error");
    assert_eq!(f[0].1["error"], "unknown_session");
    let (code, _) = post(&s, "/sessions/nope/message", json!({"text": "hi"})).await;
    assert_eq!(code, 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn veto_is_structured_and_world_is_untouched() {
    let s = server(&["<code>takeoff()\nfly_up(5)</code>"]).await;
    post(&s, "/sessions/s1/message", json!({"text": "go"})).await;
    let (code, v) = post(&s, "/sessions/s1/approval", json!({"verdict": "approve"})).await;
    assert_eq!(code, 422);
    assert_eq!(v["error"], "vetoed");
    let viol = &v["violations"][0];
    assert_eq!(viol["subject"], "fly_up");
    assert_eq!(viol["location"]["line"], 2);
    let mut stream = subscribe(&s, "s1", 0).await;
    let k = kinds(&frames(&mut stream, 100).await);
    assert_eq!(k.iter().filter(|x| *x == "world_state").count(), 1);
    assert!(!k.contains(&"execution_update".to_string()));
}

#[tokio::test(flavor = "multi_thread")]
async fn reject_returns_draft() {
    let s = server(&[GOOD]).await;
    post(&s, "/sessions/s1/message", json!({"text": "go"})).await;
    let (code, v) =
        post(&s, "/sessions/s1/approval", json!({"verdict": "reject", "reason": "bad path"})).await;
    assert_eq!(code, 200);
    assert!(v["feedback_draft"].as_str().unwrap().contains("bad path"));
    assert_eq!(get(&s, "/sessions").await["sessions"][0]["pending"], false);
}

#[tokio::test(flavor = "multi_thread")]
async fn create_session_from_path() {
    let s = server(&[]).await;
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/blocks_logo.toml");
    let (code, v) = post(&s, "/sessions", json!({"path": path})).await;
    assert_eq!(code, 201, "{v}");
    assert_eq!(v["id"], "s2");
    let (code, v) = post(&s, "/sessions", json!({"scenario": "name = 1"})).await;
    assert_eq!(code, 400, "{v}");
    let _ = &s.state;
}

#[tokio::test(flavor = "multi_thread")]
async fn store_endpoints_mirror_the_store() {
    let s = server(&[]).await;
    let dialogue = json!([
        {"role": "user", "content": "fly a square"},
        {"role": "assistant", "content": "<code>takeoff()</code>"}
    ]);
    let (code, v) = post(
        &s,
        "/store",
        json!({"op": "add", "category": "aerial", "title": "square", "dialogue": dialogue}),
    )
    .await;
    assert_eq!(code, 200, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    let (code, _) = post(
        &s,
        "/store",
        json!({"op": "add", "category": "aerial", "title": "again", "dialogue": dialogue}),
    )
    .await;
    assert_eq!(code, 409);
    let (code, v) = post(&s, "/store", json!({"op": "vote", "entry_id": id, "delta": 1, "voter": "a"})).await;
    assert_eq!(code, 200);
    assert_eq!(v["score"], 1);
    let listed = get(&s, "/store?category=aerial").await;
    assert_eq!(listed["entries"][0]["id"], id.as_str());
    assert_eq!(listed["entries"][0]["score"], 1);

    let mut stream = subscribe(&s, "s1", 1).await;
    let f = frames(&mut stream, 2).await;
    assert_eq!(kinds(&f), ["store_changed", "store_changed"]);
    assert_eq!(f[1].1["payload"]["action"], "voted");
}
