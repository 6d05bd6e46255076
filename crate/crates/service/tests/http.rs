use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fbmarl::config::RunConfig;
use fbmarl::orchestrate::{run_config, seed_dir};
use fbmarl::rollout::{load_replay, REPLAY_SCHEMA_VERSION};
use fbmarl_service::{router, AppState, API_VERSION};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const TINY: &str = r#"
seeds = [5]
generations = 3
[training]
iterations = 2
episodes = 2
max_steps = 40
[feedback]
mode = "session"
"#;

fn app(dir: &Path, phase_timeout: u64) -> (Router, RunConfig) {
    let mut cfg = RunConfig::from_toml(TINY, dir, false).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg.feedback.phase_timeout_secs = phase_timeout;
    (router(AppState::new(cfg.clone(), None)), cfg)
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn start(app: &Router) -> String {
    let (s, v) = call_json(app, "POST", "/sessions", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["schema_version"], API_VERSION);
    v["id"].as_str().unwrap().to_string()
}

/// Poll until the status matches `state` (and `generation`, if given).
async fn wait_for(app: &Router, id: &str, state: &str, generation: Option<u32>) -> Value {
    for _ in 0..2000 {
        let (_, v) = call_json(app, "GET", &format!("/sessions/{id}"), "").await;
        let st = &v["status"];
        if st["state"] == state && generation.is_none_or(|g| st["generation"] == g) {
            return v;
        }
        assert_ne!(st["state"], "failed", "{v}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} never reached {state} {generation:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_session_and_bad_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), 60);
    let (s, v) = call_json(&app, "GET", "/sessions/nope", "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["schema_version"], API_VERSION);
    assert!(v["error"].is_string());
    assert_eq!(call(&app, "POST", "/sessions/nope/generations/0/skip", "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/sessions", "{\"seed\": \"x\"}").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", "/sessions", "{\"colour\": 1}").await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let id = start(&app).await;
    wait_for(&app, &id, "awaiting_feedback", Some(0)).await;
    let fb = format!("/sessions/{id}/generations/0/feedback");
    assert_eq!(call(&app, "POST", &fb, "not json").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &fb, "{}").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}/generations/x/replays"), "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}/generations/2/replays"), "").await.0, StatusCode::NOT_FOUND);
    // Wrong phase while waiting for phase 0.
    assert_eq!(call(&app, "POST", &format!("/sessions/{id}/generations/1/skip"), "").await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn feedback_reaches_the_named_agent() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), 60);
    let id = start(&app).await;

    let v = wait_for(&app, &id, "awaiting_feedback", Some(0)).await;
    assert_eq!(v["available_replays"], json!([0]));
    let (s, body) = call(&app, "GET", &format!("/sessions/{id}/generations/0/replays"), "").await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    let head: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(head["schema_version"], REPLAY_SCHEMA_VERSION);
    assert_eq!(load_replay(&text).unwrap().meta.generation, 0);

    let (s, v) = call_json(
        &app,
        "POST",
        &format!("/sessions/{id}/generations/0/feedback"),
        r#"{"text": "agent 2: get closer to lettuce"}"#,
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["accepted"], true);
    let ins = v["record"]["insertions"].as_array().unwrap();
    assert_eq!(ins.len(), 1);
    assert_eq!(ins[0]["agent"], 2);
    let weights = v["record"]["weights"].as_array().unwrap();
    assert_eq!(weights[1].as_array().unwrap().len(), 2);
    assert_eq!(weights[0].as_array().unwrap().len(), 1);

    let again = call(&app, "POST", &format!("/sessions/{id}/generations/0/skip"), "").await.0;
    assert_eq!(again, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn skipping_every_phase_matches_a_run_without_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let (app, cfg) = app(dir.path(), 60);
    let id = start(&app).await;
    for k in 0..3 {
        wait_for(&app, &id, "awaiting_feedback", Some(k)).await;
        let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/generations/{k}/skip"), "").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["accepted"], false);
    }
    let done = wait_for(&app, &id, "done", None).await;
    assert_eq!(done["phases"].as_array().unwrap().len(), 3);

    let mut plain = RunConfig::from_toml(&TINY.replace("\"session\"", "\"none\""), dir.path(), false).unwrap();
    plain.output_dir = dir.path().join("plain");
    run_config(&plain, None).unwrap();
    let a = std::fs::read(cfg.output_dir.join("sessions").join(&id).join("metrics.csv")).unwrap();
    let b = std::fs::read(seed_dir(&plain.output_dir, 5).join("metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unanswered_phases_time_out() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), 1);
    let id = start(&app).await;
    let done = wait_for(&app, &id, "done", None).await;
    let phases = done["phases"].as_array().unwrap();
    assert_eq!(phases.len(), 3);
    assert!(phases.iter().all(|p| p["utterance"].is_null() && p["insertions"].as_array().unwrap().is_empty()));
    assert_eq!(call(&app, "POST", &format!("/sessions/{id}/generations/2/skip"), "").await.0, StatusCode::CONFLICT);
}
