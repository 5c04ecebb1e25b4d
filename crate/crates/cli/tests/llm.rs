use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sonoswarm_cli::commands;
use sonoswarm_cli::llm::HttpBackend;
use sonoswarm_core::harness::SimConfig;

#[derive(Clone, Default)]
struct Seen {
    requests: Arc<Mutex<Vec<(Value, Option<String>)>>>,
}

/// Answers garbage twice, then a valid plan.
async fn complete(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
    let n = {
        let mut r = seen.requests.lock().unwrap();
        r.push((body, auth));
        r.len()
    };
    if n < 3 {
        return Json(json!({"choices": [{"text": "I think the robot should move"}]}));
    }
    let plan = json!({"command": "x", "tasks": [{"id": "t1", "robot": "robot1", "action": "move", "params": {"distance": 1.0}}]});
    Json(json!({"choices": [{"message": {"content": format!("```json\n{plan}\n```")}}]}))
}

#[tokio::test(flavor = "multi_thread")]
async fn retries_with_rising_temperature_until_valid() {
    let seen = Seen::default();
    let app = Router::new().route("/v1/complete", post(complete)).with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await });

    let plan = tokio::task::spawn_blocking(move || {
        let backend = HttpBackend::new(&url, Some("k3y".into()), "test-model").unwrap();
        commands::parse("robot one move forward one meter", &SimConfig::default(), &backend)
    })
    .await
    .unwrap()
    .unwrap();

    assert_eq!(plan.tasks.len(), 1);
    let meta = plan.parse_meta.unwrap();
    assert_eq!((meta.attempts, meta.backend.as_str()), (3, "http"));

    let requests = seen.requests.lock().unwrap();
    let temps: Vec<f64> = requests.iter().map(|(b, _)| b["temperature"].as_f64().unwrap()).collect();
    assert_eq!(temps, [0.0, 0.3, 0.7]);
    for (body, auth) in requests.iter() {
        assert_eq!(body["model"], "test-model");
        assert!(body["prompt"].as_str().unwrap().contains("<command>robot one move forward one meter</command>"));
        assert_eq!(auth.as_deref(), Some("Bearer k3y"));
    }
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let backend = HttpBackend::new("http://127.0.0.1:9/none", None, "m").unwrap();
    let err = commands::parse("robot one wait one second", &SimConfig::default(), &backend).unwrap_err();
    assert!(err.to_string().contains("transport"), "{err}");
}
