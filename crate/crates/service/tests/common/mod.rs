#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use relaynet_core::designer::fixtures::{line5, two_route};
use relaynet_service::{router, AppState, CreateSession, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn app() -> Router {
    router(AppState::new(ServiceConfig::default()).unwrap())
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

pub fn create_body(scenario: relaynet_core::DeploymentScenario, seed: u64) -> Value {
    let mut req = CreateSession::new(scenario);
    req.seed = seed;
    req.channel_preset = Some("indoor".into());
    serde_json::to_value(req).unwrap()
}

pub fn line5_body(seed: u64) -> Value {
    create_body(line5(), seed)
}

pub fn two_route_body(seed: u64) -> Value {
    create_body(two_route(), seed)
}

/// Creates a session and returns its id.
pub async fn create(app: &Router, body: Value) -> String {
    let (status, v) = post(app, "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

pub async fn step(app: &Router, id: &str, action: &str) -> (StatusCode, Value) {
    post(app, &format!("/sessions/{id}/step"), json!({ "action": action })).await
}
