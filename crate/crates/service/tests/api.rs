mod common;

use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use futures::StreamExt;
use relaynet_core::designer::fixtures::{model_r, two_route};
use relaynet_core::scenario::{DeploymentScenario, LinkModelKeyword, LinkModelSpec, Node, Role};
use relaynet_core::QosSpec;
use relaynet_service::{router, ApiSession, AppState, CreateSession, Event, FieldKind, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn ids(v: &Value) -> BTreeSet<u32> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect()
}

#[tokio::test]
async fn create_returns_201_and_an_id() {
    let app = app();
    let (status, v) = post(&app, "/sessions", line5_body(1)).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap();
    assert_eq!(v["session"]["phase"], "designing");
    let (status, list) = get(&app, "/sessions").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list, json!([id]));
}

#[tokio::test]
async fn invalid_scenarios_are_rejected() {
    let app = app();
    let mut two_sinks = line5_body(1);
    two_sinks["scenario"]["nodes"][1]["role"] = json!("sink");
    let (status, v) = post(&app, "/sessions", two_sinks).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");

    let mut dup = line5_body(1);
    dup["scenario"]["nodes"][2]["id"] = json!(5);
    assert_eq!(post(&app, "/sessions", dup).await.0, StatusCode::BAD_REQUEST);

    let (status, _) = post(&app, "/sessions", json!({"scenario": 7})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut unknown_preset = line5_body(1);
    unknown_preset["channel_preset"] = json!("lunar");
    assert_eq!(post(&app, "/sessions", unknown_preset).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn yard_preset_calibrates_a_thirty_metre_model() {
    let app = app();
    let mut s = two_route();
    s.link_model = LinkModelSpec::Keyword(LinkModelKeyword::Estimate);
    let mut req = CreateSession::new(s);
    req.channel_preset = Some("yard".into());
    req.seed = 2;
    let (status, v) = post(&app, "/sessions", serde_json::to_value(req).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let r = v["session"]["link_model"]["r_max_m"].as_f64().unwrap();
    assert!((r - 30.0).abs() <= 3.0, "R_max {r}");
    let id = v["session_id"].as_str().unwrap();
    let (_, g) = get(&app, &format!("/sessions/{id}/graph?view=model")).await;
    // Every pair of the 12 m layout is within R_max, so the model graph is complete.
    let n = g["graph"]["nodes"].as_array().unwrap().len();
    assert_eq!(g["graph"]["edges"].as_array().unwrap().len(), n * (n - 1) / 2);

    let mut est = CreateSession::new(two_route());
    est.scenario.link_model = LinkModelSpec::Keyword(LinkModelKeyword::Estimate);
    assert_eq!(post(&app, "/sessions", serde_json::to_value(est).unwrap()).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn design_records_initial_action_with_suggested_relays() {
    let app = app();
    let id = create(&app, line5_body(1)).await;
    let (status, v) = step(&app, &id, "design").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["records"][0]["action"], "initial");
    assert!(v["feasible"].as_bool().unwrap());
    assert_eq!(ids(&v["records"][0]["relays_added"]), [5, 10, 15].into_iter().collect());
    assert_eq!(ids(&v["delta"]["deployed_added"]), [0, 5, 10, 15, 20].into_iter().collect());
    assert!(v["per_source_pdel_predicted"]["20"].as_f64().unwrap() > 0.77);
    // A second design is an illegal transition.
    assert_eq!(step(&app, &id, "design").await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn learn_then_evaluate_on_a_model_accurate_field_is_feasible() {
    let app = app();
    let id = create(&app, line5_body(1)).await;
    assert_eq!(step(&app, &id, "evaluate").await.0, StatusCode::CONFLICT);
    step(&app, &id, "design").await;
    assert_eq!(step(&app, &id, "evaluate").await.0, StatusCode::CONFLICT);
    assert_eq!(step(&app, &id, "finalize").await.0, StatusCode::CONFLICT);
    let (status, learn) = step(&app, &id, "learn").await;
    assert_eq!(status, StatusCode::OK, "{learn}");
    assert_eq!(learn["records"][0]["action"], "learn");
    assert!(learn["delta"]["edges_changed"].as_array().unwrap().len() >= 4);
    let (_, ev) = step(&app, &id, "evaluate").await;
    assert_eq!(ev["feasible"], true, "{ev}");
    assert!(ev["infeasible"].is_null());
    let (status, fin) = step(&app, &id, "finalize").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fin["session"]["phase"], "operating");
    assert_eq!(step(&app, &id, "learn").await.0, StatusCode::CONFLICT);
}

fn external_body(s: DeploymentScenario) -> Value {
    let mut req = CreateSession::new(s);
    req.field = FieldKind::External;
    serde_json::to_value(req).unwrap()
}

#[tokio::test]
async fn disconnected_learnt_graph_is_infeasible_with_a_hint() {
    let app = app();
    let id = create(&app, external_body(two_route())).await;
    step(&app, &id, "design").await;
    assert_eq!(step(&app, &id, "learn").await.0, StatusCode::BAD_REQUEST);
    // Every measured link is in outage.
    let (_, sess) = get(&app, &format!("/sessions/{id}")).await;
    let deployed: Vec<u64> = sess["deployed"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let obs: Vec<Value> = deployed
        .iter()
        .flat_map(|&a| deployed.iter().filter(move |&&b| b != a).map(move |&b| json!({"tx_id": a, "rx_id": b, "p_out_hat": 1.0})))
        .collect();
    let (status, v) = post(&app, &format!("/sessions/{id}/step"), json!({"action": "learn", "observations": obs})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(!ids(&v["records"][0]["control_unreachable"]).is_empty());
    let (status, v) = step(&app, &id, "evaluate").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["feasible"], false);
    assert!(v["infeasible"]["reason"].as_str().is_some_and(|r| !r.is_empty()), "{v}");
    assert_eq!(v["records"][0]["action"], "evaluate");
    let (_, m) = get(&app, &format!("/sessions/{id}/metrics")).await;
    assert_eq!(m["feasible"], false);
    assert!(m["learnt_bad_links"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn user_relays_add_remove_and_conflicts() {
    let app = app();
    let id = create(&app, two_route_body(4)).await;
    let (_, d) = step(&app, &id, "design").await;
    let before = ids(&d["session"]["deployed"]);
    assert!(!before.contains(&3));
    let uri = format!("/sessions/{id}/relays");
    let (status, v) = post(&app, &uri, json!({"add": [3]})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(ids(&v["session"]["deployed"]).len(), before.len() + 1);
    assert_eq!(v["records"][0]["action"], "user_override");
    assert_eq!(ids(&v["delta"]["deployed_added"]), [3].into_iter().collect());

    let used = ids(&d["session"]["design"]["relays_used"]);
    let on_route = *used.iter().next().unwrap();
    let (status, err) = post(&app, &uri, json!({"remove": [on_route]})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "would_orphan");
    assert_eq!(post(&app, &uri, json!({"add": [9]})).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, &uri, json!({"add": "x"})).await.0, StatusCode::BAD_REQUEST);
    // Failed commands leave no trace.
    let (_, log) = get(&app, &format!("/sessions/{id}/events/log")).await;
    assert_eq!(log["events"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn manual_placement_is_allowed_after_a_declaration() {
    let app = app();
    let s = DeploymentScenario::new(
        vec![
            Node::new(0, 0.0, 0.0, Role::Sink),
            Node::new(1, 6.0, 0.0, Role::PotentialRelay),
            Node::new(2, 200.0, 0.0, Role::Source),
        ],
        QosSpec::new(200.0, 0.77, 1),
        model_r(8.0),
    );
    let id = create(&app, create_body(s, 1)).await;
    let (status, v) = step(&app, &id, "design").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["feasible"], false);
    assert_eq!(v["infeasible"]["source"], 2);
    let (status, v) = post(&app, &format!("/sessions/{id}/relays"), json!({"add": [1]})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(ids(&v["session"]["deployed"]).contains(&1));
}

#[tokio::test]
async fn unknown_sessions_and_views() {
    let app = app();
    assert_eq!(get(&app, "/sessions/nope/metrics").await.0, StatusCode::NOT_FOUND);
    assert_eq!(step(&app, "nope", "design").await.0, StatusCode::NOT_FOUND);
    let id = create(&app, line5_body(1)).await;
    assert_eq!(get(&app, &format!("/sessions/{id}/graph?view=sideways")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        post(&app, &format!("/sessions/{id}/step"), json!({"action": "dance"})).await.0,
        StatusCode::BAD_REQUEST
    );
    for view in ["model", "learnt", "hybrid"] {
        let (status, g) = get(&app, &format!("/sessions/{id}/graph?view={view}")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(g["view"], view);
    }
}

#[tokio::test]
async fn every_mutation_emits_one_event_and_the_stream_rebuilds_the_log() {
    let app = app();
    let id = create(&app, two_route_body(5)).await;
    let mut expected = 1;
    for action in ["design", "learn", "evaluate"] {
        step(&app, &id, action).await;
        expected += 1;
        let (_, log) = get(&app, &format!("/sessions/{id}/events/log")).await;
        assert_eq!(log["events"].as_array().unwrap().len(), expected);
    }
    post(&app, &format!("/sessions/{id}/relays"), json!({"add": [3]})).await;
    expected += 1;
    step(&app, &id, "learn").await;
    expected += 1;
    let (_, log) = get(&app, &format!("/sessions/{id}/events/log")).await;
    let events: Vec<Event> = serde_json::from_value(log["events"].clone()).unwrap();
    assert_eq!(events.len(), expected);
    assert!(events.iter().enumerate().all(|(i, e)| e.seq == i as u64));

    let (_, m) = get(&app, &format!("/sessions/{id}/metrics")).await;
    let from_stream: Vec<_> = events.iter().flat_map(|e| e.records.clone()).collect();
    assert_eq!(from_stream.len() as u64, m["iterations"].as_u64().unwrap());
    let replayed = ApiSession::replay(&events).unwrap();
    assert_eq!(replayed.state.iteration_log, from_stream);
    assert_eq!(replayed.events, events);

    let (_, tail) = get(&app, &format!("/sessions/{id}/events/log?since=3")).await;
    assert_eq!(tail["events"].as_array().unwrap().len(), expected - 4);
}

#[tokio::test]
async fn event_stream_sends_backlog_then_live_events() {
    let app = app();
    let id = create(&app, line5_body(2)).await;
    step(&app, &id, "design").await;
    let req = Request::get(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut body = resp.into_body().into_data_stream();
    let mut text = String::new();
    let app2 = app.clone();
    let id2 = id.clone();
    tokio::spawn(async move {
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
        step(&app2, &id2, "learn").await;
    });
    let deadline = tokio::time::Instant::now() + std::time::Duration::from_secs(10);
    while text.matches("\n\n").count() < 3 {
        let chunk = tokio::time::timeout_at(deadline, body.next()).await.expect("stream stalled").unwrap().unwrap();
        text.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    let frames: Vec<&str> = text.split("\n\n").filter(|f| f.contains("data:")).collect();
    assert!(frames[0].contains("event: created") && frames[0].contains("id: 0"));
    assert!(frames[1].contains("event: step") && frames[1].contains("id: 1"));
    assert!(frames[2].contains("id: 2") && frames[2].contains("\"learn\""));

    // Resuming after the last seen id skips the backlog.
    let req = Request::get(format!("/sessions/{id}/events")).header("last-event-id", "1").body(Body::empty()).unwrap();
    let mut body = app.clone().oneshot(req).await.unwrap().into_body().into_data_stream();
    let chunk = tokio::time::timeout(std::time::Duration::from_secs(5), body.next()).await.unwrap().unwrap().unwrap();
    let first = std::str::from_utf8(&chunk).unwrap();
    assert!(first.contains("id: 2"), "{first}");
}

#[tokio::test]
async fn sessions_survive_a_restart_and_continue_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { store_dir: Some(dir.path().to_path_buf()), token: None };
    let app1 = router(AppState::new(cfg.clone()).unwrap());
    let id = create(&app1, two_route_body(6)).await;
    step(&app1, &id, "design").await;
    step(&app1, &id, "learn").await;
    let (_, before) = get(&app1, &format!("/sessions/{id}/events/log")).await;

    let app2 = router(AppState::new(cfg).unwrap());
    let (_, after) = get(&app2, &format!("/sessions/{id}/events/log")).await;
    assert_eq!(before, after);
    // Both continue from the same field state.
    let (_, a) = step(&app1, &id, "evaluate").await;
    let (_, b) = step(&app2, &id, "evaluate").await;
    assert_eq!(a, b);
    let (_, l1) = step(&app1, &id, "finalize").await;
    let (_, l2) = step(&app2, &id, "finalize").await;
    assert_eq!(l1, l2);
    // New ids do not collide with restored ones.
    let id2 = create(&app2, line5_body(1)).await;
    assert_ne!(id, id2);
}

#[tokio::test]
async fn static_token_guards_every_route() {
    let app = router(AppState::new(ServiceConfig { store_dir: None, token: Some("t0k".into()) }).unwrap());
    assert_eq!(get(&app, "/sessions").await.0, StatusCode::UNAUTHORIZED);
    let req = Request::get("/sessions").header("authorization", "Bearer t0k").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    assert_eq!(get(&app, "/sessions?token=t0k").await.0, StatusCode::OK);
    assert_eq!(get(&app, "/sessions?token=nope").await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn repair_runs_after_operation_degrades() {
    let app = app();
    let id = create(&app, two_route_body(7)).await;
    for a in ["design", "learn", "evaluate", "finalize"] {
        assert_eq!(step(&app, &id, a).await.0, StatusCode::OK);
    }
    let uri = format!("/sessions/{id}/step");
    let (status, _) = post(&app, &uri, json!({"action": "repair", "windowed_pdel": {"8": 0.99, "9": 0.98}})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, v) = post(&app, &uri, json!({"action": "repair", "windowed_pdel": {"8": 0.5}})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["session"]["phase"], "operating");
    assert!(v["records"].as_array().unwrap().iter().any(|r| r["action"] == "repair"));
}
