use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use map_cli::server::{router, AppState};
use map_core::eval::{write_report, EvalReport, Protocol, Recommender};
use map_core::session::{SessionConfig, SessionEngine, SteppingClock};
use map_core::{Gateway, ProfileStore, PromptBuilder, StubPolicy};
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine() -> SessionEngine {
    SessionEngine::new(
        Arc::new(ProfileStore::in_memory()),
        Arc::new(Gateway::stub(StubPolicy::EchoMeanOfMemory)),
        PromptBuilder::default(),
        SessionConfig::default(),
    )
    .with_clock(Arc::new(SteppingClock::new(1_700_000_000)))
}

fn app(reports: &Path) -> (Router, Arc<SessionEngine>) {
    let engine = Arc::new(engine());
    let state = AppState {
        engine: Arc::clone(&engine),
        reports_dir: reports.to_path_buf(),
    };
    (router(state, None), engine)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let doc = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, doc)
}

async fn post(app: &Router, user: &str, text: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/session/{user}/message"), Some(json!({ "text": text }))).await
}

#[tokio::test]
async fn rating_statement_grows_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post(&app, "u1", "I rate Heat 5/5").await;
    let (_, before) = call(&app, "GET", "/api/profile/u1", None).await;
    let n = before["records"].as_array().unwrap().len();

    let (status, event) = post(&app, "u1", "I rate Dune 4/5").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(event["classified_type"], "B");
    assert_eq!(event["outcome"], "stored");

    let (status, after) = call(&app, "GET", "/api/profile/u1", None).await;
    assert_eq!(status, StatusCode::OK);
    let records = after["records"].as_array().unwrap();
    assert_eq!(records.len(), n + 1);
    assert_eq!(records[n]["title"], "Dune");
    assert_eq!(records[n]["rating"], 4.0);
}

#[tokio::test]
async fn recommendation_requests_report_memory() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post(&app, "u2", "I rated \"Alien (Horror, Sci-Fi)\" 5/5").await;
    post(&app, "u2", "I rated \"Clueless (Comedy)\" 2/5").await;
    let (status, event) = post(&app, "u2", "Would I like \"Aliens (Horror, Sci-Fi)\"?").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(event["classified_type"], "A");
    assert_eq!(event["outcome"], "recommended");
    assert_eq!(event["memory_used"].as_array().unwrap().len(), 2);
    assert!(event["predicted_rating"].as_f64().is_some());
}

#[tokio::test]
async fn api_and_engine_reach_the_same_state() {
    let script = [
        "I rate Dune 4/5",
        "I loved Heat",
        "Recommend me a comedy",
        "What is the capital of France?",
        "I rated \"Memento (Thriller)\" 5 stars",
        "I hated Cats",
        "Would I like \"Alien (Horror)\"?",
    ];
    let dir = tempfile::tempdir().unwrap();
    let (app, api_engine) = app(dir.path());
    for text in script {
        let (status, _) = post(&app, "eq", text).await;
        assert_eq!(status, StatusCode::OK, "{text}");
    }
    let direct = engine();
    for text in script {
        direct.handle_query("eq", text).unwrap();
    }
    assert_eq!(api_engine.store().profile("eq").unwrap(), direct.store().profile("eq").unwrap());
}

#[tokio::test]
async fn memory_preview_is_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let (app, engine) = app(dir.path());
    for text in ["I rated \"Alien (Horror, Sci-Fi)\" 5/5", "I rated \"Heat (Crime)\" 4/5", "I rated \"Big (Comedy)\" 3/5"] {
        post(&app, "p", text).await;
    }
    let rev = engine.store().revision("p").unwrap();
    for _ in 0..5 {
        let (status, doc) = call(&app, "GET", "/api/profile/p/memory-preview?genres=Horror,Crime&k=2", None).await;
        assert_eq!(status, StatusCode::OK);
        let memory = doc["memory"].as_array().unwrap();
        assert_eq!(memory.len(), 2);
        assert!(memory[0]["score"].as_f64() >= memory[1]["score"].as_f64());
    }
    assert_eq!(engine.store().revision("p").unwrap(), rev);

    let (_, doc) = call(&app, "GET", "/api/profile/p/memory-preview?title=Alien&k=0", None).await;
    assert_eq!(doc["memory"], json!([]));
}

#[tokio::test]
async fn errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let (status, doc) = call(&app, "GET", "/api/profile/nobody", None).await;
    assert_eq!((status, doc["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_user")));

    let (status, doc) = post(&app, "u", "   ").await;
    assert_eq!((status, doc["code"].as_str()), (StatusCode::BAD_REQUEST, Some("empty_message")));

    let (status, doc) = post(&app, "bad%20id", "hello").await;
    assert_eq!((status, doc["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_user_id")));

    post(&app, "u", "I rate Dune 4/5").await;
    let (status, _) = call(&app, "GET", "/api/profile/u/memory-preview?k=3", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, doc) = call(&app, "GET", "/api/reports/no-such-report", None).await;
    assert_eq!((status, doc["code"].as_str()), (StatusCode::NOT_FOUND, Some("report_not_found")));
    let (status, _) = call(&app, "GET", "/api/reports/..%2Fsecret", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn gateway_outage_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let engine = SessionEngine::new(
        Arc::new(ProfileStore::in_memory()),
        Arc::new(Gateway::stub(StubPolicy::Scripted(Default::default()))),
        PromptBuilder::default(),
        SessionConfig::default(),
    );
    let state = AppState {
        engine: Arc::new(engine),
        reports_dir: dir.path().to_path_buf(),
    };
    let app = router(state, None);
    let (status, doc) = post(&app, "u", "Recommend me a comedy").await;
    assert_eq!((status, doc["code"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("gateway_unavailable")));
}

#[tokio::test]
async fn reports_are_listed_and_read() {
    let dir = tempfile::tempdir().unwrap();
    let series = [(1, 0.9), (2, 0.8), (3, 0.7)].into_iter().collect();
    let mut report = EvalReport::from_series(Protocol::SingleDomain, Recommender::Map, series);
    report.report_id = "single_domain-map-abc".into();
    write_report(dir.path().join("single_domain-map-abc.json"), &report).unwrap();
    std::fs::write(dir.path().join("junk.json"), "{").unwrap();

    let (app, _) = app(dir.path());
    let (status, list) = call(&app, "GET", "/api/reports", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["report_id"], "single_domain-map-abc");
    assert_eq!(list[0]["mae_by_size"]["2"], 0.8);

    let (status, doc) = call(&app, "GET", "/api/reports/single_domain-map-abc", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["mae_by_size"]["3"], 0.7);
}
