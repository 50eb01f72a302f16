use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use biastest::api::{router, AppState};
use biastest_core::datastore::Store;
use biastest_core::genpipeline::mock::MockChatConfig;
use biastest_core::metrics::RESULT_CSV_COLUMNS;

fn app(dir: &tempfile::TempDir, mock: Option<MockChatConfig>) -> Router {
    router(AppState::new(Store::open(dir.path()).unwrap(), 2, mock))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
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
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// Polls until the job leaves queued/running and returns its final record.
async fn wait_job(app: &Router, id: &str) -> Value {
    let mut last_done = 0;
    for _ in 0..600 {
        let (status, job) = call_json(app, Method::GET, &format!("/api/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let done = job["progress"]["done"].as_u64().unwrap();
        assert!(done >= last_done, "progress went backwards");
        last_done = done;
        match job["state"].as_str().unwrap() {
            "queued" | "running" => tokio::time::sleep(Duration::from_millis(20)).await,
            _ => return job,
        }
    }
    panic!("job {id} did not finish");
}

fn gender_spec(name: &str) -> Value {
    json!({
        "name": name,
        "group1_label": "Male",
        "group1_terms": ["he", "brother"],
        "group2_label": "Female",
        "group2_terms": ["she", "sister"],
        "attr1_label": "Math",
        "attr1_terms": ["math", "algebra"],
        "attr2_label": "Arts",
        "attr2_terms": ["poetry", "dance"]
    })
}

async fn seed_templates(app: &Router, spec: &str) -> String {
    let (status, created) = call_json(
        app,
        Method::POST,
        "/api/templates",
        Some(json!({ "spec_name": spec, "templates": ["[T] likes [A].", "[T] is good at [A]."] })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    created["run_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn spec_listing_includes_predefined() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    let (status, specs) = call_json(&app, Method::GET, "/api/specs", None).await;
    assert_eq!(status, StatusCode::OK);
    let names: Vec<&str> = specs.as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"gender_math_arts"));
    assert!(names.len() >= 6);
    let (status, one) = call_json(&app, Method::GET, "/api/specs/gender_math_arts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["spec"]["group1_label"], "Male terms");
    let (status, err) = call_json(&app, Method::GET, "/api/specs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");
}

#[tokio::test(flavor = "multi_thread")]
async fn unequal_groups_are_rejected_with_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    let mut spec = gender_spec("broken");
    spec["group2_terms"] = json!(["she"]);
    spec["attr2_terms"] = json!(["poetry", " "]);
    let (status, err) = call_json(&app, Method::POST, "/api/specs", Some(spec)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "validation");
    let kinds: Vec<&str> = err["issues"].as_array().unwrap().iter().map(|i| i["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"UnequalGroupLengths"), "{kinds:?}");
    assert!(kinds.contains(&"EmptyTerm"), "{kinds:?}");
    let unequal = err["issues"].as_array().unwrap().iter().find(|i| i["kind"] == "UnequalGroupLengths").unwrap();
    assert_eq!(unequal["group1"], 2);
    assert_eq!(unequal["group2"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bodies_are_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    let (status, err) = call_json(&app, Method::POST, "/api/specs", Some(json!({ "name": "x" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "validation");
    let (status, _) = call_json(&app, Method::POST, "/api/biastest", Some(json!({ "spec_name": "gender_math_arts" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn custom_spec_round_trip_and_predefined_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    let (status, created) = call_json(&app, Method::POST, "/api/specs", Some(gender_spec("mini"))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["spec"]["name"], "mini");
    let (status, got) = call_json(&app, Method::GET, "/api/specs/mini", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["spec"]["attr2_terms"], json!(["poetry", "dance"]));

    let (status, _) = call_json(&app, Method::POST, "/api/specs", Some(gender_spec("gender_math_arts"))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, empty) = call_json(&app, Method::GET, "/api/specs/mini/sentences", None).await;
    assert_eq!(empty["count"], 0);
    seed_templates(&app, "mini").await;
    let (_, filled) = call_json(&app, Method::GET, "/api/specs/mini/sentences", None).await;
    // 2 templates x 4 attributes x 2 group terms x 2 sides
    assert_eq!(filled["count"], 32);
}

#[tokio::test(flavor = "multi_thread")]
async fn constant_scorer_gives_fifty_and_export_matches_contract() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    call_json(&app, Method::POST, "/api/specs", Some(gender_spec("mini"))).await;
    seed_templates(&app, "mini").await;

    let (status, created) = call_json(
        &app,
        Method::POST,
        "/api/biastest",
        Some(json!({
            "spec_name": "mini",
            "scorer": { "kind": "table", "model_id": "flat", "default_score": -3.5 },
            "k_per_attribute": 4,
            "replicates": 10,
            "seed": 7
        })),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = created["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&app, &id).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["kind"], "biastest");
    assert_eq!(job["result_ref"], format!("results/{id}"));
    assert_eq!(job["progress"]["done"], job["progress"]["total"]);

    let (status, result) = call_json(&app, Method::GET, &format!("/api/results/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["overall_ss"], 50.0);
    assert_eq!(result["model_id"], "flat");
    assert_eq!(result["pair_count"], 32);
    assert_eq!(result["per_pair"].as_array().unwrap().len(), 32);
    assert_eq!(result["bootstrap"]["replicate_ss"].as_array().unwrap().len(), 10);

    let (status, csv) = call(&app, Method::GET, &format!("/api/results/{id}/export.csv"), None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), RESULT_CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 32);

    let (_, with_reps) = call(&app, Method::GET, &format!("/api/results/{id}/export.csv?replicates=true"), None).await;
    // 10 replicates x 4 attribute terms x k=4 draws on top of the pairs
    assert_eq!(String::from_utf8(with_reps).unwrap().lines().count(), 1 + 32 + 160);
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_sentences_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    call_json(&app, Method::POST, "/api/specs", Some(gender_spec("mini"))).await;
    let (status, err) = call_json(
        &app,
        Method::POST,
        "/api/biastest",
        Some(json!({ "spec_name": "mini", "scorer": { "kind": "table", "model_id": "c", "default_score": -1.0 } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    let (status, _) = call_json(&app, Method::GET, "/api/jobs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, Method::GET, "/api/results/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/api/results/nope/export.csv", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// A scorer endpoint that answers slowly (so jobs stay busy) or not at all.
fn slow_scorer(delay: Duration) -> String {
    use axum::routing::post;
    use axum::Json;
    let app = Router::new().route(
        "/score",
        post(move |Json(req): Json<Value>| async move {
            tokio::time::sleep(delay).await;
            let n = req["sentences"].as_array().map_or(0, |s| s.len());
            let scores: Vec<Value> = (0..n).map(|_| json!({ "log_likelihood": -1.0, "token_count": 3 })).collect();
            Json(json!({ "scores": scores }))
        }),
    );
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn unfinished_results_conflict_and_dead_scorers_fail_the_job() {
    let dir = tempfile::tempdir().unwrap();
    // One worker: the second job waits in the queue behind the slow one.
    let app = router(AppState::new(Store::open(dir.path()).unwrap(), 1, None));
    call_json(&app, Method::POST, "/api/specs", Some(gender_spec("mini"))).await;
    seed_templates(&app, "mini").await;
    let slow = slow_scorer(Duration::from_millis(600));
    let body = |endpoint: &str| {
        json!({
            "spec_name": "mini",
            "scorer": { "kind": "remote", "model_id": "slow", "endpoint": endpoint },
            "replicates": 2
        })
    };
    let (_, first) = call_json(&app, Method::POST, "/api/biastest", Some(body(&slow))).await;
    let (_, second) = call_json(&app, Method::POST, "/api/biastest", Some(body(&slow))).await;
    let second_id = second["job_id"].as_str().unwrap();
    let (status, err) = call_json(&app, Method::GET, &format!("/api/results/{second_id}"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");
    assert_eq!(err["error"], "conflict");
    assert_eq!(wait_job(&app, first["job_id"].as_str().unwrap()).await["state"], "done");
    assert_eq!(wait_job(&app, second_id).await["state"], "done");
    let (status, result) = call_json(&app, Method::GET, &format!("/api/results/{second_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(result["overall_ss"], 50.0);

    let (_, dead) = call_json(&app, Method::POST, "/api/biastest", Some(body("http://127.0.0.1:9"))).await;
    let dead_id = dead["job_id"].as_str().unwrap();
    let job = wait_job(&app, dead_id).await;
    assert_eq!(job["state"], "failed");
    assert!(job["result_ref"].is_null());
    assert!(job["error_message"].as_str().unwrap().contains("unavailable"), "{job}");
    let (status, _) = call_json(&app, Method::GET, &format!("/api/results/{dead_id}"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn mock_generation_job_stores_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockChatConfig {
        seed: 11,
        omit_rate: 0.3,
        refusal_rate: 0.05,
        ..MockChatConfig::default()
    };
    let app = app(&dir, Some(mock));
    let (status, created) = call_json(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({
            "inline_spec": gender_spec("mini"),
            "config": { "per_attribute_quota": 2, "batch_size": 3, "seed": 5, "rewrite": "deterministic" }
        })),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{created}");
    let job = wait_job(&app, created["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["progress"], json!({ "done": 4, "total": 4 }));
    assert!(job["result_ref"].as_str().unwrap().starts_with("datasets/mini/"));
    assert_eq!(job["output"]["stored"], 8);

    let (_, sentences) = call_json(&app, Method::GET, "/api/specs/mini/sentences", None).await;
    assert_eq!(sentences["count"], 8);
    for s in sentences["sentences"].as_array().unwrap() {
        assert_eq!(s["source"], "chat");
    }

    let (status, created) = call_json(&app, Method::POST, "/api/quality", Some(json!({ "spec_name": "mini", "sample_size": 5, "trials": 3 }))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = wait_job(&app, created["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["output"]["sentence_count"], 8);
    assert!(job["output"]["word_count_mean"].as_f64().unwrap() > 2.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn discovery_returns_validated_drafts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, Some(MockChatConfig::default()));
    let (status, out) = call_json(&app, Method::POST, "/api/discover", Some(json!({ "domain_hint": "hospital staff" }))).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    let drafts = out["drafts"].as_array().unwrap();
    assert_eq!(drafts.len(), 1);
    assert_eq!(drafts[0]["valid"], true);
    assert_eq!(drafts[0]["spec"]["source"], "discovered");
    let (status, _) = call_json(&app, Method::POST, "/api/discover", Some(json!({ "domain_hint": "  " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn generation_without_a_key_is_a_backend_error() {
    std::env::remove_var("CHAT_API_KEY");
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir, None);
    let (status, err) = call_json(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({ "spec_name": "gender_math_arts" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(err["error"], "backend_unavailable");
    assert!(err["message"].as_str().unwrap().contains("CHAT_API_KEY"));
}
