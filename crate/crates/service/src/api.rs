//! REST API under `/api/`.
//!
//! Long-running work (generation, bias tests, quality reports) is queued as
//! a job and executed on a bounded pool of blocking workers; clients poll
//! `GET /api/jobs/{id}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use biastest_core::datastore::{self, DatasetFile, Store};
use biastest_core::genpipeline::mock::MockChatConfig;
use biastest_core::genpipeline::{
    bundled_templates, discover_bias_candidates, fill_templates, generate_for_spec_observed, ChatClient,
    DiscoveryOptions, GenError, GenerationConfig, GenerationObserver, TestSentence,
};
use biastest_core::metrics::{bootstrap_ss, BootstrapOptions, DEFAULT_K_PER_ATTRIBUTE, DEFAULT_REPLICATES};
use biastest_core::specs::{predefined_by_name, validate_spec, BiasSpecification, SpecSource, ValidatedSpec};
use biastest_core::textquality::{quality_report, HttpToxicityClassifier, QualityOptions, ToxicityClassifier};

use crate::backends::{chat_client, default_chat_model, ScorerRequest};
use crate::jobs::{Completion, Job, JobKind, JobRegistry, JobState};
use crate::AppError;

/// Request header carrying a per-session chat key. It is used for the one
/// request and never stored or logged.
pub const CHAT_KEY_HEADER: &str = "x-chat-api-key";

#[derive(Clone)]
pub struct AppState {
    pub store: Store,
    pub jobs: Arc<JobRegistry>,
    workers: Arc<Semaphore>,
    spec_locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
    /// Answer chat requests with the offline mock instead of a real backend.
    pub mock_chat: Option<MockChatConfig>,
}

impl AppState {
    pub fn new(store: Store, workers: usize, mock_chat: Option<MockChatConfig>) -> Self {
        AppState {
            store,
            jobs: Arc::new(JobRegistry::new()),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            spec_locks: Arc::default(),
            mock_chat,
        }
    }

    /// Serializes dataset writes for one specification.
    fn spec_lock(&self, name: &str) -> Arc<Mutex<()>> {
        self.spec_locks.lock().unwrap().entry(name.to_string()).or_default().clone()
    }

    /// Runs `work` on the blocking pool once a worker slot is free and
    /// records its outcome. A panic marks the job failed.
    fn spawn_job<F>(&self, job: &Job, total: usize, work: F)
    where
        F: FnOnce(&AppState, &str) -> Result<(JobState, Completion), AppError> + Send + 'static,
    {
        let state = self.clone();
        let id = job.id.clone();
        tokio::spawn(async move {
            let Ok(_permit) = state.workers.clone().acquire_owned().await else {
                state.jobs.fail(&id, "worker pool closed");
                return;
            };
            if state.jobs.start(&id, total).is_err() {
                state.jobs.fail(&id, "job could not be started");
                return;
            }
            let (s, job_id) = (state.clone(), id.clone());
            let outcome = tokio::task::spawn_blocking(move || work(&s, &job_id)).await;
            match outcome {
                Ok(Ok((final_state, completion))) => {
                    if let Err(e) = state.jobs.finish(&id, final_state, completion) {
                        state.jobs.fail(&id, e.to_string());
                    }
                }
                Ok(Err(e)) => state.jobs.fail(&id, e.to_string()),
                Err(e) => state.jobs.fail(&id, format!("job crashed: {e}")),
            }
        });
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/specs", get(list_specs).post(add_spec))
        .route("/api/specs/:name", get(get_spec))
        .route("/api/specs/:name/sentences", get(spec_sentences))
        .route("/api/templates", post(templates))
        .route("/api/generate", post(generate))
        .route("/api/biastest", post(biastest))
        .route("/api/quality", post(quality))
        .route("/api/discover", post(discover))
        .route("/api/jobs/:id", get(get_job))
        .route("/api/results/:id", get(get_result))
        .route("/api/results/:id/export.csv", get(export_result))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, AppError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| AppError::validation(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, AppError> + Send + 'static) -> Result<T, AppError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::Internal(e.to_string()))?
}

async fn list_specs(State(state): State<AppState>) -> Result<Json<Vec<BiasSpecification>>, AppError> {
    let specs = state.store.list_specs()?;
    Ok(Json(specs.into_iter().map(ValidatedSpec::into_inner).collect()))
}

async fn get_spec(State(state): State<AppState>, Path(name): Path<String>) -> Result<Json<Value>, AppError> {
    let spec = state.store.load_spec(&name)?;
    Ok(Json(json!({ "spec": spec.spec(), "warnings": spec.warnings() })))
}

async fn add_spec(
    State(state): State<AppState>,
    payload: Result<Json<BiasSpecification>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), AppError> {
    let spec = validate_spec(user_spec(body(payload)?))?;
    if predefined_by_name(spec.name()).is_some() {
        return Err(AppError::Conflict(format!("{} is a predefined specification", spec.name())));
    }
    let lock = state.spec_lock(spec.name());
    let _guard = lock.lock().unwrap();
    state.store.save_spec(&spec)?;
    Ok((StatusCode::CREATED, Json(json!({ "spec": spec.spec(), "warnings": spec.warnings() }))))
}

/// Only bundled specifications may claim to be predefined.
fn user_spec(mut raw: BiasSpecification) -> BiasSpecification {
    if raw.source == SpecSource::Predefined {
        raw.source = SpecSource::Custom;
    }
    raw
}

async fn spec_sentences(State(state): State<AppState>, Path(name): Path<String>) -> Result<Json<Value>, AppError> {
    state.store.load_spec(&name)?;
    let sentences = state
        .store
        .merged_dataset(&name)?
        .map(|d| d.sentences)
        .unwrap_or_default();
    Ok(Json(json!({ "spec_name": name, "count": sentences.len(), "sentences": sentences })))
}

fn save_run(state: &AppState, spec: &ValidatedSpec, sentences: Vec<TestSentence>, metadata: Value, run_id: Option<&str>) -> Result<String, AppError> {
    let mut dataset = DatasetFile::new(spec.spec().clone(), sentences, Utc::now());
    if let Value::Object(m) = metadata {
        dataset.generator_metadata = m.into_iter().collect();
    }
    let lock = state.spec_lock(spec.name());
    let _guard = lock.lock().unwrap();
    match run_id {
        Some(id) => {
            state.store.save_dataset_as(&dataset, id)?;
            Ok(id.to_string())
        }
        None => Ok(state.store.save_dataset(&dataset)?),
    }
}

#[derive(Debug, Deserialize)]
struct TemplatesRequest {
    spec_name: String,
    #[serde(default)]
    templates: Option<Vec<String>>,
}

/// Fills manual templates and stores them as a dataset run.
async fn templates(
    State(state): State<AppState>,
    payload: Result<Json<TemplatesRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), AppError> {
    let req = body(payload)?;
    let spec = state.store.load_spec(&req.spec_name)?;
    let templates = match req.templates {
        Some(t) => t,
        None => bundled_templates(spec.name())
            .ok_or_else(|| AppError::validation(format!("no bundled templates for {}", spec.name())))?,
    };
    let sentences = fill_templates(&spec, &templates)?;
    let count = sentences.len();
    let run_id = save_run(&state, &spec, sentences, json!({ "source": "templates", "templates": templates }), None)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "spec_name": spec.name(), "run_id": run_id, "count": count })),
    ))
}

#[derive(Debug, Deserialize)]
struct GenerateRequest {
    #[serde(default)]
    spec_name: Option<String>,
    #[serde(default)]
    inline_spec: Option<BiasSpecification>,
    #[serde(default)]
    config: Option<GenerationConfig>,
}

#[derive(Serialize)]
struct JobCreated {
    job_id: String,
}

fn accepted(job: &Job) -> (StatusCode, Json<JobCreated>) {
    (StatusCode::ACCEPTED, Json(JobCreated { job_id: job.id.clone() }))
}

struct Checkpoint<'a> {
    state: &'a AppState,
    job_id: &'a str,
    spec: &'a ValidatedSpec,
    run_id: &'a str,
    collected: Mutex<Vec<TestSentence>>,
}

impl GenerationObserver for Checkpoint<'_> {
    fn on_sentence(&self, sentence: &TestSentence) {
        self.collected.lock().unwrap().push(sentence.clone());
    }

    fn on_attribute_done(&self, done: usize, _total: usize) {
        let _ = self.state.jobs.advance(self.job_id, done);
        let snapshot = self.collected.lock().unwrap().clone();
        if !snapshot.is_empty() {
            let _ = save_run(self.state, self.spec, snapshot, json!({ "checkpoint": true }), Some(self.run_id));
        }
    }
}

fn dataset_ref(spec: &str, run: &str) -> String {
    format!("datasets/{spec}/{run}")
}

async fn generate(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobCreated>), AppError> {
    let req = body(payload)?;
    let spec = match (req.inline_spec, req.spec_name) {
        (Some(raw), _) => {
            let spec = validate_spec(user_spec(raw))?;
            if predefined_by_name(spec.name()).is_none() {
                state.store.save_spec(&spec)?;
            }
            spec
        }
        (None, Some(name)) => state.store.load_spec(&name)?,
        (None, None) => return Err(AppError::validation("spec_name or inline_spec is required")),
    };
    let mut config = req.config.unwrap_or_else(|| GenerationConfig {
        chat_model: default_chat_model().unwrap_or_else(|| GenerationConfig::default().chat_model),
        ..GenerationConfig::default()
    });
    if config.chat_model.is_empty() {
        config.chat_model = default_chat_model().unwrap_or_else(|| "gpt-3.5-turbo".into());
    }
    config.validate()?;
    let key = headers
        .get(CHAT_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let mock = state.mock_chat;
    let chat = blocking(move || chat_client(key, mock)).await?;

    let job = state.jobs.create(JobKind::Generate);
    let total = spec.attributes().count();
    let run_id = format!("{}-{}", Utc::now().format("%Y%m%dT%H%M%SZ"), &job.id[..8]);
    state.spawn_job(&job, total, move |state, job_id| {
        run_generation(state, job_id, &spec, &config, chat.as_ref(), &run_id)
    });
    Ok(accepted(&job))
}

fn run_generation(
    state: &AppState,
    job_id: &str,
    spec: &ValidatedSpec,
    config: &GenerationConfig,
    chat: &dyn ChatClient,
    run_id: &str,
) -> Result<(JobState, Completion), AppError> {
    let observer = Checkpoint {
        state,
        job_id,
        spec,
        run_id,
        collected: Mutex::new(Vec::new()),
    };
    match generate_for_spec_observed(spec, config, chat, &observer) {
        Ok(out) => {
            let report = serde_json::to_value(&out.report).unwrap_or(Value::Null);
            let meta = json!({ "config": config, "report": report });
            if out.sentences.is_empty() {
                return Ok((
                    JobState::Failed,
                    Completion {
                        output: Some(report),
                        error_message: Some("no sentence passed the filters".into()),
                        ..Default::default()
                    },
                ));
            }
            save_run(state, spec, out.sentences, meta, Some(run_id))?;
            Ok((
                JobState::Done,
                Completion {
                    result_ref: Some(dataset_ref(spec.name(), run_id)),
                    output: Some(report),
                    error_message: None,
                },
            ))
        }
        Err(GenError::ChatBackendUnavailable { reason, partial }) => match partial {
            Some(p) if !p.sentences.is_empty() => {
                let report = serde_json::to_value(&p.report).unwrap_or(Value::Null);
                save_run(state, spec, p.sentences, json!({ "config": config, "report": report }), Some(run_id))?;
                Ok((
                    JobState::Partial,
                    Completion {
                        result_ref: Some(dataset_ref(spec.name(), run_id)),
                        output: Some(report),
                        error_message: Some(format!("chat backend unavailable: {reason}")),
                    },
                ))
            }
            _ => Err(AppError::Backend(format!("chat backend unavailable: {reason}"))),
        },
        Err(e) => Err(e.into()),
    }
}

fn default_k() -> usize {
    DEFAULT_K_PER_ATTRIBUTE
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

#[derive(Debug, Deserialize)]
struct BiasTestRequest {
    spec_name: String,
    #[serde(default)]
    dataset_run: Option<String>,
    scorer: ScorerRequest,
    #[serde(default = "default_k")]
    k_per_attribute: usize,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
}

fn load_sentences(store: &Store, spec: &ValidatedSpec, run: Option<&str>) -> Result<Vec<TestSentence>, AppError> {
    let dataset = match run {
        Some(run) => Some(store.load_dataset(spec.name(), run)?),
        None => store.merged_dataset(spec.name())?,
    };
    match dataset {
        Some(d) if !d.is_empty() => Ok(d.sentences),
        _ => Err(AppError::validation(format!(
            "no sentences stored for {}; fill templates or generate first",
            spec.name()
        ))),
    }
}

async fn biastest(
    State(state): State<AppState>,
    payload: Result<Json<BiasTestRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobCreated>), AppError> {
    let req = body(payload)?;
    let spec = state.store.load_spec(&req.spec_name)?;
    let sentences = load_sentences(&state.store, &spec, req.dataset_run.as_deref())?;
    let options = BootstrapOptions {
        k_per_attribute: req.k_per_attribute,
        replicates: req.replicates,
        seed: req.seed,
    };
    if options.k_per_attribute == 0 || options.replicates == 0 {
        return Err(AppError::validation("k_per_attribute and replicates must be at least 1"));
    }
    // Remote scorers own a blocking HTTP client, which must be created and
    // dropped off the async runtime.
    let scorer_request = req.scorer;
    let scorer = blocking(move || scorer_request.build()).await?;
    let job = state.jobs.create(JobKind::Biastest);
    state.spawn_job(&job, 1, move |state, job_id| {
        let result = bootstrap_ss(&sentences, &spec, scorer.as_ref(), &options)?;
        state.store.save_result(job_id, &result)?;
        let b = result.bootstrap.as_ref();
        Ok((
            JobState::Done,
            Completion {
                result_ref: Some(format!("results/{job_id}")),
                output: Some(json!({
                    "overall_ss": result.overall_ss,
                    "pair_count": result.pair_count,
                    "mean_ss": b.map(|b| b.mean_ss),
                    "sd_ss": b.map(|b| b.sd_ss),
                })),
                error_message: None,
            },
        ))
    });
    Ok(accepted(&job))
}

#[derive(Debug, Deserialize)]
struct QualityRequest {
    spec_name: String,
    #[serde(default)]
    dataset_run: Option<String>,
    #[serde(default)]
    sample_size: Option<usize>,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn quality(
    State(state): State<AppState>,
    payload: Result<Json<QualityRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobCreated>), AppError> {
    let req = body(payload)?;
    let spec = state.store.load_spec(&req.spec_name)?;
    let sentences = load_sentences(&state.store, &spec, req.dataset_run.as_deref())?;
    let defaults = QualityOptions::default();
    let options = QualityOptions {
        sample_size: req.sample_size.unwrap_or(defaults.sample_size),
        trials: req.trials.unwrap_or(defaults.trials),
        seed: req.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let job = state.jobs.create(JobKind::Quality);
    state.spawn_job(&job, 1, move |_, job_id| {
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let classifier = HttpToxicityClassifier::from_env();
        let report = quality_report(&texts, &options, classifier.as_ref().map(|c| c as &dyn ToxicityClassifier))?;
        Ok((
            JobState::Done,
            Completion {
                result_ref: Some(format!("jobs/{job_id}")),
                output: serde_json::to_value(&report).ok(),
                error_message: None,
            },
        ))
    });
    Ok(accepted(&job))
}

#[derive(Debug, Deserialize)]
struct DiscoverRequest {
    domain_hint: String,
    #[serde(default)]
    pick: Option<usize>,
}

async fn discover(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<DiscoverRequest>, JsonRejection>,
) -> Result<Json<Value>, AppError> {
    let req = body(payload)?;
    if req.domain_hint.trim().is_empty() {
        return Err(AppError::validation("domain_hint is empty"));
    }
    let key = headers
        .get(CHAT_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let mock = state.mock_chat;
    let mut options = DiscoveryOptions::default();
    if let Some(p) = req.pick {
        options.pick = p.max(1);
    }
    if let Some(m) = default_chat_model() {
        options.model = m;
    }
    let drafts = blocking(move || {
        let chat = chat_client(key, mock)?;
        Ok(discover_bias_candidates(&req.domain_hint, chat.as_ref(), &options)?)
    })
    .await?;
    let drafts: Vec<Value> = drafts
        .into_iter()
        .map(|d| match validate_spec(d.clone()) {
            Ok(v) => json!({ "spec": d, "valid": true, "issues": [], "warnings": v.warnings() }),
            Err(e) => json!({ "spec": d, "valid": false, "issues": e.issues(), "warnings": [] }),
        })
        .collect();
    Ok(Json(json!({ "drafts": drafts })))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Job>, AppError> {
    state
        .jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| AppError::NotFound(format!("job {id}")))
}

fn pending_conflict(state: &AppState, id: &str) -> AppError {
    match state.jobs.get(id) {
        Some(j) if !j.state.is_terminal() => AppError::Conflict(format!("job {id} is still {:?}", j.state).to_lowercase()),
        Some(j) if j.kind != JobKind::Biastest => AppError::NotFound(format!("job {id} has no bias test result")),
        Some(j) => AppError::Conflict(format!(
            "job {id} ended {:?} without a result",
            j.state
        ).to_lowercase()),
        None => AppError::NotFound(format!("result {id}")),
    }
}

async fn get_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<biastest_core::metrics::BiasTestResult>, AppError> {
    match state.store.load_result(&id) {
        Ok(r) => Ok(Json(r)),
        Err(datastore::DatastoreError::NotFound(_)) => Err(pending_conflict(&state, &id)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    replicates: bool,
}

async fn export_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, AppError> {
    let result = match state.store.load_result(&id) {
        Ok(r) => r,
        Err(datastore::DatastoreError::NotFound(_)) => return Err(pending_conflict(&state, &id)),
        Err(e) => return Err(e.into()),
    };
    let mut buf = Vec::new();
    datastore::result_csv(&result, q.replicates, &mut buf)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.csv\"")),
        ],
        buf,
    )
        .into_response())
}
