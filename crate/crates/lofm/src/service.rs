//! HTTP/JSON v1 facade. Handlers parse the request, take the store lock and
//! call into [`Lofm`]; every write is on disk before the response is sent.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use lofm_core::matrix::{render, Format};
use lofm_core::ml::Hyperparams;
use lofm_core::pipeline::RowInput;
use lofm_core::tracker::TargetSpec;
use lofm_core::trust::ScoreOptions;
use lofm_core::Endpoint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::app::{parse_stage, Lofm, DEFAULT_SEED};
use crate::csv_io;
use crate::error::{AppError, ErrorKind};
use crate::state::Settings;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    lofm: Arc<RwLock<Lofm>>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(lofm: Lofm, token: Option<String>) -> Self {
        AppState { lofm: Arc::new(RwLock::new(lofm)), token: token.map(Into::into) }
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub data: PathBuf,
    pub addr: SocketAddr,
    pub token: Option<String>,
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Domain => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, AppError>;

/// JSON body parser that reports failures as `{code, message}`. An empty
/// body reads as `{}` so that optional bodies can be omitted.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| AppError::bad_request("invalid-body", e.to_string()))
}

fn idempotency_key(headers: &HeaderMap) -> ApiResult<Option<String>> {
    match headers.get(IDEMPOTENCY_HEADER) {
        None => Ok(None),
        Some(v) => {
            v.to_str().ok().filter(|s| !s.is_empty() && s.len() <= 200).map(|s| Some(s.to_string())).ok_or_else(|| {
                AppError::bad_request("invalid-idempotency-key", "key must be 1-200 visible ASCII characters")
            })
        }
    }
}

fn date(s: &str) -> ApiResult<NaiveDate> {
    s.parse().map_err(|_| AppError::bad_request("invalid-date", format!("`{s}` is not a YYYY-MM-DD date")))
}

fn text(content_type: &'static str, body: String) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], body).into_response()
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            let err = AppError::new(ErrorKind::BadRequest, "unauthorized", "missing or wrong bearer token");
            return (StatusCode::UNAUTHORIZED, Json(err)).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/participants", post(register).get(list_participants))
        .route("/v1/participants/{id}", get(participant))
        .route("/v1/participants/{id}/observations", post(ingest))
        .route("/v1/participants/{id}/quality", get(quality))
        .route("/v1/participants/{id}/objective", put(objective))
        .route("/v1/participants/{id}/baseline/confirm", post(confirm_baseline))
        .route("/v1/participants/{id}/baseline/exclude", post(exclude))
        .route("/v1/participants/{id}/validation/{metric}", get(validation))
        .route("/v1/participants/{id}/model/train", post(train))
        .route("/v1/participants/{id}/matrix", get(matrix))
        .route("/v1/participants/{id}/assessments", get(assessments))
        .route("/v1/participants/{id}/selection", post(select))
        .route("/v1/participants/{id}/targets", put(targets))
        .route("/v1/participants/{id}/tracker/{date}", get(tracker))
        .route("/v1/cohort/metrics", get(cohort_metrics))
        .route("/v1/cohort/doti", get(cohort_doti))
        .fallback(|| async { AppError::not_found("no-route", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

pub async fn serve(cfg: ServeConfig) -> Result<(), Box<dyn std::error::Error>> {
    let lofm = Lofm::open(&cfg.data)?;
    let app = router(AppState::new(lofm, cfg.token));
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Deserialize)]
struct RegisterBody {
    participant_id: String,
    #[serde(default)]
    settings: Settings,
}

async fn register(State(st): State<AppState>, headers: HeaderMap, bytes: Bytes) -> ApiResult<Response> {
    let b: RegisterBody = body(&bytes)?;
    let key = idempotency_key(&headers)?;
    let r = st.lofm.write().await.register(&b.participant_id, b.settings, Utc::now(), key.as_deref())?;
    Ok((StatusCode::CREATED, Json(r)).into_response())
}

async fn list_participants(State(st): State<AppState>) -> ApiResult<Response> {
    let lofm = st.lofm.read().await;
    let views = lofm.participants().iter().map(|id| lofm.view(id)).collect::<Result<Vec<_>, _>>()?;
    Ok(Json(views).into_response())
}

async fn participant(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.lofm.read().await.view(&id)?).into_response())
}

/// A JSON observation. Numbers may be given as numbers or strings; the
/// participant defaults to the one in the path.
#[derive(Deserialize)]
struct JsonRow {
    #[serde(default)]
    participant_id: Option<String>,
    date: String,
    metric_id: String,
    value: serde_json::Value,
    #[serde(default)]
    unit: String,
    source: String,
    coverage_pct: serde_json::Value,
}

#[derive(Deserialize)]
struct ObservationsBody {
    observations: Vec<JsonRow>,
}

fn scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

async fn ingest(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let is_csv =
        headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.starts_with("text/csv"));
    let rows: Vec<RowInput> = if is_csv {
        csv_io::read_observations(&bytes[..]).map_err(|e| AppError::bad_request("invalid-csv", e.to_string()))?
    } else {
        let b: ObservationsBody = body(&bytes)?;
        b.observations
            .into_iter()
            .enumerate()
            .map(|(i, r)| RowInput {
                line: i + 1,
                participant_id: r.participant_id.unwrap_or_else(|| id.clone()),
                date: r.date,
                metric_id: r.metric_id,
                value: scalar(&r.value),
                unit: r.unit,
                source: r.source,
                coverage_pct: scalar(&r.coverage_pct),
            })
            .collect()
    };
    let key = idempotency_key(&headers)?;
    let report = st.lofm.write().await.ingest(rows, Some(&id), false, Utc::now(), key.as_deref())?;
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct QualityQuery {
    from: Option<String>,
    to: Option<String>,
    threshold: Option<f64>,
}

async fn quality(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<QualityQuery>,
) -> ApiResult<Response> {
    let from = q.from.as_deref().map(date).transpose()?;
    let to = q.to.as_deref().map(date).transpose()?;
    Ok(Json(st.lofm.read().await.quality(&id, from, to, q.threshold)?).into_response())
}

#[derive(Deserialize)]
struct ObjectiveBody {
    objective: String,
}

async fn objective(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: ObjectiveBody = body(&bytes)?;
    let objective: Endpoint = b
        .objective
        .parse()
        .map_err(|e: lofm_core::registry::UnknownEndpoint| AppError::bad_request("invalid-objective", e.to_string()))?;
    let key = idempotency_key(&headers)?;
    Ok(Json(st.lofm.write().await.set_objective(&id, objective, Utc::now(), key.as_deref())?).into_response())
}

#[derive(Deserialize)]
struct ConfirmBody {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn confirm_baseline(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: ConfirmBody = body(&bytes)?;
    let key = idempotency_key(&headers)?;
    let w = st.lofm.write().await.confirm_baseline(&id, b.from, b.to, Utc::now(), key.as_deref())?;
    Ok(Json(w).into_response())
}

#[derive(Deserialize)]
struct ExcludeBody {
    dates: Vec<NaiveDate>,
    reason: String,
}

async fn exclude(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: ExcludeBody = body(&bytes)?;
    let key = idempotency_key(&headers)?;
    let out = st.lofm.write().await.exclude_days(&id, &b.dates, &b.reason, Utc::now(), key.as_deref())?;
    Ok(Json(out).into_response())
}

async fn validation(State(st): State<AppState>, Path((id, metric)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(st.lofm.read().await.validation(&id, &metric)?).into_response())
}

/// Hyperparameters with every field optional; omitted ones take defaults.
#[derive(Deserialize, Default)]
#[serde(default)]
struct HyperparamsBody {
    n_trees: Option<usize>,
    max_depth: Option<usize>,
    learning_rate: Option<f64>,
    min_samples_leaf: Option<usize>,
    subsample: Option<f64>,
}

impl From<HyperparamsBody> for Hyperparams {
    fn from(b: HyperparamsBody) -> Self {
        let d = Hyperparams::default();
        Hyperparams {
            n_trees: b.n_trees.unwrap_or(d.n_trees),
            max_depth: b.max_depth.unwrap_or(d.max_depth),
            learning_rate: b.learning_rate.unwrap_or(d.learning_rate),
            min_samples_leaf: b.min_samples_leaf.unwrap_or(d.min_samples_leaf),
            subsample: b.subsample.unwrap_or(d.subsample),
        }
    }
}

#[derive(Deserialize)]
struct TrainBody {
    seed: Option<u64>,
    #[serde(default)]
    hyperparams: HyperparamsBody,
}

async fn train(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: TrainBody = body(&bytes)?;
    let key = idempotency_key(&headers)?;
    let hp = Hyperparams::from(b.hyperparams);
    let seed = b.seed.unwrap_or(DEFAULT_SEED);
    Ok(Json(st.lofm.write().await.train(&id, seed, &hp, Utc::now(), key.as_deref())?).into_response())
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn matrix(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let format: Format = q.format.as_deref().unwrap_or("json").parse()?;
    let lofm = st.lofm.read().await;
    let m = &lofm.matrix(&id)?.matrix;
    Ok(match format {
        Format::Json => Json(m).into_response(),
        Format::Text => text("text/plain; charset=utf-8", render(m, Format::Text)),
        Format::Svg => text("image/svg+xml", render(m, Format::Svg)),
    })
}

#[derive(Serialize)]
struct AssessmentsView<'a> {
    assessments: &'a [lofm_core::RuleAssessment],
    warnings: &'a [String],
}

async fn assessments(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let lofm = st.lofm.read().await;
    let rec = lofm.matrix(&id)?;
    Ok(Json(AssessmentsView { assessments: &rec.assessments, warnings: &rec.warnings }).into_response())
}

#[derive(Deserialize)]
struct SelectionBody {
    choices: Vec<String>,
}

async fn select(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: SelectionBody = body(&bytes)?;
    let key = idempotency_key(&headers)?;
    Ok(Json(st.lofm.write().await.select(&id, &b.choices, Utc::now(), key.as_deref())?).into_response())
}

#[derive(Deserialize)]
struct TargetsBody {
    targets: Vec<serde_json::Value>,
    set_on: Option<NaiveDate>,
}

/// Targets may be given as objects or in the short text form (`"steps >= 8000"`).
fn target(v: serde_json::Value) -> ApiResult<TargetSpec> {
    let parsed = match v {
        serde_json::Value::String(s) => s.parse::<TargetSpec>().map_err(|e| e.to_string()),
        other => serde_json::from_value(other).map_err(|e| e.to_string()),
    };
    parsed.map_err(|m| AppError::bad_request("invalid-target", m))
}

async fn targets(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Response> {
    let b: TargetsBody = body(&bytes)?;
    let specs = b.targets.into_iter().map(target).collect::<ApiResult<Vec<_>>>()?;
    let key = idempotency_key(&headers)?;
    Ok(Json(st.lofm.write().await.set_targets(&id, &specs, b.set_on, Utc::now(), key.as_deref())?).into_response())
}

#[derive(Deserialize)]
struct TrackerQuery {
    #[serde(default)]
    record: bool,
}

async fn tracker(
    State(st): State<AppState>,
    Path((id, day)): Path<(String, String)>,
    Query(q): Query<TrackerQuery>,
) -> ApiResult<Response> {
    let day = date(&day)?;
    if q.record {
        let mut lofm = st.lofm.write().await;
        let view = lofm.track(&id, day)?;
        lofm.record_status(&view.status, Utc::now())?;
        return Ok(Json(view).into_response());
    }
    Ok(Json(st.lofm.read().await.track(&id, day)?).into_response())
}

#[derive(Deserialize)]
struct CohortQuery {
    stage: Option<String>,
    #[serde(default)]
    include_mandatory: bool,
    format: Option<String>,
}

fn wants_csv(format: Option<&str>) -> ApiResult<bool> {
    match format.unwrap_or("json") {
        "json" => Ok(false),
        "csv" => Ok(true),
        other => Err(AppError::bad_request("unknown-format", format!("format `{other}` is not json or csv"))),
    }
}

async fn cohort_metrics(State(st): State<AppState>, Query(q): Query<CohortQuery>) -> ApiResult<Response> {
    let stage = parse_stage(q.stage.as_deref().unwrap_or("intention"))?;
    let csv = wants_csv(q.format.as_deref())?;
    let opts = ScoreOptions { include_mandatory: q.include_mandatory };
    let table = st.lofm.read().await.cohort_metrics(stage, opts);
    Ok(if csv { text("text/csv; charset=utf-8", csv_io::metrics_csv(&table)) } else { Json(table).into_response() })
}

async fn cohort_doti(State(st): State<AppState>, Query(q): Query<CohortQuery>) -> ApiResult<Response> {
    let csv = wants_csv(q.format.as_deref())?;
    let opts = ScoreOptions { include_mandatory: q.include_mandatory };
    let report = st.lofm.read().await.cohort_doti(opts)?;
    Ok(if csv {
        text("text/csv; charset=utf-8", csv_io::doti_csv(&report.table))
    } else {
        Json(report).into_response()
    })
}

async fn health(State(st): State<AppState>) -> Response {
    let lofm = st.lofm.read().await;
    let counts = BTreeMap::from([("participants", lofm.participants().len()), ("events", lofm.store().events().len())]);
    Json(counts).into_response()
}
