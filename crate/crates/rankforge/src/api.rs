//! JSON-over-HTTP service.
//!
//! Every response is an [`ApiEnvelope`]: `{"status":"ok","payload":...}` or
//! `{"status":"error","error":{"code","message","location"?}}`. GET handlers
//! read immutable session state and never modify it.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use rankforge_core::model::Subject;
use rankforge_core::rival::RivalMethod;
use rankforge_core::scenario::{Direction, ScenarioFilter, DEFAULT_BINS};
use rankforge_core::session::DEFAULT_PAGE_SIZE;
use rankforge_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{CreateSession, SessionStore};

pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub location: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl<T> ApiEnvelope<T> {
    pub fn ok(payload: T) -> Self {
        Self {
            status: Status::Ok,
            payload: Some(payload),
            error: None,
        }
    }
}

/// Failure carried to the client as an error envelope.
#[derive(Debug)]
pub struct ApiFailure(pub Error);

impl From<Error> for ApiFailure {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

/// Where in the input the error points, when the error knows.
pub fn location(err: &Error) -> Option<String> {
    match err {
        Error::Ingest {
            source_name,
            row,
            column,
            ..
        } => Some(match column {
            Some(c) => format!("{source_name}:{row}:{c}"),
            None => format!("{source_name}:{row}"),
        }),
        Error::Parse { offset, .. } => Some(format!("byte {offset}")),
        Error::Domain { attribute, .. } => Some(format!("attribute {attribute}")),
        Error::Training { indicator, .. } => Some(format!("indicator {indicator}")),
        Error::InsufficientHistory { rival, .. } => Some(format!("rival {rival}")),
        _ => None,
    }
}

fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Busy(_) => StatusCode::CONFLICT,
        Error::Io(_) | Error::Replay(_) | Error::Migration { .. } => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        Error::Training { .. } | Error::InsufficientHistory { .. } => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        let body = ApiEnvelope::<()> {
            status: Status::Error,
            payload: None,
            error: Some(ApiError {
                code: self.0.code().to_string(),
                message: self.0.to_string(),
                location: location(&self.0),
            }),
        };
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<ApiEnvelope<T>>, ApiFailure>;

fn ok<T>(payload: T) -> ApiResult<T> {
    Ok(Json(ApiEnvelope::ok(payload)))
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> rankforge_core::Result<Self> {
        Ok(Self {
            store: Arc::new(SessionStore::new(data_dir)?),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session_info))
        .route("/api/sessions/{id}/scenarios", get(scenarios))
        .route("/api/sessions/{id}/summary", get(summary))
        .route("/api/sessions/{id}/influence", get(influence))
        .route("/api/sessions/{id}/rivals/heatmap", get(rival_heatmap))
        .route("/api/sessions/{id}/rivals/radar", get(rival_radar))
        .route("/api/sessions/{id}/filters", post(add_filter))
        .route("/api/sessions/{id}/filters/last", delete(undo_filter))
        .fallback(|| async {
            ApiFailure(Error::NotFound("no such endpoint".into()))
        })
        .with_state(state)
}

/// Runs CPU-bound work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiFailure>
where
    F: FnOnce() -> rankforge_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiFailure(Error::Io(std::io::Error::other(e.to_string()))))?
        .map_err(ApiFailure)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiFailure> {
    let text = std::str::from_utf8(body)
        .map_err(|e| ApiFailure(Error::validation(format!("request body is not UTF-8: {e}"))))?;
    serde_json::from_str(text).map_err(|e| ApiFailure(Error::from_json(e, text)))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiFailure> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiFailure(Error::validation(e.body_text())))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub scenario_count: usize,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<SessionCreated> {
    let request: CreateSession = parse_body(&body)?;
    let store = Arc::clone(&state.store);
    let (session_id, scenario_count) = blocking(move || store.create(request)).await?;
    tracing::info!(%session_id, scenario_count, "session created");
    ok(SessionCreated {
        session_id,
        scenario_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub baseline: rankforge_core::model::RankeeRecord,
    pub scenario_count: usize,
    pub current_count: usize,
    pub rivals: Vec<String>,
    pub filter_log: Vec<rankforge_core::session::FilterLogEntry>,
}

async fn session_info(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionInfo> {
    let store = Arc::clone(&state.store);
    let info = blocking(move || {
        let entry = store.get(&id)?;
        let a = entry.read();
        let s = a.session();
        Ok(SessionInfo {
            session_id: s.session_id.clone(),
            baseline: s.baseline.clone(),
            scenario_count: s.scenario_count,
            current_count: a.current().len(),
            rivals: s.rival_ids(),
            filter_log: s.filter_log.clone(),
        })
    })
    .await?;
    ok(info)
}

#[derive(Debug, Default, Deserialize)]
pub struct ScenarioQuery {
    pub filter: Option<String>,
    pub sort: Option<String>,
    pub dir: Option<String>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

fn non_empty(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

async fn scenarios(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ScenarioQuery>, QueryRejection>,
) -> ApiResult<rankforge_core::session::ScenarioPage> {
    let q = query(q)?;
    let store = Arc::clone(&state.store);
    let page = blocking(move || {
        let filter = non_empty(&q.filter).map(str::parse::<ScenarioFilter>).transpose()?;
        let sort = non_empty(&q.sort).map(str::parse::<Subject>).transpose()?;
        let dir = non_empty(&q.dir).map(str::parse::<Direction>).transpose()?.unwrap_or_default();
        let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
        if page_size > MAX_PAGE_SIZE {
            return Err(Error::validation(format!("page_size may not exceed {MAX_PAGE_SIZE}")));
        }
        let entry = store.get(&id)?;
        let a = entry.read();
        let set = a.view(filter.as_ref(), sort.as_ref().map(|s| (s, dir)))?;
        a.page(&set, q.page.unwrap_or(0), page_size)
    })
    .await?;
    ok(page)
}

#[derive(Debug, Default, Deserialize)]
pub struct SummaryQuery {
    pub subject: Option<String>,
    pub bins: Option<usize>,
}

async fn summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SummaryQuery>, QueryRejection>,
) -> ApiResult<rankforge_core::scenario::HistogramSummary> {
    let q = query(q)?;
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let subject = non_empty(&q.subject)
            .map(str::parse::<Subject>)
            .transpose()?
            .unwrap_or(Subject::Final);
        let entry = store.get(&id)?;
        let a = entry.read();
        a.summary(&subject, q.bins.unwrap_or(DEFAULT_BINS))
    })
    .await?;
    ok(out)
}

/// Parses `"3,17,42"` into scenario ids.
pub fn parse_ids(text: &str) -> rankforge_core::Result<Vec<u64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::validation(format!("`{s}` is not a scenario id")))
        })
        .collect()
}

#[derive(Debug, Default, Deserialize)]
pub struct InfluenceQuery {
    pub scenarios: Option<String>,
}

async fn influence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<InfluenceQuery>, QueryRejection>,
) -> ApiResult<rankforge_core::influence::InfluenceMatrix> {
    let q = query(q)?;
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let ids = parse_ids(non_empty(&q.scenarios).ok_or_else(|| {
            Error::validation("`scenarios` must list at least one scenario id")
        })?)?;
        let entry = store.get(&id)?;
        let a = entry.read();
        a.influence(&ids)
    })
    .await?;
    ok(out)
}

#[derive(Debug, Default, Deserialize)]
pub struct RivalQuery {
    pub scenario: Option<u64>,
    pub method: Option<String>,
    pub highlight: Option<String>,
}

fn required_scenario(q: &RivalQuery) -> rankforge_core::Result<u64> {
    q.scenario
        .ok_or_else(|| Error::validation("`scenario` is required"))
}

async fn rival_heatmap(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<RivalQuery>, QueryRejection>,
) -> ApiResult<Vec<rankforge_core::rival::WinProbabilityCell>> {
    let q = query(q)?;
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let scenario = required_scenario(&q)?;
        let entry = store.get(&id)?;
        let a = entry.read();
        a.heatmap(scenario)
    })
    .await?;
    ok(out)
}

async fn rival_radar(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<RivalQuery>, QueryRejection>,
) -> ApiResult<rankforge_core::rival::RadarPayload> {
    let q = query(q)?;
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let scenario = required_scenario(&q)?;
        let method = non_empty(&q.method)
            .map(str::parse::<RivalMethod>)
            .transpose()?
            .unwrap_or(RivalMethod::CarryForward);
        let entry = store.get(&id)?;
        let a = entry.read();
        a.radar(scenario, method, non_empty(&q.highlight))
    })
    .await?;
    ok(out)
}

/// A filter as text (`"ind:AR mean>0; final delta>=-1"`) or as structured predicates.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FilterBody {
    Text { filter: String },
    Structured(ScenarioFilter),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub scenario_count: usize,
    pub filters: usize,
}

async fn add_filter(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<FilterState> {
    let filter = match parse_body::<FilterBody>(&body)? {
        FilterBody::Text { filter } => filter.parse::<ScenarioFilter>()?,
        FilterBody::Structured(f) => f,
    };
    if filter.predicates.is_empty() {
        return Err(Error::validation("filter has no predicates").into());
    }
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let scenario_count = store.push_filter(&id, filter)?;
        let filters = store.get(&id)?.read().session().filter_log.len();
        Ok(FilterState {
            scenario_count,
            filters,
        })
    })
    .await?;
    ok(out)
}

async fn undo_filter(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<FilterState> {
    let store = Arc::clone(&state.store);
    let out = blocking(move || {
        let scenario_count = store.pop_filter(&id)?;
        let filters = store.get(&id)?.read().session().filter_log.len();
        Ok(FilterState {
            scenario_count,
            filters,
        })
    })
    .await?;
    ok(out)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
}

/// Binds first so a taken port fails before anything else starts.
pub async fn serve(config: ServeConfig) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot listen on {}: {e}", config.addr))?;
    let state = AppState::new(&config.data_dir)
        .map_err(|e| anyhow::anyhow!("data directory {}: {e}", config.data_dir.display()))?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
