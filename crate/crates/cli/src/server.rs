//! HTTP API over the session engine and the report directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use map_core::eval::{read_report, EvalReport};
use map_core::gateway::GatewayError;
use map_core::session::{SessionEngine, SessionError, SessionEvent};
use map_core::similarity::{SimilarityError, StrategyKind};
use map_core::types::validate_user_id;
use map_core::{
    retrieve_memory, Domain, GenreSet, RetrievalConfig, ScoredMemory, StoreError, TargetItem,
    UserProfile,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<SessionEngine>,
    pub reports_dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Validation(_) => Self::bad_request("invalid_request", e.to_string()),
            StoreError::DuplicateRecord { .. } | StoreError::DuplicateRecordId(_) => {
                Self::bad_request("duplicate_record", e.to_string())
            }
            StoreError::UnknownUser(_) => Self::new(StatusCode::NOT_FOUND, "unknown_user", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string()),
        }
    }
}

impl From<SimilarityError> for ApiError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::Embedding(_) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "embedding_unavailable", e.to_string())
            }
            _ => Self::bad_request("invalid_request", e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Store(e) => e.into(),
            SessionError::Similarity(e) => e.into(),
            SessionError::Prompt(e) => Self::bad_request("invalid_request", e.to_string()),
            SessionError::Gateway(GatewayError::InvalidRequest(m)) => Self::bad_request("invalid_request", m),
            SessionError::Gateway(e) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "gateway_unavailable", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

fn check_user(user_id: &str) -> Result<(), ApiError> {
    validate_user_id(user_id).map_err(|e| ApiError::bad_request("invalid_user_id", e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

async fn post_message(
    State(state): State<AppState>,
    UrlPath(user_id): UrlPath<String>,
    Json(body): Json<MessageBody>,
) -> ApiResult<SessionEvent> {
    check_user(&user_id)?;
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_message", "message text is empty"));
    }
    blocking(move || Ok(state.engine.handle_query(&user_id, &body.text)?)).await
}

async fn get_profile(State(state): State<AppState>, UrlPath(user_id): UrlPath<String>) -> ApiResult<UserProfile> {
    check_user(&user_id)?;
    blocking(move || Ok(state.engine.store().profile(&user_id)?)).await
}

#[derive(Debug, Default, Deserialize)]
pub struct PreviewQuery {
    #[serde(default)]
    pub title: String,
    /// Comma-separated.
    #[serde(default)]
    pub genres: String,
    pub k: Option<usize>,
    pub domain: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct MemoryPreview {
    pub user_id: String,
    pub revision: u64,
    pub strategy: StrategyKind,
    pub k: usize,
    pub memory: Vec<ScoredMemory>,
}

async fn memory_preview(
    State(state): State<AppState>,
    UrlPath(user_id): UrlPath<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<MemoryPreview> {
    check_user(&user_id)?;
    let genres = GenreSet::from_labels(q.genres.split(',').map(str::trim).filter(|g| !g.is_empty()));
    let title = q.title.trim().to_string();
    if title.is_empty() && genres.is_empty() {
        return Err(ApiError::bad_request("invalid_request", "give a title or genres"));
    }
    let domain = match q.domain.as_deref() {
        None | Some("movie") => Domain::Movie,
        Some("book") => Domain::Book,
        Some(other) => return Err(ApiError::bad_request("invalid_request", format!("unknown domain `{other}`"))),
    };
    blocking(move || {
        let store = state.engine.store();
        let profile = store.profile(&user_id)?;
        let base = &state.engine.config().retrieval;
        let config = RetrievalConfig {
            k: q.k.unwrap_or(base.k),
            ..base.clone()
        };
        let target = TargetItem {
            item_id: "preview".into(),
            title,
            domain,
            genres,
            description: String::new(),
        };
        let memory = retrieve_memory(&profile.records, &target, &config)?;
        Ok(MemoryPreview {
            user_id,
            revision: profile.revision,
            strategy: config.strategy.kind(),
            k: config.k,
            memory,
        })
    })
    .await
}

/// A report without its traces.
#[derive(Debug, Serialize)]
pub struct ReportSummary {
    pub report_id: String,
    pub protocol: map_core::eval::Protocol,
    pub recommender: map_core::eval::Recommender,
    pub strategy: StrategyKind,
    pub k: usize,
    pub gateway: String,
    pub users: usize,
    pub history_range: (usize, usize),
    pub mae_by_size: std::collections::BTreeMap<usize, f64>,
    pub smoothed_mae_by_size: std::collections::BTreeMap<usize, f64>,
    pub cost_per_10_history: f64,
    pub traces: usize,
}

impl From<EvalReport> for ReportSummary {
    fn from(r: EvalReport) -> Self {
        Self {
            report_id: r.report_id,
            protocol: r.protocol,
            recommender: r.recommender,
            strategy: r.strategy,
            k: r.k,
            gateway: r.gateway,
            users: r.users,
            history_range: r.history_range,
            mae_by_size: r.mae_by_size,
            smoothed_mae_by_size: r.smoothed_mae_by_size,
            cost_per_10_history: r.cost_per_10_history,
            traces: r.traces.len(),
        }
    }
}

/// Every readable `*.json` report in `dir`, sorted by id. Unreadable files
/// are skipped.
pub fn list_reports(dir: &Path) -> Vec<EvalReport> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut reports: Vec<EvalReport> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter_map(|p| match read_report(&p) {
            Ok(r) => Some(r),
            Err(e) => {
                tracing::warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect();
    reports.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    reports
}

async fn get_reports(State(state): State<AppState>) -> ApiResult<Vec<ReportSummary>> {
    blocking(move || Ok(list_reports(&state.reports_dir).into_iter().map(ReportSummary::from).collect())).await
}

async fn get_report(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<EvalReport> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "report_not_found", format!("no report `{id}`"));
    let safe = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !safe {
        return Err(not_found());
    }
    let path = state.reports_dir.join(format!("{id}.json"));
    if !path.is_file() {
        return Err(not_found());
    }
    blocking(move || {
        read_report(&path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report_unreadable", e.to_string()))
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState, console_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session/{user_id}/message", post(post_message))
        .route("/api/profile/{user_id}", get(get_profile))
        .route("/api/profile/{user_id}/memory-preview", get(memory_preview))
        .route("/api/reports", get(get_reports))
        .route("/api/reports/{id}", get(get_report))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(state);
    match console_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
