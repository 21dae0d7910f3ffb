//! HTTP annotation service.
//!
//! Each session owns a prepared predictor and its interactive state behind
//! an async mutex, so clicks within a session are serialised in arrival
//! order while different sessions proceed independently. Predictor work
//! runs on the blocking pool. Idle sessions are dropped after
//! [`ServiceOptions::idle_timeout`].

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub use session::{ClickRequest, ClickResponse, ClickView, Session, SessionSnapshot, SurfaceSnapshot};

use crate::dataset::{Dataset, DatasetError};
use crate::eval::{ClickLogEntry, EvalConfig, EvalError};
use crate::mask::MaskError;
use crate::predictor::{BuildContext, PredictorSpec};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("surface {surface} has used its budget of {n_max} clicks")]
    BudgetExhausted { surface: u16, n_max: usize },
    #[error("no clicks to undo")]
    NothingToUndo,
    #[error("predictor failed: {0}")]
    Predictor(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("evaluation error: {0}")]
    Eval(EvalError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BudgetExhausted { surface, n_max } => Self::BudgetExhausted { surface, n_max },
            EvalError::Mask(m) => Self::Mask(m),
            EvalError::Config(m) => Self::BadRequest(m),
            EvalError::Predictor { source, .. } => Self::Predictor(source.to_string()),
            other => Self::Eval(other),
        }
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownSession(_) => StatusCode::NOT_FOUND,
            Self::Dataset(DatasetError::UnknownImage(_)) => StatusCode::NOT_FOUND,
            Self::BadRequest(_) | Self::Mask(_) => StatusCode::BAD_REQUEST,
            Self::BudgetExhausted { .. } | Self::NothingToUndo => StatusCode::CONFLICT,
            Self::Predictor(_) => StatusCode::BAD_GATEWAY,
            Self::Dataset(_) | Self::Eval(_) | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "unknown_session",
            Self::BadRequest(_) => "bad_request",
            Self::BudgetExhausted { .. } => "budget_exhausted",
            Self::NothingToUndo => "nothing_to_undo",
            Self::Predictor(_) => "predictor",
            Self::Dataset(_) => "dataset",
            Self::Mask(_) => "mask",
            Self::Eval(_) => "eval",
            Self::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.kind(), "message": self.to_string() }))).into_response()
    }
}

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    /// Used when a session request names no predictor.
    pub predictor: PredictorSpec,
    pub eval: EvalConfig,
    pub idle_timeout: Duration,
    pub remote_timeout: Duration,
    /// Built UI assets served at `/`; a placeholder page otherwise.
    pub static_dir: Option<PathBuf>,
}

impl ServiceOptions {
    pub fn new(predictor: PredictorSpec) -> Self {
        Self {
            predictor,
            eval: EvalConfig::new(80.0, 70.0, crate::eval::DEFAULT_MAX_CLICKS).expect("default thresholds are valid"),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            remote_timeout: crate::predictor::remote::DEFAULT_TIMEOUT,
            static_dir: None,
        }
    }
}

struct Slot {
    session: Arc<tokio::sync::Mutex<Session>>,
    touched: Instant,
}

struct Shared {
    dataset: Dataset,
    opts: ServiceOptions,
    sessions: Mutex<HashMap<String, Slot>>,
    counter: AtomicU64,
}

/// Cloneable handle to the service state.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(dataset: Dataset, opts: ServiceOptions) -> Self {
        Self(Arc::new(Shared { dataset, opts, sessions: Mutex::default(), counter: AtomicU64::new(0) }))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0.dataset
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, Slot>> {
        // a panicked holder cannot leave the map itself inconsistent
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Drop sessions idle for longer than the configured timeout as of `now`.
    /// Returns how many were removed.
    pub fn expire_idle(&self, now: Instant) -> usize {
        let timeout = self.0.opts.idle_timeout;
        let mut map = self.sessions();
        let before = map.len();
        map.retain(|_, slot| now.saturating_duration_since(slot.touched) <= timeout);
        before - map.len()
    }

    fn lookup(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ServiceError> {
        let mut map = self.sessions();
        let slot = map.get_mut(id).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        slot.touched = Instant::now();
        Ok(Arc::clone(&slot.session))
    }

    /// Run `f` on session `id` on the blocking pool, serialised with any
    /// other request to the same session.
    async fn with_session<T, F>(&self, id: &str, f: F) -> Result<T, ServiceError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, ServiceError> + Send + 'static,
    {
        let slot = self.lookup(id)?;
        let mut guard = slot.lock_owned().await;
        tokio::task::spawn_blocking(move || f(&mut guard))
            .await
            .map_err(|e| ServiceError::Internal(format!("session task failed: {e}")))?
    }

    async fn create(&self, request: CreateSession) -> Result<CreateSessionResponse, ServiceError> {
        self.expire_idle(Instant::now());
        let spec = match &request.predictor {
            Some(s) => s.parse::<PredictorSpec>().map_err(|e| ServiceError::BadRequest(e.to_string()))?,
            None => self.0.opts.predictor.clone(),
        };
        let cfg = request.config.unwrap_or_default().apply(&self.0.opts.eval)?;
        let id = format!("s{:06}", self.0.counter.fetch_add(1, Ordering::Relaxed) + 1);
        let shared = Arc::clone(&self.0);
        let session_id = id.clone();
        let session = tokio::task::spawn_blocking(move || -> Result<Session, ServiceError> {
            let sample = shared.dataset.load_sample(&request.image_id)?;
            let (h, w) = sample.dims();
            let ctx = BuildContext {
                manifest: shared.dataset.manifest(),
                resolution: [h, w],
                disk_radius: cfg.disk_radius,
                remote_timeout: shared.opts.remote_timeout,
            };
            let predictor = spec.build(&ctx).map_err(|e| ServiceError::Predictor(e.to_string()))?;
            Session::new(session_id, sample, predictor, cfg)
        })
        .await
        .map_err(|e| ServiceError::Internal(format!("session setup failed: {e}")))??;
        let response = CreateSessionResponse {
            session_id: id.clone(),
            image_id: session.state().image_id().to_string(),
            height: session.state().joint().height(),
            width: session.state().joint().width(),
            surfaces: session.surface_ids(),
        };
        let slot = Slot { session: Arc::new(tokio::sync::Mutex::new(session)), touched: Instant::now() };
        self.sessions().insert(id, slot);
        Ok(response)
    }
}

/// Optional per-session overrides of the service's evaluation settings.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub theta_iou: Option<f64>,
    pub theta_avg: Option<f64>,
    pub max_clicks: Option<usize>,
    pub disk_radius: Option<u32>,
}

impl SessionConfig {
    fn apply(self, base: &EvalConfig) -> Result<EvalConfig, ServiceError> {
        let mut cfg = base.clone();
        cfg.theta_iou = self.theta_iou.unwrap_or(cfg.theta_iou);
        cfg.theta_avg = self.theta_avg.unwrap_or(cfg.theta_avg);
        cfg.n_max = self.max_clicks.unwrap_or(cfg.n_max);
        cfg.disk_radius = self.disk_radius.unwrap_or(cfg.disk_radius);
        cfg.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct CreateSession {
    pub image_id: String,
    #[serde(default)]
    pub predictor: Option<String>,
    #[serde(default)]
    pub config: Option<SessionConfig>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub surfaces: Vec<u16>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
struct SelectSurface {
    surface: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLogExport {
    pub image_id: String,
    pub clicks: Vec<ClickLogEntry>,
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

async fn list_datasets(State(app): State<AppState>) -> Json<serde_json::Value> {
    let ds = app.dataset();
    let name = ds.root().file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let modalities: Vec<_> =
        ds.manifest().modalities.iter().map(|m| json!({ "name": m.name, "channels": m.channels })).collect();
    Json(json!({
        "datasets": [{ "name": name, "images": ds.ids(), "modalities": modalities }],
        "default_predictor": app.0.opts.predictor.to_string(),
    }))
}

async fn png_file(path: PathBuf) -> Result<Response, ServiceError> {
    let bytes = tokio::fs::read(&path).await.map_err(|source| ServiceError::Dataset(DatasetError::Io { path, source }))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn known_image(app: &AppState, id: &str) -> Result<(), ServiceError> {
    if app.dataset().ids().iter().any(|i| i == id) {
        Ok(())
    } else {
        Err(DatasetError::UnknownImage(id.to_string()).into())
    }
}

async fn image_rgb(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    known_image(&app, &id)?;
    png_file(app.dataset().rgb_path(&id)).await
}

async fn image_modality(
    State(app): State<AppState>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    known_image(&app, &id)?;
    if !app.dataset().manifest().modalities.iter().any(|m| m.name == name) {
        return Err(ServiceError::BadRequest(format!("unknown modality '{name}'")));
    }
    png_file(app.dataset().modality_path(&name, &id)).await
}

async fn create_session(
    State(app): State<AppState>,
    Json(request): Json<CreateSession>,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ServiceError> {
    Ok((StatusCode::CREATED, Json(app.create(request).await?)))
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSnapshot> {
    app.with_session(&id, |s| s.snapshot()).await.map(Json)
}

async fn post_click(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(click): Json<ClickRequest>,
) -> ApiResult<ClickResponse> {
    app.with_session(&id, move |s| s.click(click)).await.map(Json)
}

async fn undo(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSnapshot> {
    app.with_session(&id, |s| s.undo()).await.map(Json)
}

async fn select_surface(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SelectSurface>,
) -> ApiResult<SessionSnapshot> {
    app.with_session(&id, move |s| s.select_surface(body.surface)).await.map(Json)
}

async fn select_worst(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let pick = app.with_session(&id, |s| s.select_worst()).await?;
    Ok(Json(json!({ "surface": pick })))
}

async fn click_log(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ClickLogExport> {
    app.with_session(&id, |s| {
        Ok(ClickLogExport { image_id: s.state().image_id().to_string(), clicks: s.log().to_vec() })
    })
    .await
    .map(Json)
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    match app.sessions().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ServiceError::UnknownSession(id)),
    }
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>mmms</title><p>Annotation UI not built. The JSON API lives under /api.</p>")
}

pub fn router(app: AppState) -> Router {
    let api = Router::new()
        .route("/api/datasets", get(list_datasets))
        .route("/api/images/{id}/rgb", get(image_rgb))
        .route("/api/images/{id}/modalities/{name}", get(image_modality))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", axum::routing::delete(delete_session))
        .route("/api/sessions/{id}/state", get(get_state))
        .route("/api/sessions/{id}/clicks", post(post_click))
        .route("/api/sessions/{id}/undo", post(undo))
        .route("/api/sessions/{id}/select-surface", post(select_surface))
        .route("/api/sessions/{id}/select-worst", post(select_worst))
        .route("/api/sessions/{id}/log", get(click_log));
    let router = match &app.0.opts.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    };
    router.with_state(app)
}

/// Bind `addr` and serve until the process ends, sweeping idle sessions
/// once a minute.
pub async fn serve(app: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.expire_idle(Instant::now());
        }
    });
    axum::serve(listener, router(app)).await
}
