//! HTTP demo service: layout documents, decoding and health.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use swipeforge_core::geometry::{LayoutRegistry, Point};
use swipeforge_core::pipeline::{decode_points, Pipeline, Suggestion, TaskKind, TaskSpec};
use swipeforge_core::synth::TraceRecord;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::args::ServeArgs;
use crate::bundle;
use crate::error::{CliError, CliResult};

pub const MAX_K: usize = 3;

#[derive(Clone, Debug, Deserialize)]
pub struct DecodeRequest {
    pub layout_name: String,
    pub task: TaskKind,
    pub points: Vec<[f64; 2]>,
    pub k: usize,
}

impl DecodeRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.points.len() < 2 {
            return Err("at least 2 points are required".into());
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        if self.k == 0 || self.k > MAX_K {
            return Err(format!("k must be between 1 and {MAX_K}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub suggestions: Vec<Suggestion>,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoadedTask {
    pub bundle: PathBuf,
    pub spec: TaskSpec,
}

pub struct Models {
    pub pipelines: Vec<Arc<Pipeline>>,
    pub tasks: Vec<LoadedTask>,
}

pub struct AppState {
    layouts: RwLock<LayoutRegistry>,
    models: OnceLock<Models>,
    budget: Duration,
    requests: AtomicU64,
    failures: AtomicU64,
    trace_log: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(layouts: LayoutRegistry, budget: Duration) -> Self {
        Self {
            layouts: RwLock::new(layouts),
            models: OnceLock::new(),
            budget,
            requests: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            trace_log: None,
        }
    }

    pub fn with_trace_log(mut self, path: &Path) -> CliResult<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.trace_log = Some(Mutex::new(f));
        Ok(self)
    }

    /// Loads every bundle under `model_dir`. Blocking.
    pub fn load_models(&self, model_dir: &Path) -> CliResult<()> {
        let mut layouts = self.layouts.read().expect("layout lock").clone();
        let mut pipelines = Vec::new();
        let mut tasks = Vec::new();
        for dir in bundle::discover(model_dir)? {
            let spec = bundle::read_spec(&dir)?;
            pipelines.push(Arc::new(Pipeline::load(&spec, &dir, &mut layouts)?));
            tasks.push(LoadedTask { bundle: dir, spec });
        }
        *self.layouts.write().expect("layout lock") = layouts;
        self.install(Models { pipelines, tasks });
        Ok(())
    }

    pub fn install(&self, models: Models) {
        if self.models.set(models).is_err() {
            eprintln!("models were already loaded; ignoring the second load");
        }
    }

    fn layout_source(&self, name: &str) -> Option<String> {
        self.layouts
            .read()
            .expect("layout lock")
            .source(name)
            .map(str::to_string)
    }
}

fn error_body(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({"error": msg.into()}))).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let layouts = state.layouts.read().expect("layout lock").names();
    let requests = state.requests.load(Ordering::Relaxed);
    let failures = state.failures.load(Ordering::Relaxed);
    match state.models.get() {
        None => Json(
            json!({"status": "loading", "layouts": layouts, "models": [], "requests": requests}),
        )
        .into_response(),
        Some(m) => Json(json!({
            "status": "ok",
            "layouts": layouts,
            "models": m.tasks,
            "requests": requests,
            "failures": failures,
        }))
        .into_response(),
    }
}

async fn layout(State(state): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> Response {
    match state.layout_source(&name) {
        Some(src) => ([(header::CONTENT_TYPE, "application/json")], src).into_response(),
        None => error_body(StatusCode::NOT_FOUND, format!("unknown layout {name:?}")),
    }
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("application/json"))
}

async fn decode(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    state.requests.fetch_add(1, Ordering::Relaxed);
    if !is_json(&headers) {
        return error_body(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "content type must be application/json",
        );
    }
    let req: DecodeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if let Err(msg) = req.validate() {
        return error_body(StatusCode::BAD_REQUEST, msg);
    }
    let Some(models) = state.models.get() else {
        return error_body(StatusCode::SERVICE_UNAVAILABLE, "models are still loading");
    };
    let Some(pipeline) = models.pipelines.iter().find(|p| p.kind == req.task) else {
        return error_body(
            StatusCode::CONFLICT,
            format!("no model is loaded for task {}", req.task.as_str()),
        );
    };
    if pipeline.layout.name() != req.layout_name {
        return error_body(
            StatusCode::CONFLICT,
            format!(
                "task {} is served on layout {:?}, not {:?}",
                req.task.as_str(),
                pipeline.layout.name(),
                req.layout_name
            ),
        );
    }
    let pipeline = Arc::clone(pipeline);
    let points: Vec<Point> = req.points.iter().map(|p| Point::new(p[0], p[1])).collect();
    let k = req.k;
    let work = tokio::task::spawn_blocking(move || decode_points(&pipeline, &points, k));
    let result = match tokio::time::timeout(state.budget, work).await {
        Err(_) => {
            return error_body(
                StatusCode::SERVICE_UNAVAILABLE,
                "decode exceeded the time budget",
            )
        }
        Ok(Err(join)) => Err(join.to_string()),
        Ok(Ok(r)) => r.map_err(|e| e.to_string()),
    };
    match result {
        Ok(r) => {
            if let Some(log) = &state.trace_log {
                let rec = TraceRecord {
                    word: r
                        .suggestions
                        .first()
                        .map(|s| s.word.clone())
                        .unwrap_or_default(),
                    layout_name: req.layout_name.clone(),
                    points: req.points.clone(),
                };
                if let Ok(line) = serde_json::to_string(&rec) {
                    let mut f = log.lock().expect("trace log lock");
                    let _ = writeln!(f, "{line}");
                }
            }
            Json(DecodeResponse {
                suggestions: r.suggestions,
                timing_ms: started.elapsed().as_secs_f64() * 1e3,
            })
            .into_response()
        }
        Err(msg) => {
            let id = state.failures.fetch_add(1, Ordering::Relaxed) + 1;
            let error_id = format!("decode-{id}");
            eprintln!("{error_id}: {msg}");
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(json!({"error": "internal decode failure", "error_id": error_id})),
            )
                .into_response()
        }
    }
}

pub fn cors(origin: Option<&str>) -> CliResult<CorsLayer> {
    let allow = match origin {
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o)
                .map_err(|e| CliError::Usage(format!("bad --cors-origin: {e}")))?,
        ),
        None => AllowOrigin::any(),
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: Arc<AppState>, cors: CorsLayer) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/layout/{name}", get(layout))
        .route("/decode", post(decode))
        .with_state(state)
        .layer(cors)
}

pub fn run(a: ServeArgs) -> CliResult<()> {
    let mut layouts = LayoutRegistry::with_bundled();
    for p in &a.layout_files {
        layouts.resolve(&p.to_string_lossy())?;
    }
    let mut state = AppState::new(layouts, Duration::from_millis(a.budget_ms));
    if let Some(p) = &a.log_traces {
        state = state.with_trace_log(p)?;
    }
    let state = Arc::new(state);
    let app = router(Arc::clone(&state), cors(a.cors_origin.as_deref())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = SocketAddr::new(a.host, a.port);
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        let loader = Arc::clone(&state);
        let dir = a.model_dir.clone();
        let load = tokio::task::spawn_blocking(move || loader.load_models(&dir));
        tokio::spawn(async move {
            match load.await {
                Ok(Ok(())) => eprintln!("models loaded"),
                Ok(Err(e)) => {
                    eprintln!("{}", e.to_line());
                    std::process::exit(e.exit_code());
                }
                Err(e) => {
                    eprintln!("{}", CliError::Usage(e.to_string()).to_line());
                    std::process::exit(1);
                }
            }
        });
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
