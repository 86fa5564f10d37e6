//! HTTP API: `GET /networks`, `POST /perimeters`, `GET /health`.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, RawQuery, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use netmap_core::corpus::EntityType;
use netmap_core::enrich::LabelClient;
use netmap_core::index::CorpusIndex;
use netmap_core::pipeline::{run_pipeline, LabelingMode, NetworkRequest, PipelineContext};

use crate::perimeters::{Perimeter, PerimeterError, PerimeterRegistry};

const CACHE_CAPACITY: usize = 256;
const CACHE_CONTROL: &str = "public, max-age=300";

struct Cached {
    body: String,
    server_timing: String,
}

pub struct AppState {
    pub index: Arc<CorpusIndex>,
    pub perimeters: Arc<PerimeterRegistry>,
    pub label_client: Option<Arc<dyn LabelClient>>,
    pub current_year: i32,
    cache: Mutex<HashMap<String, Arc<Cached>>>,
    generation: AtomicU64,
}

impl AppState {
    pub fn new(
        index: Arc<CorpusIndex>,
        perimeters: Arc<PerimeterRegistry>,
        label_client: Option<Arc<dyn LabelClient>>,
        current_year: i32,
    ) -> Self {
        AppState {
            index,
            perimeters,
            label_client,
            current_year,
            cache: Mutex::new(HashMap::new()),
            generation: AtomicU64::new(0),
        }
    }

    fn cached(&self, key: &str) -> Option<Arc<Cached>> {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    fn store(&self, key: String, generation: u64, entry: Cached) {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        // A perimeter change since the request started makes its result stale.
        if self.generation.load(Ordering::SeqCst) != generation {
            return;
        }
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(key, Arc::new(entry));
    }

    fn invalidate(&self) {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        self.generation.fetch_add(1, Ordering::SeqCst);
        cache.clear();
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([header::HeaderName::from_static("server-timing")]);
    Router::new()
        .route("/networks", get(get_network))
        .route("/perimeters", post(post_perimeter))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// Query parameters for `/networks`, with the `timings` flag split out.
pub fn parse_network_params(params: &BTreeMap<String, String>) -> Result<(NetworkRequest, bool), String> {
    let mut req = NetworkRequest::default();
    let mut timings = false;
    for (k, v) in params {
        let bad = |what: &str| format!("invalid {k}={v:?}: {what}");
        match k.as_str() {
            "q" => req.q = v.clone(),
            "model" => req.model = v.parse::<EntityType>().map_err(|e| bad(&e.to_string()))?,
            "max_nodes" => {
                req.max_nodes = v.parse().map_err(|_| bad("expected an integer"))?;
                if req.max_nodes < 2 {
                    return Err(bad("must be at least 2"));
                }
            }
            "top_links" => {
                req.top_links = v.parse().map_err(|_| bad("expected an integer"))?;
                if req.top_links == 0 {
                    return Err(bad("must be positive"));
                }
            }
            "perimeter" => req.perimeter_id = (!v.is_empty()).then(|| v.clone()),
            "seed" => req.seed = Some(v.parse().map_err(|_| bad("expected an unsigned integer"))?),
            "labeling" => req.labeling = v.parse::<LabelingMode>().map_err(|e| bad(&e))?,
            "timings" => timings = v.parse().map_err(|_| bad("expected true or false"))?,
            _ => return Err(format!("unknown parameter {k:?}")),
        }
    }
    Ok((req, timings))
}

fn network_response(body: String, server_timing: &str, hit: bool) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "application/json")], body).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static(CACHE_CONTROL));
    headers.insert("x-cache", HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    if let Ok(v) = HeaderValue::from_str(server_timing) {
        headers.insert("server-timing", v);
    }
    resp
}

async fn get_network(
    State(state): State<Arc<AppState>>,
    RawQuery(raw): RawQuery,
    Query(params): Query<BTreeMap<String, String>>,
) -> Response {
    let (req, timings) = match parse_network_params(&params) {
        Ok(parsed) => parsed,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    };
    let key = raw.unwrap_or_default();
    if !timings {
        if let Some(hit) = state.cached(&key) {
            return network_response(hit.body.clone(), &hit.server_timing, true);
        }
    }
    let generation = state.generation.load(Ordering::SeqCst);
    let perimeter = match &req.perimeter_id {
        Some(id) => match state.perimeters.get(id) {
            Some(p) => Some(p),
            None => return error(StatusCode::NOT_FOUND, format!("unknown perimeter {id:?}")),
        },
        None => None,
    };

    let worker = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let ctx = PipelineContext {
            index: &worker.index,
            label_client: worker.label_client.as_deref(),
            current_year: worker.current_year,
        };
        run_pipeline(&ctx, &req, perimeter.as_deref()).map(|(mut resp, t)| {
            if timings {
                resp.diagnostics.timings_ms = Some(t.as_millis());
            }
            (resp.to_json(), t.header_value())
        })
    })
    .await;

    match outcome {
        Ok(Ok((body, server_timing))) => {
            if !timings {
                state.store(key, generation, Cached { body: body.clone(), server_timing: server_timing.clone() });
            }
            network_response(body, &server_timing, false)
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("pipeline task failed: {e}")),
    }
}

async fn post_perimeter(State(state): State<Arc<AppState>>, Json(p): Json<Perimeter>) -> Response {
    let id = p.perimeter_id.trim().to_string();
    let size = p.pub_ids.len();
    let known = p.pub_ids.iter().filter(|id| state.index.get(id).is_some()).count();
    let registry = Arc::clone(&state.perimeters);
    match tokio::task::spawn_blocking(move || registry.register(p)).await {
        Ok(Ok(())) => {
            state.invalidate();
            let body = json!({ "perimeter_id": id, "pub_ids": size, "known_pub_ids": known });
            (StatusCode::CREATED, Json(body)).into_response()
        }
        Ok(Err(e @ PerimeterError::EmptyId)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "status": "ok", "documents": state.index.len(), "perimeters": state.perimeters.len() })).into_response()
}
