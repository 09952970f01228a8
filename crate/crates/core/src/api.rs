//! HTTP query service over the index store and pipeline counters.
//!
//! Routes:
//!
//! - `GET /api/flights/live?bbox=<tl_lat>,<tl_lng>,<br_lat>,<br_lng>&status=&airline=`
//! - `POST /api/search` with `{"index", "query", "aggs", "size", "sort"}`
//! - `GET /api/metrics`
//! - `GET /api/delays/summary?dataset=<id>`
//!
//! Every error response is `{"status", "code", "message"}`. Handlers are
//! read-only and each one answers from a single index view.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use axum::body::Bytes;
use axum::extract::{Query as QueryParams, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tower_http::cors::CorsLayer;

use crate::index::{document_to_json, Aggregation, IndexConfig, IndexError, IndexStore, Query, SortOrder};
use crate::metrics::{Metrics, MetricsSnapshot};
use crate::model::{FlightStatus, GeoPoint};

/// Hits returned by `/api/search` when the body has no `size`.
pub const DEFAULT_SEARCH_SIZE: usize = 10;

/// Dataset served by `/api/delays/summary` without a `dataset` parameter.
pub const DEFAULT_DATASET: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    MappingConflict,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(msg: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::BAD_REQUEST, code: ErrorCode::BadRequest, message: msg.into() }
    }

    pub fn not_found(msg: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::NOT_FOUND, code: ErrorCode::NotFound, message: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: ErrorCode::Internal, message: msg.into() }
    }

    pub fn to_json(&self) -> Value {
        json!({ "status": self.status.as_u16(), "code": self.code, "message": self.message })
    }
}

impl From<IndexError> for ApiError {
    fn from(e: IndexError) -> ApiError {
        let msg = e.to_string();
        match e {
            IndexError::MappingConflict { .. } => {
                ApiError { status: StatusCode::CONFLICT, code: ErrorCode::MappingConflict, message: msg }
            }
            IndexError::UnknownIndex(_) => ApiError::not_found(msg),
            IndexError::MalformedQuery(_)
            | IndexError::TypeMismatch { .. }
            | IndexError::InvalidValue { .. }
            | IndexError::InvalidConfig(_) => ApiError::bad_request(msg),
            IndexError::IndexExists(_) | IndexError::CorruptSnapshot(_) | IndexError::NoSnapshotDir | IndexError::Io(_) => {
                ApiError::internal(msg)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.to_json())).into_response()
    }
}

/// Where `/api/metrics` reads its counters from.
#[derive(Debug, Clone)]
pub enum MetricsSource {
    /// Counters of a pipeline running in this process.
    Live(Arc<Metrics>),
    /// A JSON snapshot written by a pipeline in another process; missing
    /// means nothing has run yet.
    File(PathBuf),
}

impl MetricsSource {
    pub fn read(&self) -> Result<MetricsSnapshot, ApiError> {
        match self {
            MetricsSource::Live(m) => Ok(m.snapshot()),
            MetricsSource::File(path) => match std::fs::read(path) {
                Ok(bytes) => serde_json::from_slice(&bytes)
                    .map_err(|e| ApiError::internal(format!("unreadable metrics file {}: {e}", path.display()))),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(MetricsSnapshot::default()),
                Err(e) => Err(ApiError::internal(format!("metrics file {}: {e}", path.display()))),
            },
        }
    }
}

#[derive(Clone)]
pub struct ApiState {
    pub store: Arc<IndexStore>,
    pub metrics: MetricsSource,
    /// Directory of exported delay summaries, `<id>.json`.
    pub delays_dir: Option<PathBuf>,
    pub positions_index: String,
}

impl ApiState {
    /// Creates the positions index if it does not exist so the live and
    /// search endpoints answer on a fresh system.
    pub fn new(store: Arc<IndexStore>, metrics: MetricsSource, delays_dir: Option<PathBuf>, positions_index: &str) -> Result<ApiState, IndexError> {
        store.ensure(IndexConfig::new(positions_index))?;
        Ok(ApiState { store, metrics, delays_dir, positions_index: positions_index.to_string() })
    }
}

pub fn router(state: ApiState, cors: bool) -> Router {
    let app = Router::new()
        .route("/api/flights/live", get(live_flights))
        .route("/api/search", post(search))
        .route("/api/metrics", get(metrics))
        .route("/api/delays/summary", get(delay_summary))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError { status: StatusCode::METHOD_NOT_ALLOWED, code: ErrorCode::BadRequest, message: "method not allowed".into() }
        })
        .with_state(state);
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("handler panicked: {e}")))?
}

/// Parses `tl_lat,tl_lng,br_lat,br_lng`.
pub fn parse_bbox(s: &str) -> Result<(GeoPoint, GeoPoint), ApiError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::bad_request(format!("bbox {s:?} is not four comma-separated numbers")))?;
    let [tl_lat, tl_lng, br_lat, br_lng] = parts[..] else {
        return Err(ApiError::bad_request(format!("bbox {s:?} must have exactly four values")));
    };
    let tl = GeoPoint::new(tl_lat, tl_lng).map_err(|e| ApiError::bad_request(format!("bbox top-left: {e}")))?;
    let br = GeoPoint::new(br_lat, br_lng).map_err(|e| ApiError::bad_request(format!("bbox bottom-right: {e}")))?;
    if tl.lat < br.lat {
        return Err(ApiError::bad_request("bbox top-left latitude is below bottom-right latitude"));
    }
    Ok((tl, br))
}

/// The filter `/api/flights/live` applies to each flight's latest position.
pub fn live_filter(params: &HashMap<String, String>) -> Result<Query, ApiError> {
    let mut must = vec![];
    for key in params.keys() {
        if !["bbox", "status", "airline"].contains(&key.as_str()) {
            return Err(ApiError::bad_request(format!("unknown parameter {key:?}")));
        }
    }
    if let Some(b) = params.get("bbox").filter(|b| !b.is_empty()) {
        let (top_left, bottom_right) = parse_bbox(b)?;
        must.push(Query::GeoBbox { field: "location".into(), top_left, bottom_right });
    }
    if let Some(s) = params.get("status").filter(|s| !s.is_empty()) {
        let status: FlightStatus = s.parse().map_err(|_| ApiError::bad_request(format!("unknown status {s:?}")))?;
        must.push(Query::term("status", status.as_str()));
    }
    if let Some(a) = params.get("airline").filter(|a| !a.is_empty()) {
        must.push(Query::term("airline_icao", a));
    }
    Ok(if must.is_empty() { Query::MatchAll } else { Query::Bool { must, should: vec![], must_not: vec![] } })
}

async fn live_flights(State(st): State<ApiState>, QueryParams(params): QueryParams<HashMap<String, String>>) -> Result<Json<Value>, ApiError> {
    let filter = live_filter(&params)?;
    blocking(move || {
        let view = st.store.index(&st.positions_index)?.view();
        let (hits, newest) = view.latest_per("flight_icao", "updated", &filter);
        let flights: Vec<Value> = hits.iter().map(|h| document_to_json(&h.source)).collect();
        Ok(Json(json!({ "as_of": newest.map_or(0, |t| t as u64), "total": flights.len(), "flights": flights })))
    })
    .await
}

/// A parsed `/api/search` body.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRequest {
    pub index: Option<String>,
    pub query: Query,
    pub aggs: Vec<(String, Aggregation)>,
    pub size: usize,
    pub sort: Option<(String, SortOrder)>,
}

impl SearchRequest {
    pub fn from_json(v: &Value) -> Result<SearchRequest, ApiError> {
        let Value::Object(m) = v else {
            return Err(ApiError::bad_request("search body must be a JSON object"));
        };
        let mut req =
            SearchRequest { index: None, query: Query::MatchAll, aggs: vec![], size: DEFAULT_SEARCH_SIZE, sort: None };
        for (k, v) in m {
            match k.as_str() {
                "index" => {
                    req.index = Some(v.as_str().ok_or_else(|| ApiError::bad_request("`index` must be a string"))?.to_string())
                }
                "query" => req.query = Query::from_json(v)?,
                "aggs" | "aggregations" => {
                    let Value::Object(aggs) = v else {
                        return Err(ApiError::bad_request("`aggs` must be an object of named aggregations"));
                    };
                    for (name, a) in aggs {
                        req.aggs.push((name.clone(), Aggregation::from_json(a)?));
                    }
                }
                "size" => {
                    req.size = v
                        .as_u64()
                        .ok_or_else(|| ApiError::bad_request("`size` must be a non-negative integer"))?
                        .try_into()
                        .unwrap_or(usize::MAX)
                }
                "sort" => req.sort = Some(parse_sort(v)?),
                other => return Err(ApiError::bad_request(format!("unknown search key {other:?}"))),
            }
        }
        Ok(req)
    }
}

fn parse_sort(v: &Value) -> Result<(String, SortOrder), ApiError> {
    let err = || ApiError::bad_request("`sort` must be a field name or {\"<field>\": \"asc\"|\"desc\"}");
    match v {
        Value::String(f) => Ok((f.clone(), SortOrder::Asc)),
        Value::Object(m) if m.len() == 1 => {
            let (f, o) = m.iter().next().unwrap();
            let order = match o.as_str() {
                Some("asc") => SortOrder::Asc,
                Some("desc") => SortOrder::Desc,
                _ => return Err(err()),
            };
            Ok((f.clone(), order))
        }
        _ => Err(err()),
    }
}

/// Runs a search request against one view of the store; the in-process
/// equivalent of `POST /api/search`.
pub fn execute_search(store: &IndexStore, default_index: &str, req: &SearchRequest) -> Result<Value, ApiError> {
    let view = store.index(req.index.as_deref().unwrap_or(default_index))?.view();
    let sort = req.sort.as_ref().map(|(f, o)| (f.as_str(), *o));
    let res = view.search(&req.query, req.size, sort);
    let mut out = Map::new();
    out.insert("total".into(), json!(res.total));
    out.insert("hits".into(), Value::Array(res.hits.iter().map(|h| h.to_json()).collect()));
    if !req.aggs.is_empty() {
        let mut aggs = Map::new();
        for (name, a) in &req.aggs {
            aggs.insert(name.clone(), view.aggregate(&req.query, a)?.to_json());
        }
        out.insert("aggregations".into(), Value::Object(aggs));
    }
    Ok(Value::Object(out))
}

async fn search(State(st): State<ApiState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let v: Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
    let req = SearchRequest::from_json(&v)?;
    blocking(move || execute_search(&st.store, &st.positions_index, &req).map(Json)).await
}

async fn metrics(State(st): State<ApiState>) -> Result<Json<MetricsSnapshot>, ApiError> {
    st.metrics.read().map(Json)
}

/// Path of an exported delay summary.
pub fn dataset_path(dir: &Path, id: &str) -> Result<PathBuf, ApiError> {
    let ok = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if !ok {
        return Err(ApiError::bad_request(format!("invalid dataset id {id:?}")));
    }
    Ok(dir.join(format!("{id}.json")))
}

async fn delay_summary(State(st): State<ApiState>, QueryParams(params): QueryParams<HashMap<String, String>>) -> Result<Response, ApiError> {
    let id = params.get("dataset").map_or(DEFAULT_DATASET, String::as_str);
    let Some(dir) = &st.delays_dir else {
        return Err(ApiError::not_found("no historical dataset loaded"));
    };
    let path = dataset_path(dir, id)?;
    match std::fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found(format!("dataset {id:?} not found"))),
        Err(e) => Err(ApiError::internal(format!("reading dataset {id:?}: {e}"))),
    }
}

/// Reloads index snapshots written by another process when their file
/// modification time changes.
pub struct SnapshotWatcher {
    store: Arc<IndexStore>,
    names: Vec<String>,
    seen: Mutex<HashMap<String, SystemTime>>,
}

impl SnapshotWatcher {
    pub fn new(store: Arc<IndexStore>, names: Vec<String>) -> SnapshotWatcher {
        SnapshotWatcher { store, names, seen: Mutex::new(HashMap::new()) }
    }

    /// Returns the names of the indices that were reloaded.
    pub fn poll(&self) -> Result<Vec<String>, IndexError> {
        let mut seen = self.seen.lock().unwrap();
        let mut reloaded = vec![];
        for name in &self.names {
            let Some(mtime) = self.store.snapshot_mtime(name) else { continue };
            if seen.get(name) == Some(&mtime) {
                continue;
            }
            if self.store.load(IndexConfig::new(name))? {
                self.store.index(name)?.refresh();
                reloaded.push(name.clone());
            }
            seen.insert(name.clone(), mtime);
        }
        Ok(reloaded)
    }
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
