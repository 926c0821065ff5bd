//! HTTP/JSON service over a catalog, its vector index and evaluation sheets.
//!
//! Everything except the score store is loaded once at startup and shared
//! read-only between requests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use grec_core::api::{
    CartRecommendRequest, ErrorBody, ItemInfo, RecommendRequest, RecommendResponse, ScoresAccepted, ViolationsBody,
};
use grec_core::catalog::{Catalog, CatalogError, UnknownIdPolicy};
use grec_core::ohseval::{aggregate, validate_scores, EvaluationSheet, ScoreSubmission};
use grec_core::personalize::{recommend_for_cart, PersonalizeError};
use grec_core::retrieval::{RetrievalError, VectorIndex};
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

mod store;

pub use store::ScoreStore;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    Startup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub manifest: PathBuf,
    /// Raw embeddings (EMB1 or CSV); needed for cart recommendations and for
    /// building the index when `index` is absent.
    pub embeddings: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub sheets_dir: Option<PathBuf>,
    pub scores: PathBuf,
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    pub catalog: Catalog,
    pub index: VectorIndex,
    pub sheets: BTreeMap<String, EvaluationSheet>,
    pub scores: ScoreStore,
    image_root: PathBuf,
    static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut catalog = Catalog::load_manifest(&config.manifest)?;
        if let Some(path) = &config.embeddings {
            catalog.load_embeddings(path, UnknownIdPolicy::Fail)?;
        }
        let index = match &config.index {
            Some(path) => VectorIndex::load(path)?,
            None if config.embeddings.is_some() => VectorIndex::build(&catalog)?,
            None => return Err(ServiceError::Startup("either an index or embeddings must be given".into())),
        };
        let sheets = match &config.sheets_dir {
            Some(dir) => load_sheets(dir)?,
            None => BTreeMap::new(),
        };
        if let Some(dir) = &config.static_dir {
            if !dir.is_dir() {
                return Err(ServiceError::Startup(format!("static directory {} does not exist", dir.display())));
            }
        }
        let image_root = config.manifest.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Ok(Self {
            catalog,
            index,
            sheets,
            scores: ScoreStore::open(&config.scores)?,
            image_root,
            static_dir: config.static_dir.clone(),
        })
    }
}

/// Every `*.json` file in `dir`, keyed by sheet id.
pub fn load_sheets(dir: &FsPath) -> Result<BTreeMap<String, EvaluationSheet>, ServiceError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut sheets = BTreeMap::new();
    for p in paths {
        let sheet = EvaluationSheet::load(&p).map_err(|e| ServiceError::Startup(format!("{}: {e}", p.display())))?;
        if sheets.contains_key(&sheet.sheet_id) {
            return Err(ServiceError::Startup(format!("{}: duplicate sheet id {:?}", p.display(), sheet.sheet_id)));
        }
        sheets.insert(sheet.sheet_id.clone(), sheet);
    }
    Ok(sheets)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::File(c) => c.into(),
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownId(_) => Self::not_found(e.to_string()),
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl From<PersonalizeError> for ApiError {
    fn from(e: PersonalizeError) -> Self {
        match e {
            PersonalizeError::Catalog(c) => c.into(),
            PersonalizeError::Retrieval(r) => r.into(),
            other => Self::bad_request(other.to_string()),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/items/{id}", get(item))
        .route("/items/{id}/image", get(item_image))
        .route("/recommend", post(recommend))
        .route("/cart/recommend", post(cart_recommend))
        .route("/sheets", get(list_sheets))
        .route("/sheets/{id}", get(sheet))
        .route("/sheets/{id}/scores", post(post_scores))
        .route("/sheets/{id}/aggregate", get(sheet_aggregate));
    if let Some(dir) = &state.static_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.layer(TraceLayer::new_for_http()).with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn run(
    listener: TcpListener,
    state: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&config)?);
    let listener = TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, items = state.catalog.len(), sheets = state.sheets.len(), "listening");
    run(listener, state, shutdown).await?;
    Ok(())
}

async fn health() -> &'static str {
    "ok"
}

async fn item(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<ItemInfo>, ApiError> {
    let it = s.catalog.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}")))?;
    Ok(Json(ItemInfo {
        id: it.id.clone(),
        image: it.image_ref.clone(),
        image_url: format!("/items/{}/image", it.id),
        labels: s.catalog.label_names(it).into_iter().map(str::to_owned).collect(),
        split: it.split.map(|sp| sp.to_string()),
        has_embedding: it.embedding.is_some() || s.index.position(&id).is_some(),
    }))
}

async fn item_image(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let it = s.catalog.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}")))?;
    let path = s.image_root.join(&it.image_ref);
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found(format!("no image file for {id:?}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn recommend(State(s): State<Shared>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let req: RecommendRequest = parse_body(&body)?;
    let query: Vec<f32> = match (&req.item_id, &req.embedding) {
        (Some(id), None) => {
            s.index.vector(id).ok_or_else(|| ApiError::not_found(format!("item {id:?} is not indexed")))?.to_vec()
        }
        (None, Some(v)) => v.clone(),
        _ => return Err(ApiError::bad_request("give exactly one of item_id or embedding")),
    };
    let exclude: HashSet<String> = req.exclude.into_iter().collect();
    let list = s.index.top_k(&query, req.k, (!exclude.is_empty()).then_some(&exclude))?;
    Ok(Json(RecommendResponse { results: list.entries }))
}

async fn cart_recommend(State(s): State<Shared>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let req: CartRecommendRequest = parse_body(&body)?;
    let list = recommend_for_cart(&req.cart, &s.catalog, &s.index, req.k)?;
    Ok(Json(RecommendResponse { results: list.entries }))
}

async fn list_sheets(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.sheets.keys().cloned().collect())
}

fn find_sheet<'a>(s: &'a AppState, id: &str) -> Result<&'a EvaluationSheet, ApiError> {
    s.sheets.get(id).ok_or_else(|| ApiError::not_found(format!("unknown sheet {id:?}")))
}

async fn sheet(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<EvaluationSheet>, ApiError> {
    Ok(Json(find_sheet(&s, &id)?.clone()))
}

async fn post_scores(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let sheet = find_sheet(&s, &id)?;
    let submission: ScoreSubmission = parse_body(&body)?;
    match validate_scores(sheet, &submission) {
        Ok(record) => {
            let accepted =
                ScoresAccepted { sheet_id: record.sheet_id.clone(), scorer_id: record.scorer_id.clone(), entries: record.entries.len() };
            s.scores
                .append(record)
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            Ok((StatusCode::CREATED, Json(accepted)).into_response())
        }
        Err(violations) => Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(ViolationsBody { violations })).into_response()),
    }
}

/// Parses `name:weight,name:weight`. Names may contain spaces.
pub fn parse_weights(spec: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, w) = part.rsplit_once(':').ok_or_else(|| format!("expected name:weight, got {part:?}"))?;
        let w: f64 = w.trim().parse().map_err(|_| format!("bad weight in {part:?}"))?;
        if out.insert(name.trim().to_owned(), w).is_some() {
            return Err(format!("criterion {:?} given twice", name.trim()));
        }
    }
    Ok(out)
}

async fn sheet_aggregate(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let sheet = find_sheet(&s, &id)?;
    let weights = match params.get("weights") {
        Some(spec) => parse_weights(spec).map_err(ApiError::bad_request)?,
        None => sheet.criterion_weights(),
    };
    let records = s.scores.for_sheet(&id).await;
    let agg = aggregate(sheet, &records, &weights).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(agg.rounded()).into_response())
}
