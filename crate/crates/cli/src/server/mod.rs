//! HTTP API under `/api/v1`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convis_core::saliency::{render_mask, render_overlay, write_cvis, BoundaryPolicy, Palette, WindowMode};
use convis_core::simcore::top_concepts;
use convis_core::{Image, SaliencyConfig, SaliencyMap};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::pipeline::Pipeline;

mod error;
mod images;
mod quiz;

pub use error::ApiError;
pub use images::{ImageRecord, ImageStore};
pub use quiz::{load_quiz, AnswerError, Outcome, Quiz, QuizItem, SessionView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    None,
    Running,
    Done,
}

pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub images: ImageStore,
    pub quiz: Quiz,
    pub timeout: Duration,
    pub max_upload_bytes: usize,
    precompute: Mutex<HashMap<(String, String), Status>>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, images: ImageStore, quiz: Quiz) -> Self {
        Self {
            pipeline,
            images,
            quiz,
            timeout: Duration::from_secs(120),
            max_upload_bytes: 20 << 20,
            precompute: Mutex::new(HashMap::new()),
        }
    }

    fn status(&self, image: &str, key: &str) -> Status {
        *self
            .precompute
            .lock()
            .get(&(image.to_owned(), key.to_owned()))
            .unwrap_or(&Status::None)
    }

    fn set_status(&self, image: &str, key: &str, s: Status) {
        self.precompute.lock().insert((image.to_owned(), key.to_owned()), s);
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    let limit = state.max_upload_bytes;
    let api = Router::new()
        .route("/health", get(health))
        .route("/images", post(upload))
        .route("/images/{id}", get(image_record))
        .route("/images/{id}/raw", get(image_raw))
        .route("/images/{id}/precompute", post(precompute))
        .route("/images/{id}/saliency/{synset}", get(image_saliency))
        .route("/images/{id}/top-concepts", get(image_top_concepts))
        .route("/concepts", get(concept_roots))
        .route("/concepts/search", get(concept_search))
        .route("/concepts/{id}", get(concept))
        .route("/quiz/sessions", post(quiz_new))
        .route("/quiz/sessions/{id}", get(quiz_get))
        .route("/quiz/sessions/{id}/answer", post(quiz_answer))
        .route("/quiz/sessions/{id}/saliency/{synset}", get(quiz_saliency))
        .route("/quiz/sessions/{id}/top-concepts", get(quiz_top_concepts));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Runs blocking pipeline work off the async executor, bounded by the
/// configured timeout.
async fn blocking<T: Send + 'static>(
    state: &Shared,
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    match tokio::time::timeout(state.timeout, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Err(ApiError::internal(format!("worker failed: {e}"))),
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "timeout",
            format!("request exceeded {} s", state.timeout.as_secs()),
        )),
    }
}

async fn health(State(st): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "hierarchy_size": st.pipeline.hier.len(),
        "model_id": st.pipeline.encoder.model_id(),
        "images": st.images.len(),
    }))
}

async fn upload(
    State(st): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                format!("uploads are limited to {} bytes", st.max_upload_bytes),
            )
        } else {
            ApiError::bad_request(e.body_text())
        }
    })?;
    let filename = q.get("filename").cloned();
    let st2 = st.clone();
    let (record, created) = blocking(&st, move || {
        st2.images.insert(&body, filename).map_err(|e| match e {
            images::StoreError::Decode(m) => ApiError::bad_request(format!("cannot decode image: {m}")),
            images::StoreError::Io(m) => ApiError::internal(m),
        })
    })
    .await?;
    let code = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((code, Json(record)).into_response())
}

fn find_record(st: &AppState, id: &str) -> ApiResult<ImageRecord> {
    st.images
        .record(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))
}

fn find_image(st: &AppState, id: &str) -> ApiResult<Arc<Image>> {
    st.images
        .image(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))
}

/// Identifies the patch embeddings a configuration needs; the window mode
/// only affects aggregation.
fn patch_config_key(c: &SaliencyConfig) -> String {
    let policy = match c.boundary_policy {
        BoundaryPolicy::FitOnly => "fit-only",
        BoundaryPolicy::Clamp => "clamp",
    };
    format!("{}-{}-{}-{}", c.delta_s, c.delta_l, c.omega, policy)
}

async fn image_record(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let record = find_record(&st, &id)?;
    let statuses: BTreeMap<String, Status> = st
        .precompute
        .lock()
        .iter()
        .filter(|((img, _), _)| *img == id)
        .map(|((_, k), s)| (k.clone(), *s))
        .collect();
    let mut v = serde_json::to_value(record).expect("record serializes");
    v["precompute"] = serde_json::to_value(statuses).expect("statuses serialize");
    Ok(Json(v))
}

async fn image_raw(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let img = find_image(&st, &id)?;
    let png = img.encode_png().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn parse_num<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::bad_request(format!("invalid value for {key}: {v:?}")))
        })
        .transpose()
}

/// Default configuration with per-request overrides from the query string.
fn config_from_query(base: SaliencyConfig, q: &HashMap<String, String>) -> ApiResult<SaliencyConfig> {
    let mut c = base;
    if let Some(v) = parse_num(q, "delta_s")? {
        c.delta_s = v;
    }
    if let Some(v) = parse_num(q, "delta_l")? {
        c.delta_l = v;
    }
    if let Some(v) = parse_num(q, "omega")? {
        c.omega = v;
    }
    if let Some(v) = q.get("window_mode") {
        c.window_mode = v.parse::<WindowMode>().map_err(ApiError::bad_request)?;
    }
    if let Some(v) = q.get("boundary_policy") {
        c.boundary_policy = v.parse::<BoundaryPolicy>().map_err(ApiError::bad_request)?;
    }
    c.validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string()))?;
    Ok(c)
}

async fn precompute(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let img = find_image(&st, &id)?;
    let cfg = config_from_query(st.pipeline.config, &q)?;
    let key = patch_config_key(&cfg);
    {
        let mut map = st.precompute.lock();
        let slot = map.entry((id.clone(), key.clone())).or_insert(Status::None);
        if *slot != Status::None {
            let s = *slot;
            return Ok((StatusCode::OK, Json(json!({"image": id, "config": key, "status": s}))).into_response());
        }
        *slot = Status::Running;
    }
    let st2 = st.clone();
    let (id2, key2) = (id.clone(), key.clone());
    tokio::task::spawn_blocking(move || {
        let p = &st2.pipeline;
        match p.cache.scores(&img, &cfg, p.encoder.as_ref(), &p.defmat) {
            Ok(_) => st2.set_status(&id2, &key2, Status::Done),
            Err(e) => {
                log::error!("precompute of {id2} ({key2}) failed: {e}");
                st2.set_status(&id2, &key2, Status::None);
            }
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"image": id, "config": key, "status": Status::Running})),
    )
        .into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Gray,
    Mask,
    Overlay(Palette),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png(Style),
    Cvis,
    Json,
}

fn format_from_query(q: &HashMap<String, String>, allow_pixels: bool) -> ApiResult<Format> {
    let style = match q.get("style").map(String::as_str) {
        None | Some("gray") => Style::Gray,
        Some("mask") if allow_pixels => Style::Mask,
        Some("overlay") if allow_pixels => Style::Overlay(
            q.get("palette")
                .map(|p| p.parse::<Palette>())
                .transpose()
                .map_err(ApiError::bad_request)?
                .unwrap_or_default(),
        ),
        Some(other) => return Err(ApiError::bad_request(format!("unsupported style {other:?}"))),
    };
    match q.get("format").map(String::as_str) {
        None | Some("png") => Ok(Format::Png(style)),
        Some("cvis") => Ok(Format::Cvis),
        Some("json") => Ok(Format::Json),
        Some(other) => Err(ApiError::bad_request(format!("unsupported format {other:?}"))),
    }
}

struct Computed {
    map: SaliencyMap,
    cache_hit: bool,
    elapsed: Duration,
    config: SaliencyConfig,
}

async fn compute(st: &Shared, img: Arc<Image>, synset: String, cfg: SaliencyConfig) -> ApiResult<Computed> {
    if !st.pipeline.hier.contains(&synset) {
        return Err(ApiError::not_found(format!("unknown synset {synset}")));
    }
    let st2 = st.clone();
    blocking(st, move || {
        let t0 = Instant::now();
        let (map, cache_hit) = st2.pipeline.saliency(&img, &synset, &cfg)?;
        Ok(Computed {
            map,
            cache_hit,
            elapsed: t0.elapsed(),
            config: cfg,
        })
    })
    .await
}

fn metadata(c: &Computed) -> Value {
    let (min, max) = (c.map.min(), c.map.max());
    json!({
        "image": c.map.image,
        "synset": c.map.synset,
        "width": c.map.width,
        "height": c.map.height,
        "min": min,
        "max": max,
        "tau_suggestion": (min + max) / 2.0,
        "elapsed_ms": c.elapsed.as_secs_f64() * 1e3,
        "cache_hit": c.cache_hit,
        "config": c.config,
    })
}

fn render(c: Computed, format: Format, image: &Image, hide_image: bool) -> ApiResult<Response> {
    let mut meta = metadata(&c);
    if hide_image {
        meta.as_object_mut().expect("object").remove("image");
    }
    let (content_type, body) = match format {
        Format::Json => return Ok(Json(meta).into_response()),
        Format::Cvis => ("application/octet-stream", write_cvis(&c.map)),
        Format::Png(style) => {
            let out = match style {
                Style::Gray => c.map.to_gray(),
                Style::Mask => render_mask(image, &c.map)?,
                Style::Overlay(p) => render_overlay(image, &c.map, p)?,
            };
            ("image/png", out.encode_png().map_err(|e| ApiError::internal(e.to_string()))?)
        }
    };
    let mut resp = ([(header::CONTENT_TYPE, content_type)], body).into_response();
    let h = resp.headers_mut();
    for (name, key) in [
        ("x-convis-min", "min"),
        ("x-convis-max", "max"),
        ("x-convis-tau-suggestion", "tau_suggestion"),
        ("x-convis-elapsed-ms", "elapsed_ms"),
        ("x-convis-cache-hit", "cache_hit"),
    ] {
        if let Ok(v) = HeaderValue::from_str(&meta[key].to_string()) {
            h.insert(name, v);
        }
    }
    Ok(resp)
}

async fn image_saliency(
    State(st): State<Shared>,
    Path((id, synset)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let img = find_image(&st, &id)?;
    let cfg = config_from_query(st.pipeline.config, &q)?;
    let format = format_from_query(&q, true)?;
    let c = compute(&st, img.clone(), synset, cfg).await?;
    let key = patch_config_key(&cfg);
    if st.status(&id, &key) != Status::Done {
        st.set_status(&id, &key, Status::Done);
    }
    render(c, format, &img, false)
}

#[derive(Serialize)]
struct RankedConcept {
    id: String,
    lemmas: Vec<String>,
    rank_sim: f64,
    below: u32,
    total: u32,
}

async fn top_for(st: &Shared, img: Arc<Image>, q: &HashMap<String, String>) -> ApiResult<Json<Value>> {
    let k: usize = parse_num(q, "k")?.unwrap_or(10);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let st2 = st.clone();
    let ranked = blocking(st, move || {
        let p = &st2.pipeline;
        let x = p.encoder.embed_image(&img)?;
        let top = top_concepts(x.as_slice(), &p.defmat, k)?;
        Ok(top
            .into_iter()
            .map(|(id, r)| RankedConcept {
                lemmas: p.hier.get(&id).map(|s| s.lemmas.clone()).unwrap_or_default(),
                id,
                rank_sim: r.value(),
                below: r.below(),
                total: r.total(),
            })
            .collect::<Vec<_>>())
    })
    .await?;
    Ok(Json(json!({"k": k, "concepts": ranked})))
}

async fn image_top_concepts(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let img = find_image(&st, &id)?;
    top_for(&st, img, &q).await
}

fn concept_view(st: &AppState, id: &str) -> ApiResult<Value> {
    let h = &st.pipeline.hier;
    let s = h.get(id).ok_or_else(|| ApiError::not_found(format!("unknown synset {id}")))?;
    let lex = |e: convis_core::lexdb::LexError| ApiError::internal(e.to_string());
    Ok(json!({
        "id": s.id,
        "lemmas": s.lemmas,
        "definition": s.definition,
        "parents": h.parents_of(id).map_err(lex)?,
        "children": h.children_of(id).map_err(lex)?,
        "ancestors": h.ancestors(id).map_err(lex)?,
    }))
}

async fn concept(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    concept_view(&st, &id).map(Json)
}

async fn concept_roots(State(st): State<Shared>) -> Json<Value> {
    Json(json!({"roots": st.pipeline.hier.roots().collect::<Vec<_>>()}))
}

async fn concept_search(
    State(st): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let query = q.get("q").ok_or_else(|| ApiError::bad_request("missing q"))?;
    let limit: usize = parse_num(&q, "limit")?.unwrap_or(20);
    let h = &st.pipeline.hier;
    let results: Vec<Value> = h
        .search(query, limit)
        .into_iter()
        .filter_map(|id| h.get(id))
        .map(|s| json!({"id": s.id, "lemmas": s.lemmas, "definition": s.definition}))
        .collect();
    Ok(Json(json!({"results": results})))
}

async fn quiz_new(State(st): State<Shared>) -> ApiResult<Response> {
    let view = st
        .quiz
        .start()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_quiz", "no quiz dataset loaded"))?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::not_found(format!("unknown session {id}"))
}

async fn quiz_get(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    st.quiz.get(&id).map(Json).ok_or_else(|| unknown_session(&id))
}

async fn quiz_answer(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<SessionView>> {
    let body = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let v: Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))?;
    let choice = v
        .get("choice")
        .and_then(Value::as_u64)
        .ok_or_else(|| ApiError::bad_request("body must be {\"choice\": 0..3}"))?;
    st.quiz
        .answer(&id, choice as usize)
        .map(Json)
        .map_err(|e| match e {
            AnswerError::UnknownSession => unknown_session(&id),
            AnswerError::AlreadyAnswered => ApiError::conflict("session already answered"),
            AnswerError::BadChoice => ApiError::bad_request("choice must be 0..3"),
        })
}

async fn quiz_saliency(
    State(st): State<Shared>,
    Path((id, synset)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let img = st.quiz.image(&id).ok_or_else(|| unknown_session(&id))?;
    let cfg = config_from_query(st.pipeline.config, &q)?;
    // only pixel-free renderings for hidden images
    let format = format_from_query(&q, false)?;
    let c = compute(&st, img.clone(), synset, cfg).await?;
    render(c, format, &img, true)
}

async fn quiz_top_concepts(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let img = st.quiz.image(&id).ok_or_else(|| unknown_session(&id))?;
    top_for(&st, img, &q).await
}
