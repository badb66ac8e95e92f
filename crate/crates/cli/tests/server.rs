use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use convis_cli::config::Settings;
use convis_cli::pipeline::Pipeline;
use convis_cli::server::{router, AppState, ImageStore, Quiz, QuizItem};
use convis_core::encoder::{CountingEncoder, Embedding, Encoder, EncoderError, FixtureEncoder, MockHashEncoder};
use convis_core::saliency::{patch_budget, patch_grid, write_cvis};
use convis_core::Image;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn data(p: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(p)
}

fn golden_settings() -> Settings {
    Settings::load(data("golden/saliency.conf")).unwrap()
}

fn app_with(encoder: Arc<dyn Encoder>, quiz: Quiz) -> (Router, Arc<AppState>) {
    let p = Pipeline::with_encoder(&golden_settings(), encoder).unwrap();
    let state = Arc::new(AppState::new(Arc::new(p), ImageStore::open(None).unwrap(), quiz));
    (router(state.clone()), state)
}

fn app() -> (Router, Arc<CountingEncoder<MockHashEncoder>>) {
    let enc = Arc::new(CountingEncoder::new(MockHashEncoder::new(64)));
    (app_with(enc.clone(), Quiz::new(Vec::new(), None)).0, enc)
}

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn json(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let (s, _, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn png(img: &Image) -> Vec<u8> {
    img.encode_png().unwrap()
}

fn assert_error(v: &Value) {
    assert!(v["code"].is_string() && v["message"].is_string(), "not an error body: {v}");
}

#[tokio::test]
async fn health_reports_hierarchy() {
    let (app, _) = app();
    let (s, v) = json(&app, "GET", "/api/v1/health", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["hierarchy_size"], 32);
}

#[tokio::test]
async fn upload_is_content_addressed() {
    let (app, _) = app();
    let bytes = std::fs::read(data("golden/image.png")).unwrap();
    let (s1, r1) = json(&app, "POST", "/api/v1/images?filename=a.png", bytes.clone()).await;
    let (s2, r2) = json(&app, "POST", "/api/v1/images", bytes).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(r1["id"], r2["id"]);
    assert_eq!(r1["filename"], "a.png");
    assert_eq!((r1["width"].as_u64(), r1["height"].as_u64()), (Some(48), Some(48)));

    let (s, v) = json(&app, "POST", "/api/v1/images", vec![]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v);

    let (s, v) = json(&app, "POST", "/api/v1/images", png(&Image::filled(1, 1, 3, 7).unwrap())).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(1), Some(1)));

    let id = r1["id"].as_str().unwrap();
    let (s, rec) = json(&app, "GET", &format!("/api/v1/images/{id}"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert!(rec["precompute"].as_object().unwrap().is_empty());
    let (s, _, raw) = call(&app, "GET", &format!("/api/v1/images/{id}/raw"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(Image::decode(&raw).unwrap(), Image::open(data("golden/image.png")).unwrap());
    let (s, v) = json(&app, "GET", "/api/v1/images/deadbeef", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v);
}

#[tokio::test]
async fn uploads_beyond_the_limit_are_rejected() {
    let enc = Arc::new(MockHashEncoder::new(64));
    let p = Pipeline::with_encoder(&golden_settings(), enc).unwrap();
    let mut st = AppState::new(Arc::new(p), ImageStore::open(None).unwrap(), Quiz::new(Vec::new(), None));
    st.max_upload_bytes = 100;
    let app = router(Arc::new(st));
    let (s, v) = json(&app, "POST", "/api/v1/images", vec![0; 1000]).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_error(&v);
}

#[tokio::test]
async fn concept_views() {
    let (app, _) = app();
    let (s, v) = json(&app, "GET", "/api/v1/concepts/dog.n.01", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["children"], serde_json::json!([]));
    let anc: Vec<&str> = v["ancestors"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(anc.contains(&"canine.n.02") && anc.contains(&"domestic_animal.n.01"));
    let (_, root) = json(&app, "GET", "/api/v1/concepts/entity.n.01", vec![]).await;
    assert_eq!(root["ancestors"], serde_json::json!([]));
    let (_, roots) = json(&app, "GET", "/api/v1/concepts", vec![]).await;
    assert_eq!(roots["roots"], serde_json::json!(["entity.n.01"]));
    let (s, found) = json(&app, "GET", "/api/v1/concepts/search?q=car&limit=3", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(found["results"][0]["id"], "car.n.01");
    assert!(found["results"].as_array().unwrap().len() <= 3);
    let (s, v) = json(&app, "GET", "/api/v1/concepts/unicorn.n.01", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v);
    let (s, v) = json(&app, "GET", "/api/v1/concepts/search", vec![]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v);
}

#[tokio::test]
async fn saliency_is_cached_and_deterministic() {
    let (app, enc) = app();
    let bytes = std::fs::read(data("golden/image.png")).unwrap();
    let (_, r) = json(&app, "POST", "/api/v1/images", bytes).await;
    let id = r["id"].as_str().unwrap().to_owned();
    let url = format!("/api/v1/images/{id}/saliency/dog.n.01");

    let (s, h, first) = call(&app, "GET", &url, vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["content-type"], "image/png");
    assert_eq!(h["x-convis-cache-hit"], "false");
    // the checked-in golden rendering
    assert_eq!(first, std::fs::read(data("golden/dog.png")).unwrap());
    let calls = enc.image_calls();
    assert_eq!(calls, 18);

    let (_, h, again) = call(&app, "GET", &url, vec![]).await;
    assert_eq!(h["x-convis-cache-hit"], "true");
    assert_eq!(again, first);
    let (_, _, other) = call(&app, "GET", &format!("/api/v1/images/{id}/saliency/car.n.01"), vec![]).await;
    assert_ne!(other, first);
    assert_eq!(enc.image_calls(), calls);

    let (_, _, cvis) = call(&app, "GET", &format!("{url}?format=cvis"), vec![]).await;
    assert_eq!(cvis, std::fs::read(data("golden/dog.cvis")).unwrap());
    let (s, meta) = json(&app, "GET", &format!("{url}?format=json"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["cache_hit"], true);
    assert!(meta["min"].as_f64().unwrap() <= meta["max"].as_f64().unwrap());
    let (s, _, mask) = call(&app, "GET", &format!("{url}?style=mask"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(Image::decode(&mask).unwrap().channels(), 3);
    let (s, _, _) = call(&app, "GET", &format!("{url}?style=overlay&palette=viridis"), vec![]).await;
    assert_eq!(s, StatusCode::OK);

    let (_, rec) = json(&app, "GET", &format!("/api/v1/images/{id}"), vec![]).await;
    assert_eq!(rec["precompute"]["16-32-8-fit-only"], "done");

    for (bad, status) in [
        ("/saliency/unicorn.n.01", StatusCode::NOT_FOUND),
        ("/saliency/dog.n.01?format=tiff", StatusCode::BAD_REQUEST),
        ("/saliency/dog.n.01?omega=zero", StatusCode::BAD_REQUEST),
        ("/saliency/dog.n.01?delta_l=64", StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        let (s, v) = json(&app, "GET", &format!("/api/v1/images/{id}{bad}"), vec![]).await;
        assert_eq!(s, status, "{bad}");
        assert_error(&v);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_share_one_encoding_pass() {
    let (app, enc) = app();
    let img = Image::open(data("wsol/a.png")).unwrap();
    let (_, r) = json(&app, "POST", "/api/v1/images", png(&img)).await;
    let id = r["id"].as_str().unwrap().to_owned();
    let reqs = ["dog.n.01", "car.n.01", "dog.n.01", "animal.n.01"]
        .map(|c| {
            let app = app.clone();
            let url = format!("/api/v1/images/{id}/saliency/{c}");
            tokio::spawn(async move { call(&app, "GET", &url, vec![]).await.0 })
        });
    for r in reqs {
        assert_eq!(r.await.unwrap(), StatusCode::OK);
    }
    let cfg = golden_settings().saliency;
    assert_eq!(enc.image_calls(), patch_budget(48, 48, &cfg).unwrap());
    assert_eq!(enc.image_calls(), 2 * patch_grid(48, 48, &cfg).unwrap().len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn precompute_warms_the_cache() {
    let (app, enc) = app();
    let img = Image::open(data("wsol/b.png")).unwrap();
    let (_, r) = json(&app, "POST", "/api/v1/images", png(&img)).await;
    let id = r["id"].as_str().unwrap().to_owned();
    let (s, v) = json(&app, "POST", &format!("/api/v1/images/{id}/precompute"), vec![]).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["status"], "running");
    let mut done = false;
    for _ in 0..200 {
        let (_, rec) = json(&app, "GET", &format!("/api/v1/images/{id}"), vec![]).await;
        if rec["precompute"]["16-32-8-fit-only"] == "done" {
            done = true;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert!(done);
    let calls = enc.image_calls();
    let (s, v) = json(&app, "POST", &format!("/api/v1/images/{id}/precompute"), vec![]).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("done")));
    let (_, h, _) = call(&app, "GET", &format!("/api/v1/images/{id}/saliency/cup.n.01"), vec![]).await;
    assert_eq!(h["x-convis-cache-hit"], "true");
    assert_eq!(enc.image_calls(), calls);
    let (s, _) = json(&app, "POST", "/api/v1/images/nope/precompute", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn top_concepts_on_fixture_backend() {
    let mut settings = golden_settings();
    settings.seed_path = None;
    let enc = Arc::new(FixtureEncoder::load(data("ood/fixture.json")).unwrap());
    let p = Pipeline::with_encoder(&settings, enc.clone()).unwrap();
    let app = router(Arc::new(AppState::new(
        Arc::new(p),
        ImageStore::open(None).unwrap(),
        Quiz::new(Vec::new(), None),
    )));
    let img = Image::open(data("ood/test_0_dog.png")).unwrap();
    let (_, r) = json(&app, "POST", "/api/v1/images", png(&img)).await;
    let id = r["id"].as_str().unwrap().to_owned();

    // oracle: the synset with the largest z
    let x = enc.embed_image(&img).unwrap();
    let lex = convis_core::load_lexicon(data("lexicon.jsonl")).unwrap();
    let best = lex
        .synsets()
        .iter()
        .map(|s| (convis_core::cosine(x.as_slice(), enc.embed_text(&s.definition).unwrap().as_slice()).unwrap(), &s.id))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
        .1
        .clone();
    let (s, v) = json(&app, "GET", &format!("/api/v1/images/{id}/top-concepts?k=1"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["concepts"][0]["id"], best.as_str());
    let (_, v) = json(&app, "GET", &format!("/api/v1/images/{id}/top-concepts?k=5"), vec![]).await;
    let r: Vec<f64> = v["concepts"].as_array().unwrap().iter().map(|c| c["rank_sim"].as_f64().unwrap()).collect();
    assert_eq!(r.len(), 5);
    assert!(r.windows(2).all(|w| w[0] >= w[1]));
    let (s, e) = json(&app, "GET", &format!("/api/v1/images/{id}/top-concepts?k=0"), vec![]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&e);
}

struct TextOnly(MockHashEncoder);

impl Encoder for TextOnly {
    fn model_id(&self) -> &str {
        self.0.model_id()
    }
    fn dimension(&self) -> usize {
        self.0.dimension()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, EncoderError> {
        self.0.embed_text(text)
    }
    fn embed_image(&self, _: &Image) -> Result<Embedding, EncoderError> {
        Err(EncoderError::Backend("image tower offline".into()))
    }
}

#[tokio::test]
async fn backend_failure_is_503() {
    let (app, _) = app_with(Arc::new(TextOnly(MockHashEncoder::new(64))), Quiz::new(Vec::new(), None));
    let (_, r) = json(&app, "POST", "/api/v1/images", std::fs::read(data("golden/image.png")).unwrap()).await;
    let id = r["id"].as_str().unwrap().to_owned();
    let (s, v) = json(&app, "GET", &format!("/api/v1/images/{id}/saliency/dog.n.01"), vec![]).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "backend_unavailable");
}

#[tokio::test]
async fn unknown_routes_are_json() {
    let (app, _) = app();
    let (s, v) = json(&app, "GET", "/api/v2/health", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v);
    let (s, v) = json(&app, "DELETE", "/api/v1/health", vec![]).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
    assert_error(&v);
}

fn quiz_items() -> Vec<QuizItem> {
    let img = Arc::new(Image::open(data("golden/image.png")).unwrap());
    vec![
        QuizItem {
            image: img.clone(),
            captions: ["a dog on grass", "a red car", "two cups", "a tree"].map(String::from),
            answer: 0,
        },
        QuizItem {
            image: img,
            captions: ["a bird", "a chair", "a bicycle", "a bottle"].map(String::from),
            answer: 3,
        },
    ]
}

#[tokio::test]
async fn quiz_flow() {
    let (app, _) = app_with(Arc::new(MockHashEncoder::new(64)), Quiz::new(quiz_items(), Some(11)));
    let (s, v) = json(&app, "POST", "/api/v1/quiz/sessions", vec![]).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_owned();
    assert_eq!(v["captions"].as_array().unwrap().len(), 4);
    let text = v.to_string();
    assert!(!text.contains("correct") && !text.contains("image"));

    // exploration of the hidden image: pixel-free renderings only
    let base = format!("/api/v1/quiz/sessions/{id}");
    let (s, h, body) = call(&app, "GET", &format!("{base}/saliency/dog.n.01"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["content-type"], "image/png");
    assert_eq!(Image::decode(&body).unwrap().channels(), 1);
    for style in ["mask", "overlay"] {
        let (s, v) = json(&app, "GET", &format!("{base}/saliency/dog.n.01?style={style}"), vec![]).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_error(&v);
    }
    let (_, meta) = json(&app, "GET", &format!("{base}/saliency/dog.n.01?format=json"), vec![]).await;
    assert!(meta.get("image").is_none());
    let (s, top) = json(&app, "GET", &format!("{base}/top-concepts?k=3"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(top["concepts"].as_array().unwrap().len(), 3);

    let (s, out) = json(&app, "POST", &format!("{base}/answer"), br#"{"choice": 1}"#.to_vec()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["answered"], true);
    assert_eq!(out["outcome"]["choice"], 1);
    assert!(out["outcome"]["correct"].is_boolean());
    let (s, v) = json(&app, "POST", &format!("{base}/answer"), br#"{"choice": 2}"#.to_vec()).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v);
    let (_, again) = json(&app, "GET", &base, vec![]).await;
    assert_eq!(again, out);

    for (uri, body, status) in [
        ("/api/v1/quiz/sessions/nope", None, StatusCode::NOT_FOUND),
        ("/api/v1/quiz/sessions/nope/answer", Some(r#"{"choice":0}"#), StatusCode::NOT_FOUND),
        ("/api/v1/quiz/sessions/nope/saliency/dog.n.01", None, StatusCode::NOT_FOUND),
    ] {
        let method = if body.is_some() { "POST" } else { "GET" };
        let (s, v) = json(&app, method, uri, body.unwrap_or("").as_bytes().to_vec()).await;
        assert_eq!(s, status, "{uri}");
        assert_error(&v);
    }
    let (_, v) = json(&app, "POST", "/api/v1/quiz/sessions", vec![]).await;
    let id2 = v["id"].as_str().unwrap();
    for bad in [r#"{"choice": 4}"#, r#"{"pick": 1}"#, "not json"] {
        let (s, v) = json(&app, "POST", &format!("/api/v1/quiz/sessions/{id2}/answer"), bad.as_bytes().to_vec()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
        assert_error(&v);
    }
}

#[tokio::test]
async fn quiz_without_dataset_is_unavailable() {
    let (app, _) = app();
    let (s, v) = json(&app, "POST", "/api/v1/quiz/sessions", vec![]).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_error(&v);
}

#[tokio::test]
async fn random_guessing_scores_a_quarter() {
    use rand::{Rng, SeedableRng};
    let (app, _) = app_with(Arc::new(MockHashEncoder::new(64)), Quiz::new(quiz_items(), Some(99)));
    let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
    let n = 10_000;
    let mut correct = 0;
    for _ in 0..n {
        let (_, v) = json(&app, "POST", "/api/v1/quiz/sessions", vec![]).await;
        let id = v["id"].as_str().unwrap();
        let choice = rng.random_range(0..4);
        let body = format!("{{\"choice\": {choice}}}").into_bytes();
        let (_, out) = json(&app, "POST", &format!("/api/v1/quiz/sessions/{id}/answer"), body).await;
        correct += out["outcome"]["correct"].as_bool().unwrap() as usize;
    }
    let acc = correct as f64 / n as f64;
    assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn library_cvis_matches_golden() {
    let p = Pipeline::load(&golden_settings()).unwrap();
    let img = Image::open(data("golden/image.png")).unwrap();
    let (map, _) = p.saliency(&img, "dog.n.01", &p.config).unwrap();
    assert_eq!(write_cvis(&map), std::fs::read(data("golden/dog.cvis")).unwrap());
}
