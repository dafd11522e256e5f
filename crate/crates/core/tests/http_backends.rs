use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use t2i_eval_core::backends::protocol::{decode_image, IqaRequest, VqaRequest};
use t2i_eval_core::backends::{
    BackendEndpoint, BackendError, BackendSpec, BackendOptions, DiskCache, HttpBackend, ImageInput,
    IqaClient, LlmClient, Role, VqaClient,
};
use t2i_eval_core::qgen::{Question, QuestionSource};
use t2i_eval_core::AnswerLabel;

#[derive(Default)]
struct Server {
    calls: AtomicU64,
    /// (status, body) returned by every route.
    reply: Mutex<(u16, String)>,
    last_body: Mutex<Option<Value>>,
    last_auth: Mutex<Option<String>>,
}

async fn handle(State(s): State<Arc<Server>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    s.calls.fetch_add(1, Ordering::SeqCst);
    *s.last_body.lock().unwrap() = Some(body);
    *s.last_auth.lock().unwrap() = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_string());
    let (status, body) = s.reply.lock().unwrap().clone();
    (StatusCode::from_u16(status).unwrap(), body)
}

async fn serve(status: u16, body: &str) -> (String, Arc<Server>) {
    let state = Arc::new(Server::default());
    *state.reply.lock().unwrap() = (status, body.to_string());
    let app = Router::new()
        .route("/v1/vqa", post(handle))
        .route("/v1/iqa", post(handle))
        .route("/v1/generate", post(handle))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), state)
}

fn image() -> ImageInput {
    ImageInput::from_png("img-1", b"\x89PNG\r\n\x1a\nfake".to_vec())
}

fn question() -> Question {
    Question::new("Does the image show a red bird?", QuestionSource::Rule).unwrap()
}

fn vqa(url: &str) -> VqaClient {
    let ep = BackendEndpoint::new(Role::Vqa, url).unwrap();
    VqaClient::new(Arc::new(HttpBackend::new(ep).unwrap()))
}

fn iqa(url: &str) -> IqaClient {
    let ep = BackendEndpoint::new(Role::Iqa, url).unwrap();
    IqaClient::new(Arc::new(HttpBackend::new(ep).unwrap()))
}

#[tokio::test]
async fn vqa_request_carries_image_and_question() {
    let (url, server) = serve(200, r#"{"answer": "Yes, it does."}"#).await;
    let r = vqa(&url).ask(&image(), &question()).await.unwrap();
    assert_eq!(r.raw_answer(), "Yes, it does.");
    assert_eq!(r.label(), AnswerLabel::Yes);
    let body: VqaRequest = serde_json::from_value(server.last_body.lock().unwrap().clone().unwrap()).unwrap();
    assert_eq!(body.question, "Does the image show a red bird?");
    assert_eq!(decode_image(&body.image_png_b64).unwrap(), image().png());
}

#[tokio::test]
async fn cache_hit_makes_no_request() {
    let (url, server) = serve(200, r#"{"answer": "no"}"#).await;
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(DiskCache::open(dir.path()).unwrap());
    let cold = vqa(&url).with_cache(Some(cache.clone()));
    let first = cold.ask(&image(), &question()).await.unwrap();
    assert!(!first.cached());
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);

    let warm = vqa(&url).with_cache(Some(cache));
    let second = warm.ask(&image(), &question()).await.unwrap();
    assert!(second.cached());
    assert_eq!(second.label(), AnswerLabel::No);
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
    assert_eq!(warm.stats().backend_calls, 0);
    assert_eq!(warm.stats().cache_hits, 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error_naming_it() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let client = vqa(&url);
    match client.ask(&image(), &question()).await {
        Err(BackendError::Transport { endpoint, .. }) => assert!(endpoint.starts_with(&url), "{endpoint}"),
        other => panic!("expected transport error, got {other:?}"),
    }
    // One attempt plus one retry.
    assert_eq!(client.stats().backend_calls, 2);
}

#[tokio::test]
async fn non_2xx_is_a_status_error_and_not_cached() {
    let (url, server) = serve(503, r#"{"error": "model loading"}"#).await;
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(DiskCache::open(dir.path()).unwrap());
    let client = vqa(&url).with_cache(Some(cache));
    match client.ask(&image(), &question()).await {
        Err(BackendError::Status { status, message, .. }) => {
            assert_eq!(status, 503);
            assert_eq!(message, "model loading");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.calls.load(Ordering::SeqCst), 1, "status errors are not retried");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[tokio::test]
async fn malformed_json_is_a_protocol_error() {
    let (url, _server) = serve(200, "{\"answer\": ").await;
    assert!(matches!(
        vqa(&url).ask(&image(), &question()).await,
        Err(BackendError::Protocol { .. })
    ));
    let (url, _server) = serve(200, r#"{"score": "high"}"#).await;
    assert!(matches!(iqa(&url).score(&image()).await, Err(BackendError::Protocol { .. })));
}

#[tokio::test]
async fn iqa_out_of_range_is_clamped() {
    let (url, server) = serve(200, r#"{"score": 1.7}"#).await;
    let s = iqa(&url).score(&image()).await.unwrap();
    assert_eq!(s.value(), 1.0);
    assert_eq!(s.raw(), 1.7);
    assert!(s.clamped());
    let body: IqaRequest = serde_json::from_value(server.last_body.lock().unwrap().clone().unwrap()).unwrap();
    assert_eq!(body.text, None);

    let (url, _server) = serve(200, r#"{"score": 5000}"#).await;
    assert!(matches!(iqa(&url).score(&image()).await, Err(BackendError::Protocol { .. })));
}

#[tokio::test]
async fn caption_aware_scoring_sends_text() {
    let (url, server) = serve(200, r#"{"score": 0.25}"#).await;
    let s = iqa(&url).score_with_text(&image(), Some("a red bird")).await.unwrap();
    assert_eq!(s.value(), 0.25);
    let body = server.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["text"], json!("a red bird"));
}

#[tokio::test]
async fn bearer_token_and_llm_route() {
    let (url, server) = serve(200, r#"{"text": "Is it red?"}"#).await;
    let opts = BackendOptions {
        bearer_token: Some("s3cret".into()),
        ..Default::default()
    };
    let spec: BackendSpec = url.parse().unwrap();
    let llm = LlmClient::new(spec.llm_backend(&opts).unwrap());
    assert_eq!(llm.generate("prompt").await.unwrap(), "Is it red?");
    assert_eq!(server.last_auth.lock().unwrap().as_deref(), Some("Bearer s3cret"));
    assert_eq!(server.last_body.lock().unwrap().clone().unwrap(), json!({"prompt": "prompt"}));
}

#[tokio::test]
async fn role_mismatch_is_rejected_locally() {
    let (url, server) = serve(200, r#"{"answer": "yes"}"#).await;
    let ep = BackendEndpoint::new(Role::Iqa, url).unwrap();
    let client = VqaClient::new(Arc::new(HttpBackend::new(ep).unwrap()));
    assert!(matches!(
        client.ask(&image(), &question()).await,
        Err(BackendError::WrongRole { .. })
    ));
    assert_eq!(server.calls.load(Ordering::SeqCst), 0);
}
