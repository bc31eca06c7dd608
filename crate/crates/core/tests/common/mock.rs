//! A local chat-completion endpoint that records every request and plays
//! back scripted responses.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct Captured {
    pub authorization: Option<String>,
    pub body: Value,
}

#[derive(Default)]
struct Inner {
    captured: Mutex<Vec<Captured>>,
    script: Mutex<VecDeque<(u16, String)>>,
    fallback: Mutex<String>,
    delay: Mutex<Duration>,
    inflight: AtomicUsize,
    peak: AtomicUsize,
}

#[derive(Clone)]
pub struct MockServer {
    inner: Arc<Inner>,
    pub addr: SocketAddr,
}

/// A successful completion whose message content is `content`.
pub fn completion(content: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

async fn handle(State(inner): State<Arc<Inner>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    let now = inner.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    inner.peak.fetch_max(now, Ordering::SeqCst);
    inner.captured.lock().unwrap().push(Captured {
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned),
        body,
    });
    let delay = *inner.delay.lock().unwrap();
    if !delay.is_zero() {
        tokio::time::sleep(delay).await;
    }
    let next = inner.script.lock().unwrap().pop_front();
    inner.inflight.fetch_sub(1, Ordering::SeqCst);
    match next {
        Some((status, body)) => (StatusCode::from_u16(status).unwrap(), body),
        None => (StatusCode::OK, inner.fallback.lock().unwrap().clone()),
    }
}

impl MockServer {
    /// Starts on an ephemeral port; every unscripted request gets `fallback`.
    pub async fn start(fallback_content: &str) -> MockServer {
        let inner = Arc::new(Inner::default());
        *inner.fallback.lock().unwrap() = completion(fallback_content);
        let app = Router::new()
            .route("/v1/chat/completions", post(handle))
            .with_state(inner.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        MockServer { inner, addr }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn push(&self, status: u16, body: impl Into<String>) {
        self.inner.script.lock().unwrap().push_back((status, body.into()));
    }

    pub fn set_delay(&self, d: Duration) {
        *self.inner.delay.lock().unwrap() = d;
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.inner.captured.lock().unwrap().clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }
}
