//! In-process mock servers for the three service contracts.
//!
//! Each server binds an ephemeral localhost port, speaks just enough
//! HTTP/1.1 for `POST` + JSON, and evaluates a caller-supplied pure
//! function per request. They exist so the full client path (wire format,
//! batching, retries) is exercised without external processes.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::services::{
    EmbedRequest, EmbedResponse, LogprobRequest, LogprobResponse, ScoreRequest, ScoreResponse,
    TokenLogProb,
};

type Handler = Arc<dyn Fn(&str) -> (u16, String) + Send + Sync>;

/// A running mock service. Shuts down when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    requests: Arc<AtomicU32>,
}

impl MockServer {
    fn start(handler: Handler) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("local addr");
        listener.set_nonblocking(true).expect("nonblocking");
        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU32::new(0));
        let flag = Arc::clone(&shutdown);
        let counter = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        counter.fetch_add(1, Ordering::Relaxed);
                        if let Err(e) = serve_one(stream, &handler) {
                            log::warn!("mock server request failed: {e}");
                        }
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(e) => {
                        log::warn!("mock server accept failed: {e}");
                        break;
                    }
                }
            }
        });
        MockServer {
            addr,
            shutdown,
            handle: Some(handle),
            requests,
        }
    }

    /// Endpoint URL to hand to a client.
    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    /// Number of requests accepted so far.
    pub fn request_count(&self) -> u32 {
        self.requests.load(Ordering::Relaxed)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(mut stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(()); // client went away
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            break pos;
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body = String::from_utf8_lossy(&buf[body_start..body_start + content_length]).to_string();
    let (status, response_body) = handler(&body);
    let reason = if status == 200 { "OK" } else { "Error" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn json_error(message: &str) -> (u16, String) {
    (400, format!("{{\"error\":{:?}}}", message))
}

/// Embedding service evaluating `embed` per text.
pub fn embedding_server<F>(embed: F) -> MockServer
where
    F: Fn(&str) -> Vec<f64> + Send + Sync + 'static,
{
    MockServer::start(Arc::new(move |body| {
        let req: EmbedRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return json_error(&e.to_string()),
        };
        let resp = EmbedResponse {
            vectors: req.texts.iter().map(|t| embed(t)).collect(),
        };
        (200, serde_json::to_string(&resp).expect("serialize"))
    }))
}

/// Deterministic embedding used where only reproducibility matters: maps a
/// text to a small vector of byte-sum features.
pub fn feature_hash_embedding(dim: usize) -> impl Fn(&str) -> Vec<f64> + Send + Sync {
    move |text: &str| {
        let mut v = vec![0f64; dim];
        for (i, b) in text.bytes().enumerate() {
            v[i % dim] += f64::from(b) / 255.0;
        }
        v
    }
}

/// Log-probability service evaluating `logprob` per continuation token.
/// The continuation is split at space boundaries with the separator
/// attached to the following token, so the tokens concatenate exactly.
pub fn logprob_server<F>(logprob: F) -> MockServer
where
    F: Fn(&str, &str, usize) -> f64 + Send + Sync + 'static,
{
    MockServer::start(Arc::new(move |body| {
        let req: LogprobRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return json_error(&e.to_string()),
        };
        let tokens = split_keeping_separators(&req.continuation);
        let token_logprobs: Vec<TokenLogProb> = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| TokenLogProb {
                logprob: logprob(&req.prompt, &t, i),
                token: t,
            })
            .collect();
        let resp = LogprobResponse { token_logprobs };
        (200, serde_json::to_string(&resp).expect("serialize"))
    }))
}

/// Splits "a b c" into ["a", " b", " c"]; pieces concatenate to the input.
pub fn split_keeping_separators(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch == ' ' && !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        current.push(ch);
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Misbehaving log-probability service that drops the final continuation
/// token, violating the coverage contract.
pub fn truncating_logprob_server() -> MockServer {
    MockServer::start(Arc::new(move |body| {
        let req: LogprobRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return json_error(&e.to_string()),
        };
        let mut tokens = split_keeping_separators(&req.continuation);
        tokens.pop();
        let resp = LogprobResponse {
            token_logprobs: tokens
                .into_iter()
                .map(|t| TokenLogProb {
                    token: t,
                    logprob: -1.0,
                })
                .collect(),
        };
        (200, serde_json::to_string(&resp).expect("serialize"))
    }))
}

/// Pair-scoring service evaluating `score` per (question, title, text).
pub fn scoring_server<F>(score: F) -> MockServer
where
    F: Fn(&str, &str, &str) -> f64 + Send + Sync + 'static,
{
    MockServer::start(Arc::new(move |body| {
        let req: ScoreRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return json_error(&e.to_string()),
        };
        let resp = ScoreResponse {
            scores: req
                .pairs
                .iter()
                .map(|p| score(&p.question, &p.passage_title, &p.passage_text))
                .collect(),
        };
        (200, serde_json::to_string(&resp).expect("serialize"))
    }))
}

/// Server that answers 500 for the first `failures` requests, then
/// delegates; exercises retry paths.
pub fn flaky_server(failures: u32, inner: Handler) -> MockServer {
    let remaining = AtomicU32::new(failures);
    MockServer::start(Arc::new(move |body| {
        if remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
            .is_ok()
        {
            (500, "{\"error\":\"transient\"}".to_string())
        } else {
            inner(body)
        }
    }))
}

/// Handler for [`flaky_server`] delegating to an embedding function.
pub fn embedding_handler<F>(embed: F) -> Handler
where
    F: Fn(&str) -> Vec<f64> + Send + Sync + 'static,
{
    Arc::new(move |body| {
        let req: EmbedRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return json_error(&e.to_string()),
        };
        let resp = EmbedResponse {
            vectors: req.texts.iter().map(|t| embed(t)).collect(),
        };
        (200, serde_json::to_string(&resp).expect("serialize"))
    })
}

/// An address that nothing listens on, for unreachable-endpoint tests.
pub fn unreachable_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().expect("local addr");
    drop(listener);
    format!("http://{addr}/")
}
