//! A small fixture-driven stand-in for a completions endpoint, used by the
//! test suite and by `teachertrace mock-server` for offline runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::LogprobResponse;
use crate::error::{Error, Result};

/// Behavior of one served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockModel {
    /// Logprob of a token before the per-token offset.
    pub base_logprob: f64,
    /// Each token's logprob is lowered by up to this much, chosen by a
    /// hash of the token text.
    pub spread: f64,
    /// Exact-prompt responses that override the generator.
    pub fixtures: BTreeMap<String, LogprobResponse>,
    /// Answer the first `fail_first` requests with HTTP 503.
    pub fail_first: usize,
    /// Answer every request with this status and an empty JSON object.
    pub status: Option<u16>,
    /// Answer prompts containing this substring with HTTP 400.
    pub reject_containing: Option<String>,
    /// Bearer token required in the Authorization header.
    pub require_token: Option<String>,
    /// Delay before each response, in milliseconds.
    pub latency_ms: u64,
    /// Return a body without the logprobs object.
    pub malformed: bool,
}

impl Default for MockModel {
    fn default() -> Self {
        MockModel {
            base_logprob: -2.0,
            spread: 1.0,
            fixtures: BTreeMap::new(),
            fail_first: 0,
            status: None,
            reject_containing: None,
            require_token: None,
            latency_ms: 0,
            malformed: false,
        }
    }
}

impl MockModel {
    /// Scores a prompt: whitespace tokens, first token unscored.
    pub fn score(&self, prompt: &str) -> LogprobResponse {
        if let Some(f) = self.fixtures.get(prompt) {
            return f.clone();
        }
        let tokens: Vec<String> = prompt.split_whitespace().map(str::to_string).collect();
        let token_logprobs = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i > 0).then(|| self.base_logprob - self.spread * unit_hash(t)))
            .collect();
        LogprobResponse { tokens, token_logprobs }
    }
}

// FNV-1a mapped to [0, 1).
fn unit_hash(s: &str) -> f64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub models: BTreeMap<String, MockModel>,
}

impl MockConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Default)]
struct Counters {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: AtomicUsize,
    per_model: Mutex<HashMap<String, usize>>,
}

/// Request counts observed by a running mock server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockStats {
    pub requests: usize,
    pub max_in_flight: usize,
    pub per_model: BTreeMap<String, usize>,
}

/// A running mock server; stops accepting connections when dropped.
pub struct MockServer {
    addr: SocketAddr,
    counters: Arc<Counters>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    url: String,
}

impl MockServer {
    /// Binds 127.0.0.1 on an ephemeral port.
    pub fn start(config: MockConfig) -> Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    /// Serves each connection on its own thread.
    pub fn bind(addr: &str, config: MockConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Transport(format!("mock server bind {addr}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Transport(format!("mock server address: {e}")))?;
        let config = Arc::new(config);
        let counters = Arc::new(Counters::default());
        let shutdown = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (config, counters, shutdown) = (config.clone(), counters.clone(), shutdown.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (config, counters) = (config.clone(), counters.clone());
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &config, &counters) {
                            log::debug!("mock connection ended: {e}");
                        }
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            counters,
            shutdown,
            acceptor: Some(acceptor),
            url: format!("http://{addr}"),
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn stats(&self) -> MockStats {
        MockStats {
            requests: self.counters.requests.load(Ordering::SeqCst),
            max_in_flight: self.counters.max_in_flight.load(Ordering::SeqCst),
            per_model: self
                .counters
                .per_model
                .lock()
                .expect("counter lock")
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Blocks until the process is killed.
    pub fn wait(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

struct Incoming {
    method: String,
    path: String,
    authorization: Option<String>,
    close: bool,
    body: Vec<u8>,
}

/// Reads one request; `None` on a clean end of stream.
fn read_request(stream: &mut TcpStream, buf: &mut Vec<u8>) -> std::io::Result<Option<Incoming>> {
    let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut chunk = [0u8; 4096];
    loop {
        let mut headers = [httparse::EMPTY_HEADER; 32];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(buf).map_err(|e| bad(e.to_string()))? {
            httparse::Status::Complete(head) => {
                let mut length = 0usize;
                let mut authorization = None;
                let mut close = false;
                for h in req.headers.iter() {
                    let value = String::from_utf8_lossy(h.value).into_owned();
                    if h.name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().map_err(|_| bad("bad content-length".into()))?;
                    } else if h.name.eq_ignore_ascii_case("authorization") {
                        authorization = Some(value);
                    } else if h.name.eq_ignore_ascii_case("connection") {
                        close = value.eq_ignore_ascii_case("close");
                    }
                }
                let method = req.method.unwrap_or_default().to_string();
                let path = req.path.unwrap_or_default().to_string();
                while buf.len() < head + length {
                    let n = stream.read(&mut chunk)?;
                    if n == 0 {
                        return Err(bad("connection closed inside a request body".into()));
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
                let body = buf[head..head + length].to_vec();
                buf.drain(..head + length);
                return Ok(Some(Incoming {
                    method,
                    path,
                    authorization,
                    close,
                    body,
                }));
            }
            httparse::Status::Partial => {
                let n = stream.read(&mut chunk)?;
                if n == 0 {
                    return if buf.is_empty() {
                        Ok(None)
                    } else {
                        Err(bad("connection closed inside a request head".into()))
                    };
                }
                buf.extend_from_slice(&chunk[..n]);
            }
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn serve_connection(mut stream: TcpStream, config: &MockConfig, counters: &Counters) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    stream.set_nodelay(true)?;
    let mut buf = Vec::new();
    while let Some(req) = read_request(&mut stream, &mut buf)? {
        let now = counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        counters.max_in_flight.fetch_max(now, Ordering::SeqCst);
        counters.requests.fetch_add(1, Ordering::SeqCst);
        let (status, body) = respond(&req, config, counters);
        counters.in_flight.fetch_sub(1, Ordering::SeqCst);
        let body = body.to_string();
        let response = format!(
            "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            reason(status),
            body.len()
        );
        stream.write_all(response.as_bytes())?;
        if req.close {
            break;
        }
    }
    Ok(())
}

fn respond(req: &Incoming, config: &MockConfig, counters: &Counters) -> (u16, Value) {
    if req.method != "POST" || req.path != "/v1/completions" {
        return (404, json!({"error": "not found"}));
    }
    let Ok(body) = serde_json::from_slice::<Value>(&req.body) else {
        return (400, json!({"error": "invalid JSON"}));
    };
    let name = body["model"].as_str().unwrap_or_default().to_string();
    let Some(model) = config.models.get(&name) else {
        return (404, json!({"error": format!("unknown model {name:?}")}));
    };
    let seen = {
        let mut per = counters.per_model.lock().expect("counter lock");
        let c = per.entry(name).or_insert(0);
        *c += 1;
        *c
    };
    if model.latency_ms > 0 {
        thread::sleep(Duration::from_millis(model.latency_ms));
    }
    if let Some(tok) = &model.require_token {
        if req.authorization.as_deref() != Some(format!("Bearer {tok}").as_str()) {
            return (401, json!({"error": "unauthorized"}));
        }
    }
    if let Some(s) = model.status {
        return (s, json!({}));
    }
    if seen <= model.fail_first {
        return (503, json!({"error": "warming up"}));
    }
    if body["echo"] != json!(true) || body["max_tokens"] != json!(0) {
        return (400, json!({"error": "only echo scoring is supported"}));
    }
    let prompt = body["prompt"].as_str().unwrap_or_default();
    if model.reject_containing.as_deref().is_some_and(|s| prompt.contains(s)) {
        return (400, json!({"error": "rejected prompt"}));
    }
    if model.malformed {
        return (200, json!({"choices": [{"text": prompt}]}));
    }
    let scored = model.score(prompt);
    (
        200,
        json!({
            "object": "text_completion",
            "model": body["model"],
            "choices": [{
                "index": 0,
                "text": prompt,
                "logprobs": {
                    "tokens": scored.tokens,
                    "token_logprobs": scored.token_logprobs,
                },
                "finish_reason": "length",
            }],
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_negative() {
        let m = MockModel::default();
        let a = m.score("the cat sat");
        assert_eq!(a, m.score("the cat sat"));
        assert_eq!(a.token_logprobs[0], None);
        assert!(a.token_logprobs[1..].iter().all(|l| l.unwrap() <= -2.0 && l.unwrap() > -3.0));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(MockConfig::from_json(r#"{"models": {"m": {"bogus": 1}}}"#).is_err());
        let c = MockConfig::from_json(r#"{"models": {"m": {"base_logprob": -1.0}}}"#).unwrap();
        assert_eq!(c.models["m"].spread, 1.0);
    }
}
