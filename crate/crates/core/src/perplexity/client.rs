//! Client for OpenAI-compatible completion endpoints in echo/scoring mode.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One candidate teacher's inference endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token. No header is sent
    /// when unset or when the variable is absent.
    pub auth_env_var: Option<String>,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay in milliseconds; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model_name: String::new(),
            auth_env_var: None,
            timeout: 60.0,
            max_retries: 3,
            max_concurrent_requests: 4,
            backoff_ms: 200,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::Config(format!("endpoint timeout must be > 0, got {}", self.timeout)));
        }
        if self.max_concurrent_requests == 0 {
            return Err(Error::Config("max_concurrent_requests must be at least 1".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout)))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn token(&self) -> Option<String> {
        self.auth_env_var.as_ref().and_then(|v| std::env::var(v).ok())
    }
}

/// Per-token natural-log probabilities; `None` where the endpoint has no
/// score (usually the first token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobResponse {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
}

impl LogprobResponse {
    /// Whether every scored token has logprob ≤ 0, as a proper model would.
    pub fn is_proper(&self) -> bool {
        self.token_logprobs.iter().flatten().all(|l| *l <= 0.0)
    }
}

fn parse_body(body: &Value, url: &str) -> Result<LogprobResponse> {
    let lp = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("logprobs"))
        .ok_or_else(|| Error::Protocol(format!("{url}: response lacks choices[0].logprobs")))?;
    let tokens: Vec<String> = serde_json::from_value(lp.get("tokens").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Protocol(format!("{url}: bad logprobs.tokens: {e}")))?;
    let token_logprobs: Vec<Option<f64>> =
        serde_json::from_value(lp.get("token_logprobs").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Protocol(format!("{url}: bad logprobs.token_logprobs: {e}")))?;
    if tokens.len() != token_logprobs.len() {
        return Err(Error::Protocol(format!(
            "{url}: {} tokens but {} logprobs",
            tokens.len(),
            token_logprobs.len()
        )));
    }
    if token_logprobs.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::Protocol(format!("{url}: non-finite logprob")));
    }
    Ok(LogprobResponse { tokens, token_logprobs })
}

enum Attempt {
    Done(LogprobResponse),
    Retry(String),
    Fail(Error),
}

fn attempt(agent: &ureq::Agent, endpoint: &EndpointConfig, url: &str, text: &str) -> Attempt {
    let body = serde_json::json!({
        "model": endpoint.model_name,
        "prompt": text,
        "max_tokens": 0,
        "echo": true,
        "logprobs": 0,
    });
    let mut req = agent.post(url);
    if let Some(tok) = endpoint.token() {
        req = req.header("Authorization", &format!("Bearer {tok}"));
    }
    let mut resp = match req.send_json(&body) {
        Ok(r) => r,
        Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_))) => {
            return Attempt::Fail(Error::Config(format!("{url}: {e}")))
        }
        Err(e) => return Attempt::Retry(e.to_string()),
    };
    let status = resp.status().as_u16();
    match status {
        200 => {}
        401 | 403 => {
            return Attempt::Fail(Error::Auth {
                url: url.to_string(),
                env_var: endpoint.auth_env_var.clone().unwrap_or_default(),
            })
        }
        429 | 500..=599 => return Attempt::Retry(format!("HTTP {status}")),
        _ => return Attempt::Fail(Error::Protocol(format!("{url}: HTTP {status}"))),
    }
    let value: Value = match resp.body_mut().read_json() {
        Ok(v) => v,
        Err(e) => return Attempt::Fail(Error::Protocol(format!("{url}: malformed body: {e}"))),
    };
    match parse_body(&value, url) {
        Ok(r) => Attempt::Done(r),
        Err(e) => Attempt::Fail(e),
    }
}

/// Scores `text` with the endpoint's model. Retries 429, 5xx and
/// connection failures with exponential backoff.
pub fn fetch_logprobs(endpoint: &EndpointConfig, text: &str) -> Result<LogprobResponse> {
    fetch_with(&endpoint.agent(), endpoint, text)
}

pub(crate) fn fetch_with(agent: &ureq::Agent, endpoint: &EndpointConfig, text: &str) -> Result<LogprobResponse> {
    if text.is_empty() {
        return Err(Error::invalid("cannot score empty text"));
    }
    let url = endpoint.completions_url();
    let mut last = String::new();
    for retry in 0..=endpoint.max_retries {
        if retry > 0 {
            let delay = endpoint.backoff_ms.saturating_mul(1 << (retry - 1).min(16));
            thread::sleep(Duration::from_millis(delay));
        }
        match attempt(agent, endpoint, &url, text) {
            Attempt::Done(r) => return Ok(r),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(why) => {
                log::debug!("{url}: attempt {} failed: {why}", retry + 1);
                last = why;
            }
        }
    }
    Err(Error::Transport(format!(
        "{url}: gave up after {} attempts: {last}",
        endpoint.max_retries + 1
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_completion_body() {
        let v = serde_json::json!({"choices": [{"logprobs": {"tokens": ["a", "b"], "token_logprobs": [null, -0.5]}}]});
        let r = parse_body(&v, "u").unwrap();
        assert_eq!(r.token_logprobs, vec![None, Some(-0.5)]);
        assert!(r.is_proper());
    }

    #[test]
    fn rejects_malformed_bodies() {
        for v in [
            serde_json::json!({}),
            serde_json::json!({"choices": []}),
            serde_json::json!({"choices": [{"logprobs": {"tokens": ["a"], "token_logprobs": [null, -1.0]}}]}),
            serde_json::json!({"choices": [{"logprobs": {"tokens": ["a"], "token_logprobs": ["x"]}}]}),
        ] {
            assert!(matches!(parse_body(&v, "u"), Err(Error::Protocol(_))));
        }
    }

    #[test]
    fn empty_text_sends_nothing() {
        let e = EndpointConfig::new("http://127.0.0.1:9", "m");
        assert!(matches!(fetch_logprobs(&e, ""), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn url_joining() {
        assert_eq!(EndpointConfig::new("http://h:1/", "m").completions_url(), "http://h:1/v1/completions");
    }
}
