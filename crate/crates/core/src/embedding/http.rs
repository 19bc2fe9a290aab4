//! Client for the sidecar's HTTP embedding protocol.
//!
//! `POST /v1/embed` takes the request JSON and answers
//! `{"n_layers", "dim", "subword_token_map", "vectors_b64"}`; `GET /v1/model`
//! answers `{"model_id", "n_layers", "dim"}`. A 503 means busy and is retried,
//! honoring `Retry-After`; other failures surface immediately.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{check_shape, EmbedError, EmbeddingProvider, EmbeddingRequest, LayeredEmbedding, ModelInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// e.g. `http://127.0.0.1:8080`
    pub base_url: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// Wait before retrying a 503 that carries no `Retry-After`.
    pub backoff_ms: u64,
    /// Upper bound on any single wait, `Retry-After` included.
    pub max_wait_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            max_in_flight: 8,
            max_retries: 5,
            timeout_secs: 120,
            backoff_ms: 500,
            max_wait_ms: 30_000,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    n_layers: usize,
    dim: usize,
    subword_token_map: Vec<i32>,
    vectors_b64: String,
}

#[derive(Debug, Deserialize)]
struct ModelResponse {
    model_id: String,
    n_layers: usize,
    dim: usize,
    #[serde(default)]
    tokenizer: String,
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
    info: ModelInfo,
    slots: Slots,
}

enum Reply {
    Ok(String),
    Busy(Option<u64>),
    Failed(u16, String),
}

impl HttpProvider {
    /// Connect and read the served model's shape. If `expected` is given
    /// (from the model registry), its id and shape must match the server's.
    pub fn connect(config: HttpConfig, expected: Option<&ModelInfo>) -> Result<Self, EmbedError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let slots = Slots { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() };
        let placeholder = ModelInfo { model_id: String::new(), n_layers: 0, dim: 0, tokenizer: String::new() };
        let mut provider = Self { config, agent, info: placeholder, slots };
        let body = provider.with_retries(|p| p.get("/v1/model"))?;
        let m: ModelResponse = serde_json::from_str(&body)
            .map_err(|e| EmbedError::Integrity(format!("malformed /v1/model response: {e}")))?;
        let info = ModelInfo { model_id: m.model_id, n_layers: m.n_layers, dim: m.dim, tokenizer: m.tokenizer };
        if let Some(exp) = expected {
            if exp.model_id != info.model_id {
                return Err(EmbedError::Integrity(format!("server hosts {}, expected {}", info.model_id, exp.model_id)));
            }
            check_shape(exp, info.n_layers, info.dim)?;
        }
        provider.info = info;
        Ok(provider)
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn classify(&self, result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply, String> {
        let mut resp = result.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok());
        let body = resp.body_mut().with_config().limit(1 << 30).read_to_string().map_err(|e| e.to_string())?;
        Ok(match status {
            200 => Reply::Ok(body),
            503 => Reply::Busy(retry_after),
            s => Reply::Failed(s, body),
        })
    }

    fn get(&self, path: &str) -> Result<Reply, String> {
        self.classify(self.agent.get(&self.url(path)).call())
    }

    fn post(&self, path: &str, body: &[u8]) -> Result<Reply, String> {
        self.classify(self.agent.post(&self.url(path)).header("content-type", "application/json").send(body))
    }

    fn with_retries(&self, call: impl Fn(&Self) -> Result<Reply, String>) -> Result<String, EmbedError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let (status, message, retry_after) = match call(self) {
                Ok(Reply::Ok(body)) => return Ok(body),
                Ok(Reply::Failed(status, body)) => {
                    return Err(EmbedError::Transport { status: Some(status), message: body, attempts, retry_after_secs: None })
                }
                Ok(Reply::Busy(after)) => (Some(503), "server busy".to_string(), after),
                // Connection-level errors are retried like a busy server.
                Err(message) => (None, message, None),
            };
            if attempts > self.config.max_retries {
                return Err(EmbedError::Transport { status, message, attempts, retry_after_secs: retry_after });
            }
            let wait_ms = retry_after.map_or(self.config.backoff_ms << (attempts - 1).min(16), |s| s * 1000);
            log::debug!("retrying {} after {wait_ms} ms (attempt {attempts}): {message}", self.config.base_url);
            thread::sleep(Duration::from_millis(wait_ms.min(self.config.max_wait_ms)));
        }
    }
}

/// Decode base64 little-endian float32s.
pub fn decode_vectors(b64: &str) -> Result<Vec<f32>, EmbedError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| EmbedError::Integrity(format!("bad base64 vectors: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(EmbedError::Integrity(format!("{} vector bytes is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn encode_vectors(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

impl EmbeddingProvider for HttpProvider {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<LayeredEmbedding, EmbedError> {
        request.validate()?;
        if request.model_id != self.info.model_id {
            return Err(EmbedError::InvalidRequest(format!(
                "request for {} sent to server hosting {}",
                request.model_id, self.info.model_id
            )));
        }
        let body = request.canonical_json();
        let text = {
            let _slot = self.slots.acquire();
            self.with_retries(|p| p.post("/v1/embed", &body))?
        };
        let r: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| EmbedError::Integrity(format!("malformed /v1/embed response: {e}")))?;
        check_shape(&self.info, r.n_layers, r.dim)?;
        let values = decode_vectors(&r.vectors_b64)?;
        let e = LayeredEmbedding {
            n_layers: r.n_layers,
            n_subwords: r.subword_token_map.len(),
            dim: r.dim,
            values,
            subword_token_map: r.subword_token_map,
        };
        e.validate(request)?;
        Ok(e)
    }
}
