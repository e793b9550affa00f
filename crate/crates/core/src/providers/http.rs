//! Blocking JSON-over-HTTP client for the sidecar protocol:
//!
//! ```text
//! POST /embed         {"texts": [..]}                   -> {"model", "dim", "vectors"}
//! POST /noun_phrases  {"text": ..}                      -> {"phrases": [{"text","start","end"}]}
//! POST /chat          {"prompt": ..}                    -> {"text": ..}
//! POST /vqa           {"image_id": .., "question": ..}  -> {"text": ..}
//! GET  /health                                          -> 200
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, EmbeddingProvider, EmbeddingResponse, NounPhraseProvider, VqaProvider};
use crate::annotations::ImageId;
use crate::error::{Error, Result};

const BACKOFF_BASE_MS: u64 = 50;
const BACKOFF_CAP_MS: u64 = 2_000;

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpProvider {
    base: String,
    agent: ureq::Agent,
    bearer: Option<String>,
    max_retries: u32,
    limiter: Limiter,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(String),
}

impl HttpProvider {
    pub fn new(
        endpoint: &str,
        timeout: Duration,
        max_retries: u32,
        max_in_flight: usize,
        bearer: Option<String>,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
            bearer,
            max_retries,
            limiter: Limiter::new(max_in_flight),
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Requests put on the wire, retries included.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn health(&self) -> Result<bool> {
        let url = format!("{}/health", self.base);
        let _permit = self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.get(&url);
        if let Some(t) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        match req.call() {
            Ok(resp) => Ok(resp.status().is_success()),
            Err(e) => Err(Error::Transport(format!("GET {url}: {e}"))),
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{path}", self.base);
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let ms = (BACKOFF_BASE_MS << (attempt - 1).min(16)).min(BACKOFF_CAP_MS);
                std::thread::sleep(Duration::from_millis(ms));
            }
            match self.attempt(&url, body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(msg) => return Err(Error::Transport(msg)),
                Attempt::Retry(msg) => {
                    log::warn!("{url}: attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "{url}: gave up after {} attempt(s): {last}",
            self.max_retries + 1
        )))
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Attempt<R> {
        let _permit = self.limiter.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.requests.fetch_add(1, Ordering::SeqCst);
        let out = self.send(url, body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn send<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Attempt<R> {
        let mut req = self.agent.post(url);
        if let Some(t) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            // connection refused, timeouts, resets
            Err(e) => return Attempt::Retry(format!("POST {url}: {e}")),
        };
        let status = resp.status();
        if status.is_success() {
            return match resp.body_mut().read_json::<R>() {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fail(format!("POST {url}: malformed response: {e}")),
            };
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let msg = format!("POST {url}: HTTP {}: {}", status.as_u16(), text.trim());
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            Attempt::Retry(msg)
        } else {
            Attempt::Fail(msg)
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    model: String,
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct Phrase {
    text: String,
}

#[derive(Deserialize)]
struct PhrasesReply {
    phrases: Vec<Phrase>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    prompt: &'a str,
}

#[derive(Serialize)]
struct VqaRequest<'a> {
    image_id: ImageId,
    question: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingResponse> {
        if texts.is_empty() {
            return EmbeddingResponse::new("", Vec::new());
        }
        let reply: EmbedReply = self.post("/embed", &EmbedRequest { texts })?;
        if reply.vectors.len() != texts.len() {
            return Err(Error::Transport(format!(
                "/embed returned {} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        let resp = EmbeddingResponse::new(reply.model, reply.vectors)
            .map_err(|e| Error::Transport(format!("/embed: {e}")))?;
        if resp.dim != reply.dim {
            return Err(Error::Transport(format!(
                "/embed declared dim {} but sent {}",
                reply.dim, resp.dim
            )));
        }
        Ok(resp)
    }
}

impl NounPhraseProvider for HttpProvider {
    fn noun_phrases(&self, text: &str) -> Result<Vec<String>> {
        let reply: PhrasesReply = self.post("/noun_phrases", &TextRequest { text })?;
        Ok(reply.phrases.into_iter().map(|p| p.text).collect())
    }
}

impl ChatProvider for HttpProvider {
    fn chat(&self, prompt: &str) -> Result<String> {
        let reply: TextReply = self.post("/chat", &ChatRequest { prompt })?;
        Ok(reply.text)
    }
}

impl VqaProvider for HttpProvider {
    fn vqa(&self, image: ImageId, question: &str) -> Result<String> {
        let reply: TextReply = self.post(
            "/vqa",
            &VqaRequest {
                image_id: image,
                question,
            },
        )?;
        Ok(reply.text)
    }
}
