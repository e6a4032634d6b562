//! OpenAI-compatible chat-completions backend with an in-flight cap and a
//! token-bucket rate limit.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendRequest};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

pub const LLM_URL_ENV: &str = "FE_LLM_URL";
pub const LLM_KEY_ENV: &str = "FE_LLM_KEY";
pub const LLM_MODEL_ENV: &str = "FE_LLM_MODEL";

const DEFAULT_URL: &str = "https://api.openai.com/v1";
const DEFAULT_MODEL: &str = "gpt-5";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimit {
    pub max_in_flight: usize,
    pub requests_per_second: f64,
    pub burst: u32,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            requests_per_second: 2.0,
            burst: 4,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: String,
    pub model: String,
    pub rate_limit: RateLimit,
    pub retry: RetryPolicy,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("rate_limit", &self.rate_limit)
            .finish_non_exhaustive()
    }
}

impl RemoteConfig {
    /// Reads `FE_LLM_URL`, `FE_LLM_KEY` and `FE_LLM_MODEL`; the key is required.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|name| std::env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |name: &str| lookup(name).filter(|v| !v.trim().is_empty());
        let api_key = get(LLM_KEY_ENV).ok_or_else(|| {
            Error::Config(format!(
                "remote backend needs an API key: set {LLM_KEY_ENV}"
            ))
        })?;
        Ok(Self {
            url: get(LLM_URL_ENV).unwrap_or_else(|| DEFAULT_URL.to_string()),
            api_key,
            model: get(LLM_MODEL_ENV).unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            rate_limit: RateLimit::default(),
            retry: RetryPolicy::default(),
        })
    }

    pub fn completions_url(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

struct Bucket {
    tokens: f64,
    refilled: Instant,
}

struct Limiter {
    cfg: RateLimit,
    in_flight: Mutex<usize>,
    released: Condvar,
    bucket: Mutex<Bucket>,
}

impl Limiter {
    fn new(cfg: RateLimit) -> Self {
        Self {
            cfg,
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            bucket: Mutex::new(Bucket {
                tokens: cfg.burst.max(1) as f64,
                refilled: Instant::now(),
            }),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cfg.max_in_flight.max(1) {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
        drop(n);
        self.take_token();
        Permit(self)
    }

    fn take_token(&self) {
        if self.cfg.requests_per_second <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut b = self.bucket.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(b.refilled).as_secs_f64();
                b.tokens = (b.tokens + elapsed * self.cfg.requests_per_second)
                    .min(self.cfg.burst.max(1) as f64);
                b.refilled = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / self.cfg.requests_per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.released.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self {
            agent: http::agent(&cfg.retry),
            limiter: Limiter::new(cfg.rate_limit),
            cfg,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Request body: the prompt and the PNG as a data URL in one user
    /// message, then the earlier reply and the follow-up when reprompting.
    pub fn request_body(&self, request: &BackendRequest<'_>) -> serde_json::Value {
        let image = base64::engine::general_purpose::STANDARD.encode(request.image_png);
        let mut messages = vec![json!({
            "role": "user",
            "content": [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}}
            ]
        })];
        if let Some((previous, instruction)) = request.followup {
            messages.push(json!({"role": "assistant", "content": previous}));
            messages.push(json!({"role": "user", "content": instruction}));
        }
        json!({
            "model": self.cfg.model,
            "messages": messages,
        })
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        format!("chat-completions:{}", self.cfg.model)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        let body = serde_json::to_vec(&self.request_body(request)).expect("json body");
        let _permit = self.limiter.acquire();
        let text = http::post_with_retry(
            &self.agent,
            &self.cfg.retry,
            &self.cfg.completions_url(),
            &[
                ("Content-Type", "application/json".to_string()),
                ("Authorization", format!("Bearer {}", self.cfg.api_key)),
            ],
            &body,
        )?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            Error::Protocol(format!(
                "unexpected chat-completions reply ({e}): {}",
                http::truncate(&text, 200)
            ))
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Protocol("chat-completions reply has no message content".into()))
    }
}
