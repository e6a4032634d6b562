//! Blocking HTTP POST with bounded retries, shared by the detector client and
//! the chat-completions backend.

use std::time::Duration;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

pub(crate) fn agent(policy: &RetryPolicy) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(policy.timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` and returns the response text of the first 2xx reply.
/// Connection failures, 429 and 5xx are retried with exponential backoff;
/// any other status is a protocol error.
pub(crate) fn post_with_retry(
    agent: &ureq::Agent,
    policy: &RetryPolicy,
    url: &str,
    headers: &[(&str, String)],
    body: &[u8],
) -> Result<String> {
    let attempts = policy.max_attempts.max(1);
    let mut backoff = policy.initial_backoff;
    let mut last_failure = String::new();
    for attempt in 1..=attempts {
        let mut req = agent.post(url);
        for (name, value) in headers {
            req = req.header(*name, value.as_str());
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp
                    .body_mut()
                    .with_config()
                    .limit(64 * 1024 * 1024)
                    .read_to_string()
                    .unwrap_or_default();
                if (200..300).contains(&status) {
                    return Ok(text);
                }
                if status == 429 || status >= 500 {
                    last_failure = format!("HTTP {status} from {url}");
                } else {
                    return Err(Error::Protocol(format!(
                        "HTTP {status} from {url}: {}",
                        truncate(&text, 200)
                    )));
                }
            }
            Err(e) => last_failure = format!("{url}: {e}"),
        }
        log::warn!("attempt {attempt}/{attempts} failed: {last_failure}");
        if attempt < attempts {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(Error::Transport {
        attempts,
        message: last_failure,
    })
}

pub(crate) fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
