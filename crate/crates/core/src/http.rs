//! Blocking JSON-over-HTTP client shared by the remote NLU, embedding and
//! completion backends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("transport error calling {url} after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{url} answered HTTP {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("undecodable response from {url}: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Per-attempt timeout covering connect, send and receive.
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: u32,
    /// First backoff delay; doubled after every failed attempt.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Upper bound on wall time spent in one call, sleeps included.
    pub fn max_total(&self) -> Duration {
        let attempts = self.retries + 1;
        let sleeps: Duration = (0..self.retries).map(|i| self.backoff * 2u32.pow(i)).sum();
        self.timeout * attempts + sleeps
    }
}

pub struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            policy,
        }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// POSTs `body` and decodes the JSON answer. Transport failures, 429 and
    /// 5xx answers are retried with exponential backoff; other statuses fail
    /// immediately.
    pub fn post_json<Req, Resp>(&self, url: &str, body: &Req) -> Result<Resp, HttpError>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let mut delay = self.policy.backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let last = attempt > self.policy.retries;
            match self.agent.post(url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| HttpError::Decode {
                            url: url.to_string(),
                            message: e.to_string(),
                        })?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text).map_err(|e| HttpError::Decode {
                            url: url.to_string(),
                            message: e.to_string(),
                        });
                    }
                    let transient = status == 429 || status >= 500;
                    if !transient || last {
                        return Err(HttpError::Status {
                            url: url.to_string(),
                            status,
                            body: text,
                        });
                    }
                    log::warn!("{url} answered {status}, retrying");
                }
                Err(e) => {
                    if last {
                        return Err(HttpError::Transport {
                            url: url.to_string(),
                            attempts: attempt,
                            message: e.to_string(),
                        });
                    }
                    log::warn!("{url}: {e}, retrying");
                }
            }
            std::thread::sleep(delay);
            delay *= 2;
        }
    }
}

/// Joins a base URL and a path without doubling the slash.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
