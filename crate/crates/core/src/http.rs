//! Blocking JSON POST with bounded retries, shared by the remote backends.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    /// Transport failure or a 503 after all attempts.
    #[error("{url} unavailable: {reason}")]
    Unavailable { url: String, reason: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("could not decode reply from {url}: {reason}")]
    Decode { url: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
        }
    }
}

pub(crate) fn client(policy: &RetryPolicy) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(policy.timeout)
        .build()
        .expect("http client builds")
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS
}

pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    policy: &RetryPolicy,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, HttpError> {
    let mut backoff = policy.initial_backoff;
    let attempts = policy.attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let mut req = client.post(url).json(body);
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                return resp.json::<R>().map_err(|e| HttpError::Decode {
                    url: url.to_string(),
                    reason: e.to_string(),
                });
            }
            Ok(resp) if retryable(resp.status()) => {
                last = format!("HTTP {}", resp.status().as_u16());
                if attempt == attempts && resp.status() != reqwest::StatusCode::SERVICE_UNAVAILABLE {
                    let status = resp.status().as_u16();
                    return Err(HttpError::Status {
                        url: url.to_string(),
                        status,
                        body: resp.text().unwrap_or_default(),
                    });
                }
            }
            Ok(resp) => {
                let status = resp.status().as_u16();
                return Err(HttpError::Status {
                    url: url.to_string(),
                    status,
                    body: resp.text().unwrap_or_default(),
                });
            }
            Err(e) => last = e.to_string(),
        }
        if attempt < attempts {
            thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(HttpError::Unavailable {
        url: url.to_string(),
        reason: last,
    })
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
