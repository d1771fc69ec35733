//! Webhook delivery with retries.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::event::{sign, WebhookEvent, SIGNATURE_HEADER};

#[async_trait]
pub trait WebhookTransport: Send + Sync {
    /// Posts one signed body. `Err` carries a short reason and means the
    /// delivery should be retried.
    async fn post(&self, url: &str, body: Vec<u8>, signature: String) -> Result<(), String>;
}

/// Plain HTTP POST; any non-2xx status is a failure.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("HTTP client builds"),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl WebhookTransport for HttpTransport {
    async fn post(&self, url: &str, body: Vec<u8>, signature: String) -> Result<(), String> {
        let resp = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .header(SIGNATURE_HEADER, signature)
            .body(body)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("endpoint answered {}", resp.status()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(200),
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `n` (1-based); zero before the first.
    pub fn backoff_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            Duration::ZERO
        } else {
            self.initial_backoff * self.multiplier.saturating_pow(attempt - 2)
        }
    }
}

/// An event that could not be delivered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub endpoint: String,
    pub attempts: u32,
    pub last_error: String,
    pub event: WebhookEvent,
}

/// Delivers `event` to `url`, retrying with exponential backoff. Returns the
/// number of attempts on success or a dead letter after the last failure.
pub async fn deliver(
    transport: &dyn WebhookTransport,
    policy: &RetryPolicy,
    secret: &[u8],
    url: &str,
    event: &WebhookEvent,
) -> Result<u32, DeadLetter> {
    let body = event.body();
    let signature = sign(secret, &body);
    let mut last_error = String::new();
    for attempt in 1..=policy.max_attempts.max(1) {
        let wait = policy.backoff_before(attempt);
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
        match transport.post(url, body.clone(), signature.clone()).await {
            Ok(()) => return Ok(attempt),
            Err(e) => {
                tracing::warn!(event_id = %event.event_id, attempt, error = %e, "webhook delivery failed");
                last_error = e;
            }
        }
    }
    Err(DeadLetter {
        endpoint: url.to_string(),
        attempts: policy.max_attempts.max(1),
        last_error,
        event: event.clone(),
    })
}
