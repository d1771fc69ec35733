//! Admin calls against a running server.

use reqwest::{Method, StatusCode};
use serde_json::Value;

use crate::error::CliError;

pub struct AdminClient {
    base: String,
    key: String,
    http: reqwest::Client,
}

impl AdminClient {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        AdminClient {
            base: base.into().trim_end_matches('/').to_string(),
            key: key.into(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn call(
        &self,
        method: Method,
        path: &str,
        body: Option<Value>,
    ) -> Result<Value, CliError> {
        let url = format!("{}{path}", self.base);
        let mut req = self.http.request(method, &url).bearer_auth(&self.key);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| CliError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| CliError::Unavailable(format!("{url}: {e}")))?;
        let value: Value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        if status.is_success() {
            return Ok(value);
        }
        let detail = value
            .get("message")
            .and_then(Value::as_str)
            .map_or_else(|| value.to_string(), String::from);
        let message = format!("{url} answered {status}: {detail}");
        Err(match status {
            StatusCode::SERVICE_UNAVAILABLE
            | StatusCode::BAD_GATEWAY
            | StatusCode::GATEWAY_TIMEOUT => CliError::Unavailable(message),
            _ => CliError::Contract(message),
        })
    }
}
