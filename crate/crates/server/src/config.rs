use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmsAdapter {
    Console,
    /// `sms_transcript.jsonl` under the data directory.
    Transcript,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Bearer key for `/admin/*`. Never issued through the API.
    pub admin_key: String,
    pub webhook_secret: String,
    /// Public origin used in survey links and the webhook callback URL.
    pub base_url: String,
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub survey_threshold: usize,
    pub token_ttl_days: i64,
    /// Start the backfill as soon as an account is linked.
    pub sync_on_link: bool,
    /// Webhook batches requested from the provider on link; 0 disables.
    pub emit_batches: usize,
    pub sms: SmsAdapter,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} is required")]
    Missing(&'static str),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
}

pub const MIN_ADMIN_KEY_LEN: usize = 16;

impl ServerConfig {
    /// Reads `ADMIN_KEY`, `PROVIDER_WEBHOOK_SECRET`, `BASE_URL`, `DATA_DIR`,
    /// plus the optional `SURVEY_THRESHOLD`, `TOKEN_TTL_DAYS`, `SYNC_ON_LINK`,
    /// `EMIT_BATCHES` and `SMS_ADAPTER`.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |k: &str| get(k).filter(|v| !v.trim().is_empty());
        let admin_key = get("ADMIN_KEY").ok_or(ConfigError::Missing("ADMIN_KEY"))?;
        if admin_key.len() < MIN_ADMIN_KEY_LEN {
            return Err(ConfigError::Invalid {
                key: "ADMIN_KEY",
                message: format!("must be at least {MIN_ADMIN_KEY_LEN} characters"),
            });
        }
        let webhook_secret = get("PROVIDER_WEBHOOK_SECRET")
            .ok_or(ConfigError::Missing("PROVIDER_WEBHOOK_SECRET"))?;
        let base_url = get("BASE_URL").unwrap_or_else(|| "http://127.0.0.1:8080".into());
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(ConfigError::Invalid {
                key: "BASE_URL",
                message: "must be an http(s) URL".into(),
            });
        }
        fn parse<T: std::str::FromStr>(
            key: &'static str,
            v: Option<String>,
            default: T,
        ) -> Result<T, ConfigError> {
            match v {
                None => Ok(default),
                Some(s) => s.trim().parse().map_err(|_| ConfigError::Invalid {
                    key,
                    message: format!("cannot parse {s:?}"),
                }),
            }
        }
        let sms = match get("SMS_ADAPTER").as_deref() {
            None | Some("console") => SmsAdapter::Console,
            Some("transcript") => SmsAdapter::Transcript,
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "SMS_ADAPTER",
                    message: format!("{other:?} is not console or transcript"),
                })
            }
        };
        let data_dir = get("DATA_DIR").map(PathBuf::from);
        if sms == SmsAdapter::Transcript && data_dir.is_none() {
            return Err(ConfigError::Invalid {
                key: "SMS_ADAPTER",
                message: "transcript needs DATA_DIR".into(),
            });
        }
        Ok(ServerConfig {
            admin_key,
            webhook_secret,
            base_url: base_url.trim_end_matches('/').to_string(),
            data_dir,
            survey_threshold: parse("SURVEY_THRESHOLD", get("SURVEY_THRESHOLD"), 10)?,
            token_ttl_days: parse("TOKEN_TTL_DAYS", get("TOKEN_TTL_DAYS"), 90)?,
            sync_on_link: parse("SYNC_ON_LINK", get("SYNC_ON_LINK"), true)?,
            emit_batches: parse("EMIT_BATCHES", get("EMIT_BATCHES"), 4)?,
            sms,
        })
    }

    /// In-memory settings for tests and embedding.
    pub fn ephemeral(admin_key: &str, webhook_secret: &str) -> Self {
        ServerConfig {
            admin_key: admin_key.into(),
            webhook_secret: webhook_secret.into(),
            base_url: "http://127.0.0.1:8080".into(),
            data_dir: None,
            survey_threshold: 10,
            token_ttl_days: 90,
            sync_on_link: false,
            emit_batches: 0,
            sms: SmsAdapter::Console,
        }
    }

    pub fn transcript_path(&self) -> Option<PathBuf> {
        self.data_dir
            .as_ref()
            .map(|d| d.join("sms_transcript.jsonl"))
    }
}
