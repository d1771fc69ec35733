use std::sync::Arc;

use axum::async_trait;
use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::StatusCode;
use chrono::Utc;
use sha2::{Digest, Sha256};

use super::error::ApiError;
use super::Services;
use crate::store::{Scope, TokenCheck};

/// Who is calling, from the `Authorization: Bearer` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Anonymous,
    Driver(String),
    Admin,
}

/// Compares digests so timing reveals nothing about the key.
fn same_secret(a: &str, b: &str) -> bool {
    let (x, y) = (Sha256::digest(a.as_bytes()), Sha256::digest(b.as_bytes()));
    x.iter()
        .zip(y.iter())
        .fold(0u8, |acc, (p, q)| acc | (p ^ q))
        == 0
}

#[async_trait]
impl FromRequestParts<Arc<Services>> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &Arc<Services>,
    ) -> Result<Self, ApiError> {
        let Some(value) = parts.headers.get(AUTHORIZATION) else {
            return Ok(Principal::Anonymous);
        };
        let token = value
            .to_str()
            .ok()
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNAUTHORIZED,
                    "invalid_token",
                    "expected a Bearer token",
                )
            })?;
        if same_secret(token, &state.config.admin_key) {
            return Ok(Principal::Admin);
        }
        match state.store.resolve_token(token, Utc::now()) {
            TokenCheck::Valid(t) => match t.scope {
                Scope::Driver { driver_id } => Ok(Principal::Driver(driver_id)),
                Scope::Admin => Ok(Principal::Admin),
            },
            TokenCheck::Expired => Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "token_expired",
                "token has expired",
            )),
            TokenCheck::Unknown => Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "invalid_token",
                "token not recognized",
            )),
        }
    }
}

impl Principal {
    pub fn require_admin(&self) -> Result<(), ApiError> {
        match self {
            Principal::Admin => Ok(()),
            Principal::Driver(_) => Err(ApiError::forbidden()),
            Principal::Anonymous => Err(ApiError::unauthorized()),
        }
    }

    pub fn require_driver(&self) -> Result<&str, ApiError> {
        match self {
            Principal::Driver(id) => Ok(id),
            Principal::Admin => Err(ApiError::forbidden()),
            Principal::Anonymous => Err(ApiError::unauthorized()),
        }
    }

    /// The driver themself or an admin. Another driver sees a plain 404 so
    /// the response does not confirm the id exists.
    pub fn require_self_or_admin(&self, driver_id: &str) -> Result<(), ApiError> {
        match self {
            Principal::Admin => Ok(()),
            Principal::Driver(id) if id == driver_id => Ok(()),
            Principal::Driver(_) => Err(ApiError::not_found(format!("driver {driver_id}"))),
            Principal::Anonymous => Err(ApiError::unauthorized()),
        }
    }
}
