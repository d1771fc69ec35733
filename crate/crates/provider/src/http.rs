//! HTTP surface of the mock and a client speaking to it.

use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use farelens_core::money::Usd;
use serde::{Deserialize, Serialize};

use crate::api::{
    CreateAccount, EmissionReport, GigPage, ProviderAccount, ProviderApi, ProviderError, Schedule,
};
use crate::mock::MockProvider;

pub const DEFAULT_PAGE_LIMIT: usize = 100;

fn status_of(e: &ProviderError) -> StatusCode {
    match e {
        ProviderError::NotFound(_) => StatusCode::NOT_FOUND,
        ProviderError::Duplicate(_) => StatusCode::CONFLICT,
        ProviderError::BadRequest(_) => StatusCode::BAD_REQUEST,
        ProviderError::Removed(_) => StatusCode::GONE,
        ProviderError::NoEndpoint => StatusCode::CONFLICT,
        ProviderError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
    }
}

struct ApiError(ProviderError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(self.0)).into_response()
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct PageQuery {
    cursor: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EndpointRequest {
    pub url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TipsRequest {
    pub tips_usd: Usd,
}

async fn create_account(
    State(p): State<Arc<MockProvider>>,
    Json(req): Json<CreateAccount>,
) -> ApiResult<(StatusCode, Json<ProviderAccount>)> {
    Ok((StatusCode::CREATED, Json(p.create_account_sync(&req)?)))
}

async fn list_accounts(State(p): State<Arc<MockProvider>>) -> Json<Vec<ProviderAccount>> {
    Json(p.accounts())
}

async fn get_account(
    State(p): State<Arc<MockProvider>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ProviderAccount>> {
    Ok(Json(p.get_account(&id).await?))
}

async fn list_gigs(
    State(p): State<Arc<MockProvider>>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<GigPage>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
    Ok(Json(p.list_gigs_sync(&id, q.cursor.as_deref(), limit)?))
}

async fn emit(
    State(p): State<Arc<MockProvider>>,
    Path(id): Path<String>,
    Json(schedule): Json<Schedule>,
) -> ApiResult<Json<EmissionReport>> {
    Ok(Json(p.emit_events(&id, schedule).await?))
}

async fn amend_tips(
    State(p): State<Arc<MockProvider>>,
    Path((id, gig)): Path<(String, String)>,
    Json(req): Json<TipsRequest>,
) -> ApiResult<Json<EmissionReport>> {
    Ok(Json(p.amend_tips(&id, &gig, req.tips_usd).await?))
}

async fn remove_account(
    State(p): State<Arc<MockProvider>>,
    Path(id): Path<String>,
) -> ApiResult<Json<EmissionReport>> {
    Ok(Json(p.remove_account(&id).await?))
}

async fn register_endpoint(
    State(p): State<Arc<MockProvider>>,
    Json(req): Json<EndpointRequest>,
) -> ApiResult<StatusCode> {
    if !(req.url.starts_with("http://") || req.url.starts_with("https://")) {
        return Err(ProviderError::BadRequest("url must be http(s)".into()).into());
    }
    p.register_endpoint_sync(&req.url);
    Ok(StatusCode::CREATED)
}

async fn dead_letters(State(p): State<Arc<MockProvider>>) -> impl IntoResponse {
    Json(p.dead_letters())
}

async fn events(State(p): State<Arc<MockProvider>>, Path(id): Path<String>) -> impl IntoResponse {
    Json(p.events(&id))
}

/// Routes under `/provider`.
pub fn router(provider: Arc<MockProvider>) -> Router {
    Router::new()
        .route(
            "/provider/accounts",
            post(create_account).get(list_accounts),
        )
        .route(
            "/provider/accounts/:id",
            get(get_account).delete(remove_account),
        )
        .route("/provider/accounts/:id/gigs", get(list_gigs))
        .route("/provider/accounts/:id/gigs/:gig/tips", post(amend_tips))
        .route("/provider/accounts/:id/emit", post(emit))
        .route("/provider/accounts/:id/events", get(events))
        .route("/provider/webhook-endpoints", post(register_endpoint))
        .route("/provider/dead-letters", get(dead_letters))
        .with_state(provider)
}

/// [`ProviderApi`] over HTTP.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    base_url: String,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client: reqwest::Client::new(),
        }
    }

    async fn decode<T: serde::de::DeserializeOwned>(
        resp: Result<reqwest::Response, reqwest::Error>,
    ) -> Result<T, ProviderError> {
        let resp = resp.map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json()
                .await
                .map_err(|e| ProviderError::Unavailable(format!("bad response body: {e}")));
        }
        match resp.json::<ProviderError>().await {
            Ok(e) => Err(e),
            Err(_) => Err(ProviderError::Unavailable(format!(
                "provider answered {status}"
            ))),
        }
    }
}

#[async_trait]
impl ProviderApi for HttpProvider {
    async fn create_account(&self, req: &CreateAccount) -> Result<ProviderAccount, ProviderError> {
        let url = format!("{}/provider/accounts", self.base_url);
        Self::decode(self.client.post(url).json(req).send().await).await
    }

    async fn get_account(&self, account_id: &str) -> Result<ProviderAccount, ProviderError> {
        let url = format!("{}/provider/accounts/{account_id}", self.base_url);
        Self::decode(self.client.get(url).send().await).await
    }

    async fn list_gigs(
        &self,
        account_id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError> {
        let url = format!("{}/provider/accounts/{account_id}/gigs", self.base_url);
        let mut query = vec![("limit", limit.to_string())];
        if let Some(c) = cursor {
            query.push(("cursor", c.to_string()));
        }
        Self::decode(self.client.get(url).query(&query).send().await).await
    }

    async fn emit(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<EmissionReport, ProviderError> {
        let url = format!("{}/provider/accounts/{account_id}/emit", self.base_url);
        Self::decode(self.client.post(url).json(&schedule).send().await).await
    }

    async fn register_endpoint(&self, url: &str) -> Result<(), ProviderError> {
        let endpoint = format!("{}/provider/webhook-endpoints", self.base_url);
        let resp = self
            .client
            .post(endpoint)
            .json(&EndpointRequest {
                url: url.to_string(),
            })
            .send()
            .await
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(resp
                .json::<ProviderError>()
                .await
                .unwrap_or_else(|e| ProviderError::Unavailable(e.to_string())))
        }
    }
}
