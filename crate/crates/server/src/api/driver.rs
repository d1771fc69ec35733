//! Public, onboarding, webhook, survey and driver self-service handlers.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{Duration, Utc};
use farelens_core::digest::sha256_hex;
use farelens_provider::{
    CreateAccount, GeneratorParams, ProviderError, Schedule, SIGNATURE_HEADER,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::auth::Principal;
use super::error::ApiError;
use super::query::PageQuery;
use super::Services;
use crate::ingest::Ack;
use crate::store::{ActivityQuery, AffiliationChoice, Enrollment, StoreError, SyncPhase};
use crate::survey::Answers;

type S = State<Arc<Services>>;

pub async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

pub async fn list_affiliations(State(s): S) -> impl IntoResponse {
    Json(s.store.affiliations())
}

#[derive(Debug, Deserialize)]
pub struct ConsentBody {
    pub consented: bool,
    #[serde(default)]
    pub consent_version: String,
}

#[derive(Debug, Deserialize)]
pub struct EnrollBody {
    pub display_name: String,
    pub phone: String,
    pub affiliation_id: Option<String>,
    /// Creates the affiliation when it is not on the list yet.
    pub affiliation_name: Option<String>,
    pub region_tag: Option<String>,
    pub consent: Option<ConsentBody>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Enrolled {
    pub driver_id: String,
    pub token: String,
    pub affiliation_id: Option<String>,
}

pub async fn enroll(
    State(s): S,
    Json(body): Json<EnrollBody>,
) -> Result<(StatusCode, Json<Enrolled>), ApiError> {
    let consent = match body.consent {
        Some(c) if c.consented => c,
        _ => {
            return Err(ApiError::invalid(
                "enrollment_refused",
                "enrollment requires consent",
            ))
        }
    };
    let affiliation = match (body.affiliation_id, body.affiliation_name) {
        (Some(_), Some(_)) => {
            return Err(ApiError::invalid(
                "invalid",
                "give affiliation_id or affiliation_name, not both",
            ))
        }
        (Some(affiliation_id), None) => AffiliationChoice::Existing { affiliation_id },
        (None, Some(name)) => AffiliationChoice::New {
            name,
            region_tag: body.region_tag,
        },
        (None, None) => AffiliationChoice::None,
    };
    let now = Utc::now();
    let profile = s.store.enroll(
        Enrollment {
            display_name: body.display_name,
            phone: body.phone,
            affiliation,
            consented: consent.consented,
            consent_version: consent.consent_version,
        },
        now,
    )?;
    let token = s.store.issue_driver_token(
        &profile.driver_id,
        Duration::days(s.config.token_ttl_days),
        now,
    )?;
    Ok((
        StatusCode::CREATED,
        Json(Enrolled {
            driver_id: profile.driver_id,
            token,
            affiliation_id: profile.affiliation_id,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DriverStatus {
    pub driver_id: String,
    pub phase: Option<SyncPhase>,
    pub account_id: Option<String>,
    pub activities_ingested: usize,
    pub survey_invited: bool,
    pub survey_submitted: bool,
    pub last_error: Option<String>,
}

fn ensure_live(s: &Services, id: &str) -> Result<(), ApiError> {
    if s.store.is_tombstoned(id) {
        return Err(StoreError::Gone(id.into()).into());
    }
    if !s.store.driver_exists(id) {
        return Err(ApiError::not_found(format!("driver {id}")));
    }
    Ok(())
}

pub async fn status(
    State(s): S,
    who: Principal,
    Path(id): Path<String>,
) -> Result<Json<DriverStatus>, ApiError> {
    who.require_self_or_admin(&id)?;
    ensure_live(&s, &id)?;
    let sync = s.store.sync_state(&id);
    Ok(Json(DriverStatus {
        driver_id: id.clone(),
        phase: sync.as_ref().map(|x| x.phase),
        account_id: s.store.link_of(&id).map(|l| l.account_id),
        activities_ingested: sync.as_ref().map_or(0, |x| x.activities_ingested),
        survey_invited: sync.as_ref().is_some_and(|x| x.survey_invited),
        survey_submitted: s.store.response_of(&id).is_some(),
        last_error: sync.and_then(|x| x.last_error),
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct LinkBody {
    /// Bind an account that already exists at the provider.
    pub account_id: Option<String>,
    /// Otherwise create one with these generator settings.
    pub seed: Option<u64>,
    pub params: Option<GeneratorParams>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Linked {
    pub driver_id: String,
    pub account_id: String,
    pub phase: SyncPhase,
}

fn default_seed(driver_id: &str) -> u64 {
    let h = sha256_hex(driver_id.as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex")
}

pub async fn link(
    State(s): S,
    who: Principal,
    Path(id): Path<String>,
    body: Option<Json<LinkBody>>,
) -> Result<(StatusCode, Json<Linked>), ApiError> {
    who.require_self_or_admin(&id)?;
    ensure_live(&s, &id)?;
    if s.store.link_of(&id).is_some() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "already_linked",
            format!("driver {id} is already linked"),
        ));
    }
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let account = match body.account_id {
        Some(acc) => s.provider.get_account(&acc).await?,
        None => {
            let req = CreateAccount {
                driver_ref: id.clone(),
                seed: body.seed.unwrap_or_else(|| default_seed(&id)),
                params: body.params.unwrap_or_default(),
            };
            s.provider.create_account(&req).await?
        }
    };
    let mut state = s
        .store
        .link(&id, &account.account_id, Utc::now())
        .map_err(|e| match e {
            StoreError::Conflict(m) => ApiError::new(StatusCode::CONFLICT, "already_linked", m),
            other => other.into(),
        })?;
    if s.config.sync_on_link {
        state = s
            .store
            .update_sync(&id, |x| x.phase = SyncPhase::Backfilling)?;
        let services = s.clone();
        let (driver_id, account_id) = (id.clone(), account.account_id.clone());
        tokio::spawn(async move {
            let batches = services.config.emit_batches;
            if batches > 0 {
                match services
                    .provider
                    .emit(&account_id, Schedule::Staged { batches })
                    .await
                {
                    Ok(_) | Err(ProviderError::NoEndpoint) => {}
                    Err(e) => tracing::warn!(driver_id, error = %e, "provider emission failed"),
                }
            }
            if let Err(e) = services.ingestor.run_backfill(&driver_id).await {
                tracing::warn!(driver_id, error = %e, "backfill did not finish; sync again to resume");
            }
        });
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(Linked {
            driver_id: id,
            account_id: account.account_id,
            phase: state.phase,
        }),
    ))
}

pub async fn webhook(State(s): S, headers: HeaderMap, body: Bytes) -> Result<Json<Ack>, ApiError> {
    let sig = headers.get(SIGNATURE_HEADER).and_then(|v| v.to_str().ok());
    Ok(Json(s.ingestor.handle_webhook(&body, sig).await?))
}

pub async fn fetch_survey(State(s): S, Path(token): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.surveys.fetch(&token)?.clone()).into_response())
}

pub async fn submit_survey(
    State(s): S,
    Path(token): Path<String>,
    Json(answers): Json<Answers>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let stored = s.surveys.submit(&token, &answers)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "status": "submitted", "submitted_at": stored.submitted_at })),
    ))
}

pub async fn me(State(s): S, who: Principal) -> Result<Response, ApiError> {
    let id = who.require_driver()?;
    let profile = s
        .store
        .profile(id)
        .ok_or_else(|| ApiError::not_found("driver"))?;
    Ok(Json(profile).into_response())
}

#[derive(Debug, Deserialize)]
pub struct MyActivitiesQuery {
    pub driver_id: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

pub async fn my_activities(
    State(s): S,
    who: Principal,
    Query(q): Query<MyActivitiesQuery>,
) -> Result<Response, ApiError> {
    let id = who.require_driver()?;
    let scope = crate::store::Scope::Driver {
        driver_id: id.to_string(),
    };
    let target = q.driver_id.unwrap_or_else(|| id.to_string());
    let rows = s
        .store
        .get_activities(&scope, &ActivityQuery::Driver(target), Utc::now());
    let page = PageQuery {
        offset: q.offset,
        limit: q.limit,
    }
    .apply(rows)?;
    Ok(Json(page).into_response())
}

pub async fn my_summary(State(s): S, who: Principal) -> Result<Response, ApiError> {
    let id = who.require_driver()?;
    Ok(Json(s.surveys.personal_summary(id)?).into_response())
}

pub async fn delete_me(State(s): S, who: Principal) -> Result<Response, ApiError> {
    let id = who.require_driver()?;
    let receipt = s.store.delete_driver(id, Utc::now()).await?;
    tracing::info!(
        driver_id = id,
        rows = receipt.total(),
        "driver deleted at their request"
    );
    Ok(Json(receipt).into_response())
}
