//! Organizer endpoints. Every handler starts with `require_admin`.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::Json;
use chrono::Utc;
use farelens_core::filter::FilterSpec;
use farelens_core::pipeline::{
    pipeline_digest, run_pipeline, Bundle, BundleCache, CacheStatus, PipelineError,
};
use farelens_core::report::{
    build_report_with, render_html, render_text, report_id_for, write_report_dir, Report, Templates,
};
use farelens_core::snapshot::Snapshot;
use serde::{Deserialize, Serialize};

use super::auth::Principal;
use super::error::ApiError;
use super::query::{FilterQuery, PageQuery};
use super::{ReportJob, Services};
use crate::store::{ActivityQuery, Scope};

type S = State<Arc<Services>>;

#[derive(Debug, Deserialize)]
pub struct NewAffiliation {
    pub name: String,
    pub region_tag: Option<String>,
}

pub async fn create_affiliation(
    State(s): S,
    who: Principal,
    Json(body): Json<NewAffiliation>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let a = s
        .store
        .create_affiliation(&body.name, body.region_tag.as_deref())?;
    Ok((StatusCode::CREATED, Json(a)).into_response())
}

pub async fn list_drivers(
    State(s): S,
    who: Principal,
    Query(q): Query<PageQuery>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok(Json(q.apply(s.store.drivers())?).into_response())
}

pub async fn delete_driver(
    State(s): S,
    who: Principal,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let receipt = s.store.delete_driver(&id, Utc::now()).await?;
    tracing::info!(driver_id = %id, rows = receipt.total(), "driver deleted by admin");
    Ok(Json(receipt).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct ActivitiesQuery {
    pub driver_id: Option<String>,
    pub affiliation_ids: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub categories: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

pub async fn activities(
    State(s): S,
    who: Principal,
    Query(q): Query<ActivitiesQuery>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let query = match q.driver_id {
        Some(id) => ActivityQuery::Driver(id),
        None => {
            let filter = FilterQuery {
                affiliation_ids: q.affiliation_ids,
                from: q.from,
                to: q.to,
                categories: q.categories,
            }
            .to_filter()?;
            filter.validate(&s.store.affiliation_ids())?;
            ActivityQuery::Filter(filter)
        }
    };
    let rows = s.store.get_activities(&Scope::Admin, &query, Utc::now());
    Ok(Json(
        PageQuery {
            offset: q.offset,
            limit: q.limit,
        }
        .apply(rows)?,
    )
    .into_response())
}

fn run_bundle(
    s: &Services,
    snapshot: &Snapshot,
    filter: &FilterSpec,
) -> Result<(Bundle, CacheStatus), PipelineError> {
    match s.bundle_dir() {
        Some(dir) => BundleCache::new(dir)
            .run(snapshot, filter, &s.pipeline_config)
            .map(|(b, _, c)| (b, c)),
        None => run_pipeline(snapshot, filter, &s.pipeline_config).map(|b| (b, CacheStatus::Miss)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Aggregates {
    pub pipeline_digest: String,
    pub cache: CacheStatus,
    pub bundle: Bundle,
}

pub async fn aggregates(
    State(s): S,
    who: Principal,
    Query(q): Query<FilterQuery>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let filter = q.to_filter()?.canonical();
    filter.validate(&s.store.affiliation_ids())?;
    let snapshot = s.store.snapshot();
    let (bundle, cache) = tokio::task::spawn_blocking(move || run_bundle(&s, &snapshot, &filter))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(Aggregates {
        pipeline_digest: bundle.digest().to_string(),
        cache,
        bundle,
    })
    .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportStatus {
    pub report_id: String,
    /// `pending`, `ready` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn status_of(id: &str, status: &str, digest: Option<&str>) -> ReportStatus {
    ReportStatus {
        report_id: id.into(),
        status: status.into(),
        pipeline_digest: digest.map(String::from),
        error: None,
    }
}

fn load_report(s: &Services, report_id: &str) -> Option<Report> {
    let path = s.report_dir(report_id)?.join("report.json");
    let bytes = std::fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn build(
    s: &Services,
    snapshot: &Snapshot,
    filter: &FilterSpec,
    templates: &Templates,
) -> Result<Report, PipelineError> {
    let (bundle, _) = run_bundle(s, snapshot, filter)?;
    let report = build_report_with(&bundle, templates);
    if let Some(dir) = s.report_dir(&report.report_id) {
        write_report_dir(&report, &bundle, &dir)?;
    }
    Ok(report)
}

/// Starts a build off the request path. The id is known up front because it
/// is derived from the pipeline digest, so identical inputs share one report.
pub async fn create_report(
    State(s): S,
    who: Principal,
    body: Option<Json<FilterSpec>>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let filter = body.map(|Json(f)| f).unwrap_or_default().canonical();
    filter.validate(&s.store.affiliation_ids())?;
    let snapshot = s.store.snapshot();
    let digest = pipeline_digest(&snapshot.snapshot_id(), &filter, &s.pipeline_config);
    let templates = Templates::builtin();
    let report_id = report_id_for(&digest, &templates.template_version);
    {
        let mut jobs = s.reports.lock();
        match jobs.get(&report_id) {
            Some(ReportJob::Pending) => {
                return Ok((
                    StatusCode::ACCEPTED,
                    Json(status_of(&report_id, "pending", Some(&digest))),
                )
                    .into_response())
            }
            Some(ReportJob::Ready(_)) => {
                return Ok((
                    StatusCode::OK,
                    Json(status_of(&report_id, "ready", Some(&digest))),
                )
                    .into_response())
            }
            _ => {}
        }
        if let Some(report) = load_report(&s, &report_id) {
            jobs.insert(report_id.clone(), ReportJob::Ready(Arc::new(report)));
            return Ok((
                StatusCode::OK,
                Json(status_of(&report_id, "ready", Some(&digest))),
            )
                .into_response());
        }
        jobs.insert(report_id.clone(), ReportJob::Pending);
    }
    let services = s.clone();
    let id = report_id.clone();
    tokio::task::spawn_blocking(move || {
        let job = match build(&services, &snapshot, &filter, &templates) {
            Ok(report) => ReportJob::Ready(Arc::new(report)),
            Err(e) => {
                tracing::error!(report_id = %id, error = %e, "report build failed");
                ReportJob::Failed(e.to_string())
            }
        };
        services.reports.lock().insert(id, job);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(status_of(&report_id, "pending", Some(&digest))),
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportFormat {
    pub format: Option<String>,
}

pub async fn get_report(
    State(s): S,
    who: Principal,
    Path(id): Path<String>,
    Query(f): Query<ReportFormat>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let report = {
        let mut jobs = s.reports.lock();
        match jobs.get(&id) {
            Some(ReportJob::Pending) => {
                return Ok(
                    (StatusCode::ACCEPTED, Json(status_of(&id, "pending", None))).into_response(),
                )
            }
            Some(ReportJob::Failed(e)) => {
                return Err(ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "report_failed",
                    e.clone(),
                ))
            }
            Some(ReportJob::Ready(r)) => r.clone(),
            None => {
                let r = Arc::new(
                    load_report(&s, &id)
                        .ok_or_else(|| ApiError::not_found(format!("report {id}")))?,
                );
                jobs.insert(id.clone(), ReportJob::Ready(r.clone()));
                r
            }
        }
    };
    match f.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(report.as_ref().clone()).into_response()),
        "html" => Ok(Html(render_html(&report)).into_response()),
        "text" => Ok((
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            render_text(&report),
        )
            .into_response()),
        other => Err(ApiError::invalid(
            "invalid",
            format!("unknown format {other:?}"),
        )),
    }
}

pub async fn snapshot(State(s): S, who: Principal) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok(Json(s.store.snapshot()).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct SyncBody {
    pub driver_id: Option<String>,
}

pub async fn sync(
    State(s): S,
    who: Principal,
    body: Option<Json<SyncBody>>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    let only = body.and_then(|Json(b)| b.driver_id);
    if let Some(id) = &only {
        if s.store.sync_state(id).is_none() {
            return Err(ApiError::not_found(format!("linked driver {id}")));
        }
    }
    Ok(Json(s.ingestor.sync(only.as_deref()).await).into_response())
}

pub async fn refresh(State(s): S, who: Principal) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok(Json(s.ingestor.daily_refresh().await).into_response())
}

pub async fn audit(
    State(s): S,
    who: Principal,
    Query(q): Query<PageQuery>,
) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok(Json(q.apply(s.store.audit_log())?).into_response())
}

pub async fn export_jsonl(State(s): S, who: Principal) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        s.store.export_jsonl(),
    )
        .into_response())
}

pub async fn export_csv(State(s): S, who: Principal) -> Result<Response, ApiError> {
    who.require_admin()?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        s.store.export_csv(),
    )
        .into_response())
}
