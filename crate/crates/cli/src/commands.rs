use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{NaiveDate, NaiveTime, TimeZone, Utc};
use farelens_core::filter::{DateRange, FilterSpec};
use farelens_core::pipeline::{Bundle, BundleCache, CacheStatus, PipelineConfig, PipelineError};
use farelens_core::report::{build_report, write_report_dir};
use farelens_core::snapshot::Snapshot;
use farelens_provider::mock::account_id_for;
use farelens_provider::{
    CreateAccount, DateSpan, FeeModel, GeneratorParams, HttpProvider, HttpTransport, MockProvider,
    ProviderError,
};
use farelens_server::store::StoreError;
use farelens_server::{router, Datastore, ServerConfig, Services, SyncDelta};
use reqwest::Method;
use serde_json::json;
use tokio::net::TcpListener;

use crate::client::AdminClient;
use crate::error::CliError;
use crate::output::Out;
use crate::settings::Settings;
use crate::{PipelineArgs, ReportArgs, SeedArgs, ServeArgs, SyncArgs};

/// Provider mock state, shared by `seed` and `serve`.
pub const PROVIDER_FILE: &str = "provider.json";

fn utc_day(d: NaiveDate, t: NaiveTime) -> chrono::DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_time(t))
}

/// Seeded histories cover 2019 through 2024.
pub fn seed_span() -> DateSpan {
    DateSpan {
        start: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
        end: Utc.with_ymd_and_hms(2024, 12, 31, 23, 59, 59).unwrap(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Unavailable(format!("{}: {e}", path.display()))
}

pub fn seed(settings: &Settings, out: &Out, args: SeedArgs) -> Result<(), CliError> {
    let dir = settings.require_data_dir()?;
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(PROVIDER_FILE);
    let secret = settings.get("PROVIDER_WEBHOOK_SECRET").unwrap_or_default();
    let mock = MockProvider::new(secret)
        .persistent(&path)
        .map_err(io_err(&path))?;
    let params = GeneratorParams {
        n_rides: args.rides,
        date_span: seed_span(),
        surge_probability: args.surge_prob,
        airport_probability: args.airport_prob,
        fee_model: FeeModel::era_switching(utc_day(args.era_cutover, NaiveTime::MIN)),
        ..GeneratorParams::default()
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    for i in 0..args.drivers {
        let req = CreateAccount {
            driver_ref: format!("seed-{:04}", i + 1),
            seed: args.seed.wrapping_add(i as u64),
            params: params.clone(),
        };
        let (account, fresh) = match mock.create_account_sync(&req) {
            Ok(a) => (a, true),
            Err(ProviderError::Duplicate(_)) => {
                // rerunning the same seed is a no-op; anything else is a clash
                let existing = mock
                    .accounts()
                    .into_iter()
                    .find(|a| a.driver_ref == req.driver_ref);
                match existing {
                    Some(a)
                        if a.account_id == account_id_for(&req.driver_ref, req.seed)
                            && mock.history_len(&a.account_id) == Some(args.rides) =>
                    {
                        (a, false)
                    }
                    _ => {
                        return Err(CliError::Contract(format!(
                            "{} already holds {} with different settings",
                            path.display(),
                            req.driver_ref
                        )))
                    }
                }
            }
            Err(ProviderError::BadRequest(m)) => return Err(CliError::Usage(m)),
            Err(e) => return Err(CliError::Contract(e.to_string())),
        };
        out.emit(
            format!("account {} driver_ref={} rides={}", account.account_id, account.driver_ref, args.rides),
            json!({ "account_id": account.account_id, "driver_ref": account.driver_ref, "rides": args.rides, "created": fresh }),
        );
    }
    let digest = mock.state_digest();
    out.emit(
        format!("state_digest {digest}"),
        json!({ "state_digest": digest }),
    );
    Ok(())
}

pub async fn serve(settings: &Settings, out: &Out, args: ServeArgs) -> Result<(), CliError> {
    let host: IpAddr = match settings.get("BIND_HOST") {
        Some(h) => h
            .parse()
            .map_err(|_| CliError::Usage(format!("BIND_HOST {h:?} is not an IP address")))?,
        None => IpAddr::V4(Ipv4Addr::LOCALHOST),
    };
    let listener = TcpListener::bind(SocketAddr::new(host, args.port))
        .await
        .map_err(|e| CliError::Unavailable(format!("bind {host}:{}: {e}", args.port)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Unavailable(e.to_string()))?;
    let reach = if addr.ip().is_unspecified() {
        IpAddr::V4(Ipv4Addr::LOCALHOST)
    } else {
        addr.ip()
    };
    let local = format!("http://{}", SocketAddr::new(reach, addr.port()));

    let config = ServerConfig::from_lookup(|k| {
        settings
            .get(k)
            .or_else(|| (k == "BASE_URL").then(|| local.clone()))
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let refresh_secs: u64 = match settings.get("REFRESH_INTERVAL_SECS") {
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("REFRESH_INTERVAL_SECS {v:?} is not a number")))?,
        None => 86_400,
    };

    let mut mock = MockProvider::new(config.webhook_secret.clone())
        .with_transport(Arc::new(HttpTransport::new()));
    if let Some(dir) = &config.data_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(PROVIDER_FILE);
        mock = mock.persistent(&path).map_err(io_err(&path))?;
    }
    let mock = Arc::new(mock);
    mock.register_endpoint_sync(&format!("{}/webhooks/provider", config.base_url));

    // the API reaches the co-hosted provider over HTTP, exactly as it would a remote one
    let services = Services::open(config.clone(), Arc::new(HttpProvider::new(&local))).map_err(
        |e| match e {
            StoreError::Io(m) => CliError::Unavailable(m),
            other => CliError::Contract(other.to_string()),
        },
    )?;
    let app = farelens_provider::router(mock).merge(router(services.clone()));

    if refresh_secs > 0 {
        let ingestor = services.ingestor.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_secs(refresh_secs));
            every.tick().await;
            loop {
                every.tick().await;
                let deltas = ingestor.daily_refresh().await;
                let failed = deltas.iter().filter(|d| d.error.is_some()).count();
                tracing::info!(drivers = deltas.len(), failed, "scheduled refresh finished");
            }
        });
    }

    let data_dir = config.data_dir.as_ref().map(|d| d.display().to_string());
    out.emit(
        format!("ready {local} data_dir={}", data_dir.as_deref().unwrap_or("<memory>")),
        json!({ "event": "ready", "url": local, "base_url": config.base_url, "data_dir": data_dir }),
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| CliError::Unavailable(e.to_string()))?;
    out.emit("stopped", json!({ "event": "stopped" }));
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn delta_line(d: &SyncDelta) -> String {
    let phase = d.phase.map_or("none", |p| p.as_str());
    let mut line = format!(
        "driver {} action={} before={} after={} changed={} phase={phase}",
        d.driver_id, d.action, d.activities_before, d.activities_after, d.changed
    );
    if let Some(e) = &d.error {
        line.push_str(&format!(" error={e:?}"));
    }
    line
}

pub async fn sync(settings: &Settings, out: &Out, args: SyncArgs) -> Result<(), CliError> {
    let client = AdminClient::new(
        args.server.unwrap_or_else(|| settings.server_url()),
        settings.admin_key()?,
    );
    let value = client
        .call(
            Method::POST,
            "/admin/sync",
            Some(json!({ "driver_id": args.driver })),
        )
        .await?;
    let deltas: Vec<SyncDelta> = serde_json::from_value(value)
        .map_err(|e| CliError::Contract(format!("unexpected sync response: {e}")))?;
    for d in &deltas {
        out.emit(
            delta_line(d),
            serde_json::to_value(d).expect("delta serializes"),
        );
    }
    let failed = deltas.iter().filter(|d| d.retryable()).count();
    if failed > 0 {
        return Err(CliError::Unavailable(format!(
            "{failed} driver(s) did not sync; run sync again to resume"
        )));
    }
    Ok(())
}

/// Accepts affiliation names (any case) or ids.
fn resolve_affiliations(
    snapshot: &Snapshot,
    wanted: &[String],
) -> Result<Option<Vec<String>>, CliError> {
    if wanted.is_empty() {
        return Ok(None);
    }
    wanted
        .iter()
        .map(|w| {
            snapshot
                .affiliations
                .iter()
                .find(|a| a.affiliation_id == *w || a.name.eq_ignore_ascii_case(w.trim()))
                .map(|a| a.affiliation_id.clone())
                .ok_or_else(|| CliError::Contract(format!("unknown affiliation {w:?}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::Io { .. } => CliError::Unavailable(e.to_string()),
        other => CliError::Contract(other.to_string()),
    }
}

pub async fn pipeline_run(
    settings: &Settings,
    out: &Out,
    args: PipelineArgs,
) -> Result<(), CliError> {
    let snapshot: Snapshot = match &args.server {
        Some(server) => {
            let client = AdminClient::new(server.clone(), settings.admin_key()?);
            let value = client.call(Method::GET, "/admin/snapshot", None).await?;
            serde_json::from_value(value)
                .map_err(|e| CliError::Contract(format!("unexpected snapshot: {e}")))?
        }
        None => {
            let dir = settings.require_data_dir()?;
            Datastore::read_only(&dir)
                .map_err(|e| match e {
                    StoreError::NotFound(p) => {
                        CliError::Usage(format!("no datastore journal at {p}"))
                    }
                    other => CliError::Unavailable(other.to_string()),
                })?
                .snapshot()
        }
    };
    let filter = FilterSpec {
        affiliation_ids: resolve_affiliations(&snapshot, &args.affiliations)?,
        date_range: match (args.from, args.to) {
            (Some(from), Some(to)) => Some(DateRange {
                from: utc_day(from, NaiveTime::MIN),
                to: utc_day(
                    to,
                    NaiveTime::from_hms_milli_opt(23, 59, 59, 999).expect("valid time"),
                ),
            }),
            _ => None,
        },
        categories: None,
    }
    .canonical();
    let known = snapshot
        .affiliations
        .iter()
        .map(|a| a.affiliation_id.clone())
        .collect();
    filter
        .validate(&known)
        .map_err(|e| CliError::Contract(e.to_string()))?;

    let root = match args.out {
        Some(p) => p,
        None => settings.require_data_dir()?.join("bundles"),
    };
    let (bundle, dir, cache) = tokio::task::spawn_blocking(move || {
        BundleCache::new(root).run(&snapshot, &filter, &PipelineConfig::default())
    })
    .await
    .map_err(|e| CliError::Unavailable(e.to_string()))?
    .map_err(pipeline_err)?;
    let cache = match cache {
        CacheStatus::Hit => "hit",
        CacheStatus::Miss => "miss",
    };
    let report = &bundle.cleaning_report;
    out.emit(
        format!(
            "digest {}\ncache {cache}\nbundle {}\nrows input={} retained={}",
            bundle.digest(),
            dir.display(),
            report.input_count,
            report.retained_count
        ),
        json!({
            "digest": bundle.digest(),
            "cache": cache,
            "bundle": dir,
            "input_count": report.input_count,
            "retained_count": report.retained_count,
        }),
    );
    Ok(())
}

pub fn report_build(settings: &Settings, out: &Out, args: ReportArgs) -> Result<(), CliError> {
    if !args.bundle.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a bundle directory",
            args.bundle.display()
        )));
    }
    let bundle = Bundle::read_dir(&args.bundle).map_err(pipeline_err)?;
    let report = build_report(&bundle);
    let dir: PathBuf = match args.out {
        Some(p) => p,
        None => settings
            .require_data_dir()?
            .join("reports")
            .join(&report.report_id),
    };
    write_report_dir(&report, &bundle, &dir).map_err(pipeline_err)?;
    let sections: Vec<&str> = report.sections.iter().map(|s| s.key.as_str()).collect();
    out.emit(
        format!(
            "report {}\nreport_id {}\nsections {}",
            dir.display(),
            report.report_id,
            sections.join(",")
        ),
        json!({ "report": dir, "report_id": report.report_id, "sections": sections }),
    );
    Ok(())
}
