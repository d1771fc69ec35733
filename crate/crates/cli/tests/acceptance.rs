//! Release gate. Each criterion runs at its stated tolerance and time limit
//! and prints one `PASS` or `FAIL` line; the test fails if any line fails.
//!
//! Run alone with `cargo test -p farelens-cli --test acceptance -- --nocapture`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::body::Body;
use axum::http::{Method, Request};
use chrono::{NaiveDate, TimeZone, Utc};
use farelens_core::activity::RideActivity;
use farelens_core::clean::{clean, ExclusionReason};
use farelens_core::filter::FilterSpec;
use farelens_core::money::Usd;
use farelens_core::pipeline::{run_pipeline, PipelineConfig};
use farelens_core::snapshot::{DriverMeta, Snapshot};
use farelens_core::stats::{mann_whitney_u, MannWhitneyMethod};
use farelens_core::summary::summarize_group;
use farelens_core::take_rate::{compute_take_rate, compute_take_rate_dollars};
use farelens_provider::generator::generate_history;
use farelens_provider::mock::account_id_for;
use farelens_provider::{
    sign, CreateAccount, DateSpan, GeneratorParams, MockProvider, Schedule, WebhookEvent,
    WebhookTransport,
};
use farelens_server::store::{AffiliationChoice, Enrollment, JOURNAL_FILE};
use farelens_server::survey::sms::MemorySms;
use farelens_server::survey::Answers;
use farelens_server::{
    router, Datastore, IngestConfig, Ingestor, ServerConfig, Services, SurveyService,
};
use farelens_testkit::{
    defect_fixture, oracle_summary, permutation_p_exact, random_activity, random_valid_ride, ride,
    DEFECT_COUNTS,
};
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Line {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn criterion(name: &'static str, limit: Duration, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.2?}, limit {limit:?}")),
        Err(e) => (false, e),
    };
    let line = Line {
        name,
        passed,
        detail: format!("{detail} [{elapsed:.2?} of {limit:?}]"),
    };
    println!(
        "{} {:<28} {}",
        if line.passed { "PASS" } else { "FAIL" },
        line.name,
        line.detail
    );
    line
}

#[test]
fn acceptance() {
    let lines = [
        criterion("formula_fidelity", Duration::from_secs(1), formula_fidelity),
        criterion(
            "cleaning_partition",
            Duration::from_secs(5),
            cleaning_partition,
        ),
        criterion(
            "aggregation_oracle",
            Duration::from_secs(10),
            aggregation_oracle,
        ),
        criterion(
            "statistical_calibration",
            Duration::from_secs(60),
            statistical_calibration,
        ),
        criterion(
            "qualitative_shape",
            Duration::from_secs(60),
            qualitative_shape,
        ),
        criterion("end_to_end", Duration::from_secs(120), end_to_end),
        criterion("security_suite", Duration::from_secs(120), security_suite),
    ];
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed).map(|l| l.name).collect();
    println!(
        "acceptance: {} of {} passed",
        lines.len() - failed.len(),
        lines.len()
    );
    assert!(failed.is_empty(), "failed: {failed:?}");
}

// ---- formula ----

fn formula_fidelity() -> Check {
    let rate = compute_take_rate_dollars(7.44, 24.71, 0.0).map_err(|e| e.to_string())?;
    let pct = rate.percent().ok_or("undefined take rate")?;
    ensure!(
        rate.rounded() == Some(30.11),
        "rounded {:?}, expected 30.11",
        rate.rounded()
    );
    ensure!(
        (pct - 30.0).abs() <= 0.2,
        "{pct} is more than 0.2 pp from 30"
    );
    let cents = compute_take_rate(Usd::from_cents(744), Usd::from_cents(2471), Usd::ZERO);
    ensure!(
        cents.percent() == Some(pct),
        "cent and dollar paths disagree"
    );
    Ok(format!(
        "take rate {pct:.4}% (|diff| {:.3} pp)",
        (pct - 30.0).abs()
    ))
}

// ---- cleaning ----

fn cleaning_partition() -> Check {
    let rows = defect_fixture();
    let (retained, report) = clean(&rows);
    let got = [
        report.excluded_count(ExclusionReason::NegativeTakeRate),
        report.excluded_count(ExclusionReason::NonRideshare),
        report.excluded_count(ExclusionReason::Cancelled),
        report.excluded_count(ExclusionReason::MissingFields),
    ];
    let want = [
        DEFECT_COUNTS.negative_take_rate,
        DEFECT_COUNTS.non_rideshare,
        DEFECT_COUNTS.cancelled,
        DEFECT_COUNTS.missing_fields,
    ];
    ensure!(rows.len() == 100, "fixture has {} rows", rows.len());
    ensure!(
        retained.len() == 72 && report.retained_count == 72,
        "retained {}",
        retained.len()
    );
    ensure!(
        got == [12, 8, 5, 3] && got == want,
        "per-reason counts {got:?}"
    );

    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(proptest::num::u64::ANY, 0usize..80), |(seed, n)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<_> = (0..n).map(|i| random_activity(&mut rng, i)).collect();
            let (kept, report) = clean(&rows);
            proptest::prop_assert_eq!(report.input_count, n);
            proptest::prop_assert_eq!(kept.len(), report.retained_count);
            proptest::prop_assert_eq!(n, report.retained_count + report.total_excluded());
            Ok(())
        })
        .map_err(|e| format!("property failed: {e}"))?;
    Ok("fixture 72 retained, {12, 8, 5, 3}; 1000 random partitions hold".into())
}

// ---- aggregation ----

fn aggregation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let mut worst_money = 0.0f64;
    let mut worst_pp = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(0..=20);
        let rows: Vec<RideActivity> = (0..n)
            .map(|i| {
                if rng.gen_bool(0.75) {
                    random_valid_ride(&mut rng, case * 100 + i, 4)
                } else {
                    random_activity(&mut rng, case * 100 + i)
                }
            })
            .collect();
        let (retained, _) = clean(&rows);
        // the oracle selects rows and recomputes everything from raw fields
        let analyzable: Vec<RideActivity> = rows
            .iter()
            .filter(|r| {
                r.is_analyzable() && {
                    let fare = r.rider_price_usd.unwrap().cents() - r.tips_usd.unwrap().cents();
                    fare > 0 && r.platform_fees_usd.unwrap().cents() >= 0
                }
            })
            .cloned()
            .collect();
        match (
            summarize_group("all", &retained),
            oracle_summary(&analyzable),
        ) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                ensure!(
                    g.n_rides == w.n_rides && g.n_drivers == w.n_drivers,
                    "case {case}: counts differ"
                );
                for (a, b) in [
                    (g.mean_rider_price_usd, w.mean_price),
                    (g.mean_fees_usd, w.mean_fees),
                    (g.mean_base_pay_usd, w.mean_base),
                    (g.mean_tips_usd, w.mean_tips),
                ] {
                    worst_money = worst_money.max((a - b).abs());
                }
                for (a, b) in [
                    (g.take_rate_mean_of_ratios, w.mean_of_ratios),
                    (g.take_rate_ratio_of_means, w.ratio_of_means),
                ] {
                    worst_pp = worst_pp.max((a - b).abs());
                }
            }
            (g, w) => {
                return Err(format!(
                    "case {case}: presence differs {:?} vs {:?}",
                    g.is_some(),
                    w.is_some()
                ))
            }
        }
    }
    ensure!(worst_money < 0.005, "money off by {worst_money}");
    ensure!(worst_pp <= 0.01, "take rate off by {worst_pp} pp");
    Ok(format!(
        "200 snapshots; worst ${worst_money:.2e}, {worst_pp:.2e} pp"
    ))
}

// ---- statistics ----

fn sample<R: Rng>(rng: &mut R, n: usize, mean: f64, round_to: f64) -> Vec<f64> {
    let normal = Normal::new(mean, 6.0).unwrap();
    (0..n)
        .map(|_| (normal.sample(rng) / round_to).round() * round_to)
        .collect()
}

fn statistical_calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a7);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (na, nb) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let shift = rng.gen_range(0.0..8.0);
        let round_to = if case % 3 == 0 { 2.0 } else { 0.01 };
        let a = sample(&mut rng, na, 30.0, round_to);
        let b = sample(&mut rng, nb, 30.0 + shift, round_to);
        let got = mann_whitney_u(&a, &b).ok_or("no result")?;
        ensure!(
            got.method == MannWhitneyMethod::Exact,
            "case {case} did not use the exact method"
        );
        worst = worst.max((got.p_value - permutation_p_exact(&a, &b)).abs());
    }
    ensure!(worst <= 0.005, "worst |p - oracle| {worst}");
    let rejections = (0..100u64)
        .filter(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let a = sample(&mut rng, 40, 30.0, 0.01);
            let b = sample(&mut rng, 40, 30.0, 0.01);
            mann_whitney_u(&a, &b).is_some_and(|r| r.p_value < 0.05)
        })
        .count();
    let rate = rejections as f64 / 100.0;
    ensure!((rate - 0.05).abs() <= 0.05, "null rejection rate {rate}");
    Ok(format!(
        "worst |p diff| {worst:.1e}; null rejection {rate:.2}"
    ))
}

// ---- shape on synthetic data ----

fn qualitative_shape() -> Check {
    let params = GeneratorParams {
        n_rides: 1000,
        date_span: DateSpan {
            start: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2024, 12, 31, 23, 59, 59).unwrap(),
        },
        ..GeneratorParams::default()
    };
    let mut snapshot = Snapshot::default();
    for d in 0..5u64 {
        let account = account_id_for(&format!("shape-{d}"), 500 + d);
        snapshot
            .activities
            .extend(generate_history(&account, &params, 500 + d));
        snapshot.drivers.push(DriverMeta {
            driver_id: account,
            affiliation_id: None,
        });
    }
    let bundle = run_pipeline(
        &snapshot,
        &FilterSpec::default(),
        &PipelineConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let peak = bundle.weekly_series.peak().ok_or("empty weekly series")?;
    let era = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
        ..=NaiveDate::from_ymd_opt(2022, 12, 31).unwrap();
    ensure!(
        era.contains(&peak.week_start),
        "peak week {} is outside 2021-2022",
        peak.iso_week
    );
    let mut notes = vec![format!(
        "peak {} at {:.1}%",
        peak.iso_week, peak.mean_take_rate_pct
    )];
    for label in ["surge", "airport"] {
        let c = bundle
            .comparison(label)
            .ok_or(format!("no {label} comparison"))?;
        let (a, b) = (c.mean_a.unwrap_or(f64::NAN), c.mean_b.unwrap_or(f64::NAN));
        ensure!(
            c.significant_at_05,
            "{label}: not significant (p = {:?})",
            c.p_value
        );
        ensure!(a > b, "{label}: mean {a} is not above {b}");
        notes.push(format!(
            "{label} {a:.1} vs {b:.1} p={:.1e}",
            c.p_value.unwrap_or(f64::NAN)
        ));
    }
    Ok(notes.join("; "))
}

// ---- end to end through the binary ----

const ADMIN: &str = "acceptance-admin-key-0123";
const SECRET: &str = "acceptance-webhook-secret";

fn farelens(data: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_farelens"));
    cmd.env("DATA_DIR", data)
        .env("ADMIN_KEY", ADMIN)
        .env("PROVIDER_WEBHOOK_SECRET", SECRET)
        .env("SMS_ADAPTER", "transcript")
        .env("REFRESH_INTERVAL_SECS", "0")
        .env_remove("BASE_URL")
        .env_remove("SERVER_URL")
        .env("RUST_LOG", "warn");
    cmd
}

fn run_json(cmd: &mut Command) -> Result<Vec<Value>, String> {
    let out = cmd.arg("--json").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{:?} exited {}: {}",
            cmd,
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| format!("bad output line {l:?}: {e}")))
        .collect()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path();

    let seeded = run_json(farelens(data).args([
        "seed",
        "--drivers",
        "3",
        "--rides",
        "150",
        "--seed",
        "42",
    ]))?;
    let accounts: Vec<String> = seeded
        .iter()
        .filter_map(|v| v["account_id"].as_str().map(String::from))
        .collect();
    ensure!(
        accounts.len() == 3,
        "seed printed {} accounts",
        accounts.len()
    );

    let mut child = farelens(data)
        .args(["serve", "--port", "0", "--json"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut ready = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut ready)
        .map_err(|e| e.to_string())?;
    let server = Server(child);
    let ready: Value =
        serde_json::from_str(&ready).map_err(|e| format!("readiness line {ready:?}: {e}"))?;
    ensure!(ready["event"] == "ready", "unexpected first line {ready}");
    let url = ready["url"].as_str().unwrap().to_string();
    let http = reqwest::blocking::Client::new();

    let mut drivers = Vec::new();
    for (i, account) in accounts.iter().enumerate() {
        let phone = format!("+1720555{:04}", 100 + i);
        let enrolled: Value = http
            .post(format!("{url}/drivers"))
            .json(&json!({
                "display_name": format!("Driver {i}"),
                "phone": phone,
                "affiliation_name": if i == 0 { "Front Range" } else { "Metro" },
                "consent": {"consented": true, "consent_version": "v1"}
            }))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| format!("enroll: {e}"))?;
        let id = enrolled["driver_id"].as_str().unwrap().to_string();
        let token = enrolled["token"].as_str().unwrap().to_string();
        let resp = http
            .post(format!("{url}/drivers/{id}/link"))
            .bearer_auth(&token)
            .json(&json!({ "account_id": account }))
            .send()
            .map_err(|e| e.to_string())?;
        ensure!(resp.status() == 202, "link answered {}", resp.status());
        drivers.push((id, token, phone));
    }
    for (id, token, _) in &drivers {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let st: Value = http
                .get(format!("{url}/drivers/{id}/status"))
                .bearer_auth(token)
                .send()
                .and_then(|r| r.json())
                .map_err(|e| e.to_string())?;
            if st["phase"] == "synced" {
                ensure!(
                    st["activities_ingested"] == 150,
                    "{id} ingested {}",
                    st["activities_ingested"]
                );
                break;
            }
            ensure!(Instant::now() < deadline, "{id} stuck in {}", st["phase"]);
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    let deltas = run_json(farelens(data).args(["sync", "--server", &url]))?;
    ensure!(
        deltas.len() == 3 && deltas.iter().all(|d| d["error"].is_null()),
        "sync: {deltas:?}"
    );

    // exactly one invite per driver, then answer each survey
    let sent = farelens_server::survey::sms::TranscriptSms::read(data.join("sms_transcript.jsonl"))
        .map_err(|e| e.to_string())?;
    let mut per_phone: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &sent {
        *per_phone.entry(m.phone.as_str()).or_default() += 1;
    }
    ensure!(
        drivers
            .iter()
            .all(|(_, _, p)| per_phone.get(p.as_str()) == Some(&1))
            && sent.len() == 3,
        "invites per phone {per_phone:?}"
    );
    for (i, m) in sent.iter().enumerate() {
        let link = m
            .body
            .split_whitespace()
            .find(|w| w.contains("/survey/"))
            .ok_or("no link in message")?;
        let resp = http
            .post(link)
            .json(&Answers {
                estimated_take_rate_pct: 20.0 + i as f64,
                fair_take_rate_pct: 15.0,
                factors_text: "airport".into(),
            })
            .send()
            .map_err(|e| e.to_string())?;
        ensure!(
            resp.status() == 201,
            "survey submit answered {}",
            resp.status()
        );
    }
    let (_, token, _) = &drivers[0];
    let summary: Value = http
        .get(format!("{url}/me/summary"))
        .bearer_auth(token)
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    ensure!(summary["status"] == "ready", "summary {summary}");

    let first = run_json(farelens(data).args(["pipeline", "run", "--server", &url]))?;
    let bundle = first[0]["bundle"]
        .as_str()
        .ok_or("no bundle path")?
        .to_string();
    let built = run_json(farelens(data).args(["report", "build", "--bundle", &bundle]))?;
    let report_dir = built[0]["report"].as_str().ok_or("no report path")?;
    let report: Value = serde_json::from_slice(
        &std::fs::read(Path::new(report_dir).join("report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let sections = report["sections"].as_array().map_or(0, Vec::len);
    ensure!(sections == 6, "report has {sections} sections");

    let second = run_json(farelens(data).args(["pipeline", "run", "--server", &url]))?;
    ensure!(
        first[0]["cache"] == "miss" && second[0]["cache"] == "hit",
        "cache {} then {}",
        first[0]["cache"],
        second[0]["cache"]
    );
    ensure!(
        first[0]["digest"] == second[0]["digest"],
        "digest changed on rerun"
    );
    drop(server);
    Ok(format!(
        "3 drivers, 3 invites, 6 sections, digest {}",
        &first[0]["digest"].as_str().unwrap()[..12]
    ))
}

// ---- security ----

#[derive(Default)]
struct Capture(parking_lot::Mutex<Vec<WebhookEvent>>);

#[async_trait]
impl WebhookTransport for Capture {
    async fn post(&self, _url: &str, body: Vec<u8>, _sig: String) -> Result<(), String> {
        self.0
            .lock()
            .push(serde_json::from_slice(&body).map_err(|e| e.to_string())?);
        Ok(())
    }
}

const MARKER: &str = "secret-a-";

struct Cell {
    app: axum::Router,
    store: Arc<Datastore>,
    a: String,
    tokens: [Option<String>; 4],
}

fn enrollment(name: &str, affiliation: &str) -> Enrollment {
    Enrollment {
        display_name: name.into(),
        phone: "+13035550100".into(),
        affiliation: AffiliationChoice::New {
            name: affiliation.into(),
            region_tag: None,
        },
        consented: true,
        consent_version: "v1".into(),
    }
}

/// Fresh service; driver A owns marked rows, B owns plain ones.
fn cell() -> Cell {
    let store = Arc::new(Datastore::in_memory());
    let provider = Arc::new(MockProvider::new(SECRET).with_transport(Arc::new(Capture::default())));
    let services = Services::new(
        ServerConfig::ephemeral(ADMIN, SECRET),
        store.clone(),
        provider,
        Arc::new(MemorySms::default()),
    );
    let a = store
        .enroll(enrollment("Alice", "North"), Utc::now())
        .unwrap()
        .driver_id;
    let b = store
        .enroll(enrollment("Bob", "South"), Utc::now())
        .unwrap()
        .driver_id;
    store
        .put_activities(
            &a,
            (0..12)
                .map(|i| ride(&format!("{MARKER}{i}"), &a, 2000 + i, 500, 0))
                .collect(),
        )
        .unwrap();
    store
        .put_activities(
            &b,
            (0..12)
                .map(|i| ride(&format!("b-{i}"), &b, 1900 + i, 400, 0))
                .collect(),
        )
        .unwrap();
    let token = |d: &str| {
        store
            .issue_driver_token(d, chrono::Duration::days(1), Utc::now())
            .unwrap()
    };
    let tokens = [
        None,
        Some(token(&a)),
        Some(token(&b)),
        Some(ADMIN.to_string()),
    ];
    Cell {
        app: router(services),
        store,
        a,
        tokens,
    }
}

async fn send(
    app: &axum::Router,
    method: Method,
    uri: &str,
    token: Option<&str>,
    body: Option<&Value>,
) -> (u16, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

/// Callers in order: none, driver A (self), driver B (other), admin.
fn matrix() -> Vec<(Method, &'static str, Option<Value>, [u16; 4])> {
    let enroll = json!({"display_name": "N", "phone": "+13035550199", "consent": {"consented": true, "consent_version": "v1"}});
    let answers = json!({"estimated_take_rate_pct": 30, "fair_take_rate_pct": 20});
    let token = "/survey/00000000000000000000000000000000";
    vec![
        (Method::GET, "/health", None, [200; 4]),
        (Method::GET, "/affiliations", None, [200; 4]),
        (Method::POST, "/drivers", Some(enroll), [201; 4]),
        (
            Method::POST,
            "/webhooks/provider",
            Some(json!({})),
            [401; 4],
        ),
        (Method::GET, token, None, [410; 4]),
        (Method::POST, token, Some(answers), [410; 4]),
        (
            Method::GET,
            "/drivers/{A}/status",
            None,
            [401, 200, 404, 200],
        ),
        (
            Method::POST,
            "/drivers/{A}/link",
            Some(json!({"seed": 1, "params": {"n_rides": 3}})),
            [401, 202, 404, 202],
        ),
        (Method::GET, "/me", None, [401, 200, 200, 403]),
        (Method::GET, "/me/activities", None, [401, 200, 200, 403]),
        (Method::GET, "/me/summary", None, [401, 423, 423, 403]),
        (Method::POST, "/me/delete", None, [401, 200, 200, 403]),
        (
            Method::POST,
            "/admin/affiliations",
            Some(json!({"name": "East"})),
            [401, 403, 403, 201],
        ),
        (Method::GET, "/admin/drivers", None, [401, 403, 403, 200]),
        (
            Method::DELETE,
            "/admin/drivers/{A}",
            None,
            [401, 403, 403, 200],
        ),
        (Method::GET, "/admin/activities", None, [401, 403, 403, 200]),
        (Method::GET, "/admin/aggregates", None, [401, 403, 403, 200]),
        (
            Method::POST,
            "/admin/reports",
            Some(json!({})),
            [401, 403, 403, 202],
        ),
        (
            Method::GET,
            "/admin/reports/rpt_none",
            None,
            [401, 403, 403, 404],
        ),
        (Method::GET, "/admin/snapshot", None, [401, 403, 403, 200]),
        (
            Method::POST,
            "/admin/sync",
            Some(json!({})),
            [401, 403, 403, 200],
        ),
        (Method::POST, "/admin/refresh", None, [401, 403, 403, 200]),
        (Method::GET, "/admin/audit", None, [401, 403, 403, 200]),
        (
            Method::GET,
            "/admin/export/activities.jsonl",
            None,
            [401, 403, 403, 200],
        ),
        (
            Method::GET,
            "/admin/export/activities.csv",
            None,
            [401, 403, 403, 200],
        ),
    ]
}

async fn authorization_matrix() -> Result<usize, String> {
    let mut cells = 0;
    for (method, path, body, expect) in matrix() {
        for (i, want) in expect.iter().enumerate() {
            let c = cell();
            let uri = path.replace("{A}", &c.a);
            let (status, text) = send(
                &c.app,
                method.clone(),
                &uri,
                c.tokens[i].as_deref(),
                body.as_ref(),
            )
            .await;
            ensure!(
                status == *want,
                "{method} {path} caller {i}: {status}, want {want}"
            );
            ensure!(
                i == 1 || i == 3 || !text.contains(MARKER),
                "{method} {path} caller {i} saw driver A rows"
            );
            cells += 1;
        }
    }
    Ok(cells)
}

async fn deletion_scan() -> Result<(), String> {
    let c = cell();
    let surveys = SurveyService::new(c.store.clone(), Arc::new(MemorySms::default()), "http://x");
    c.store
        .link(&c.a, "acct_a", Utc::now())
        .map_err(|e| e.to_string())?;
    let url = surveys.issue_invite(&c.a).map_err(|e| e.to_string())?.url;
    let token = url.rsplit('/').next().unwrap();
    surveys
        .submit(
            token,
            &Answers {
                estimated_take_rate_pct: 40.0,
                fair_take_rate_pct: 20.0,
                factors_text: String::new(),
            },
        )
        .map_err(|e| e.to_string())?;
    let (status, _) = send(
        &c.app,
        Method::POST,
        "/me/delete",
        c.tokens[1].as_deref(),
        None,
    )
    .await;
    ensure!(status == 200, "delete answered {status}");
    let left = c.store.scan_driver(&c.a);
    ensure!(left.total() == 0, "rows left after deletion: {left:?}");
    ensure!(c.store.is_tombstoned(&c.a), "no tombstone");
    Ok(())
}

/// Replays `order` onto a copy of the enrolled-and-linked journal.
async fn replay_digest(
    journal: &[u8],
    mock: &Arc<MockProvider>,
    order: Vec<&WebhookEvent>,
) -> String {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(JOURNAL_FILE), journal).unwrap();
    let store = Arc::new(Datastore::open(dir.path()).unwrap());
    let surveys = Arc::new(SurveyService::new(
        store.clone(),
        Arc::new(MemorySms::default()),
        "http://x",
    ));
    let ing = Ingestor::new(
        store.clone(),
        mock.clone(),
        surveys,
        SECRET,
        IngestConfig::default(),
    );
    for e in order {
        let body = e.body();
        ing.handle_webhook(&body, Some(&sign(SECRET.as_bytes(), &body)))
            .await
            .unwrap();
    }
    store.state_digest()
}

async fn replay_convergence() -> Result<usize, String> {
    let template = tempfile::tempdir().map_err(|e| e.to_string())?;
    let capture = Arc::new(Capture::default());
    let mock = Arc::new(MockProvider::new(SECRET).with_transport(capture.clone()));
    mock.register_endpoint_sync("http://consumer/webhooks/provider");
    let mut logs: Vec<Vec<WebhookEvent>> = Vec::new();
    {
        let store = Datastore::open(template.path()).map_err(|e| e.to_string())?;
        for d in 0..3u64 {
            let driver = store
                .enroll(enrollment(&format!("D{d}"), "Org"), Utc::now())
                .unwrap()
                .driver_id;
            let params = GeneratorParams {
                n_rides: 30 + 10 * d as usize,
                ..GeneratorParams::default()
            };
            let account = mock
                .create_account_sync(&CreateAccount {
                    driver_ref: driver.clone(),
                    seed: 70 + d,
                    params,
                })
                .map_err(|e| e.to_string())?
                .account_id;
            store
                .link(&driver, &account, Utc::now())
                .map_err(|e| e.to_string())?;
            mock.emit_events(&account, Schedule::Staged { batches: 3 })
                .await
                .map_err(|e| e.to_string())?;
            let gig = mock
                .list_gigs_sync(&account, None, 10)
                .map_err(|e| e.to_string())?
                .gigs[3]
                .clone();
            mock.amend_tips(&account, &gig.activity_id, Usd::from_cents(275))
                .await
                .map_err(|e| e.to_string())?;
            mock.emit_events(&account, Schedule::Daily { rides: 4 })
                .await
                .map_err(|e| e.to_string())?;
            logs.push(std::mem::take(&mut *capture.0.lock()));
        }
    }
    let journal = std::fs::read(template.path().join(JOURNAL_FILE)).map_err(|e| e.to_string())?;

    let clean_digest = replay_digest(&journal, &mock, logs.iter().flatten().collect()).await;
    let runs = 100;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queues: Vec<VecDeque<&WebhookEvent>> = logs
            .iter()
            .map(|log| {
                let mut q = VecDeque::new();
                for (i, e) in log.iter().enumerate() {
                    q.push_back(e);
                    for _ in 0..rng.gen_range(0..3) {
                        q.push_back(&log[rng.gen_range(0..=i)]);
                    }
                }
                q
            })
            .collect();
        let mut order = Vec::new();
        loop {
            let live: Vec<usize> = (0..queues.len())
                .filter(|&i| !queues[i].is_empty())
                .collect();
            let Some(&pick) = live.choose(&mut rng) else {
                break;
            };
            order.push(queues[pick].pop_front().unwrap());
        }
        let got = replay_digest(&journal, &mock, order).await;
        ensure!(got == clean_digest, "shuffle {seed} diverged");
    }
    Ok(runs as usize)
}

fn security_suite() -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let cells = authorization_matrix().await?;
        deletion_scan().await?;
        let runs = replay_convergence().await?;
        Ok(format!(
            "{cells} matrix cells; deletion scan empty; {runs} replays match the clean digest"
        ))
    })
}
