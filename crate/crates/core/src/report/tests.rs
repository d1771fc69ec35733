use super::*;
use crate::activity::fixtures::ride;
use crate::activity::RideActivity;
use crate::compare::HistogramBin;
use crate::filter::FilterSpec;
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::snapshot::{AffiliationMeta, DriverMeta, Snapshot, SurveyAnswers};
use chrono::{Duration, TimeZone};

fn at(mut r: RideActivity, days: i64) -> RideActivity {
    let t = Utc.with_ymd_and_hms(2023, 1, 2, 8, 0, 0).unwrap() + Duration::days(days);
    r.start_time = Some(t);
    r.end_time = Some(t + Duration::minutes(20));
    r
}

fn full_snapshot(with_survey: bool) -> Snapshot {
    let mut activities = Vec::new();
    for i in 0..40i64 {
        let driver = format!("d{}", i % 4);
        let surge = i % 3 == 0;
        let airport = i % 5 == 0;
        let fees = 500 + if surge { 150 } else { 0 } + if airport { 40 } else { 0 } + (i % 7) * 10;
        let mut r = at(
            ride(&format!("r{i:02}"), &driver, 2000 + i * 10, fees, 100),
            i * 2,
        );
        r.surge_flag = surge;
        if airport {
            r.start_zip = Some("80249".into());
        }
        r.distance_miles = Some(1.0 + (i % 12) as f64 * 2.5);
        activities.push(r.seal());
    }
    Snapshot {
        activities,
        drivers: (0..4)
            .map(|i| DriverMeta {
                driver_id: format!("d{i}"),
                affiliation_id: Some("aff".into()),
            })
            .collect(),
        affiliations: vec![AffiliationMeta {
            affiliation_id: "aff".into(),
            name: "Drivers United".into(),
            region_tag: Some("CO".into()),
        }],
        survey_responses: if with_survey {
            vec![
                SurveyAnswers {
                    driver_id: "d0".into(),
                    estimated_take_rate_pct: 50.0,
                    fair_take_rate_pct: 20.0,
                },
                SurveyAnswers {
                    driver_id: "d1".into(),
                    estimated_take_rate_pct: 60.0,
                    fair_take_rate_pct: 22.0,
                },
            ]
        } else {
            Vec::new()
        },
    }
}

fn bundle(with_survey: bool) -> Bundle {
    run_pipeline(
        &full_snapshot(with_survey),
        &FilterSpec::default(),
        &PipelineConfig::default(),
    )
    .unwrap()
}

#[test]
fn six_sections_in_order_all_populated() {
    let report = build_report(&bundle(true));
    let keys: Vec<_> = report.sections.iter().map(|s| s.key).collect();
    assert_eq!(keys, SectionKey::ORDER);
    for s in &report.sections {
        assert!(
            !s.insufficient_data,
            "{:?} unexpectedly insufficient",
            s.key
        );
        assert!(s.figure_series.is_some());
        assert!(!s.takeaway_text.is_empty());
        assert!(
            !s.takeaway_text.contains('{'),
            "unfilled slot in {:?}",
            s.takeaway_text
        );
    }
}

#[test]
fn missing_surveys_mark_only_perception_insufficient() {
    let report = build_report(&bundle(false));
    assert_eq!(report.sections.len(), 6);
    let p = report.section(SectionKey::PerceptionVsActual).unwrap();
    assert!(p.insufficient_data);
    assert!(p.figure_series.is_none());
    assert!(p.takeaway_text.starts_with("Not enough data"));
    assert_eq!(
        report
            .sections
            .iter()
            .filter(|s| s.insufficient_data)
            .count(),
        1
    );
}

#[test]
fn empty_bundle_still_has_six_sections() {
    let b = run_pipeline(
        &Snapshot::default(),
        &FilterSpec::default(),
        &PipelineConfig::default(),
    )
    .unwrap();
    let report = build_report(&b);
    assert_eq!(report.sections.len(), 6);
    assert!(report.sections.iter().all(|s| s.insufficient_data));
    render_html(&report);
    render_text(&report);
}

fn with_comparison_p(mut b: Bundle, p: f64) -> Bundle {
    for c in &mut b.comparisons {
        c.p_value = Some(p);
        c.significant_at_05 = p < 0.05;
    }
    b
}

#[test]
fn non_significant_takeaway_does_not_claim_significance() {
    let report = build_report(&with_comparison_p(bundle(true), 0.20));
    for key in [SectionKey::AirportComparison, SectionKey::SurgeComparison] {
        let text = &report.section(key).unwrap().takeaway_text;
        assert!(!text.contains("statistically significant"), "{text}");
        assert!(text.contains("p = 0.200"), "{text}");
    }
}

#[test]
fn significant_takeaway_reports_small_p() {
    let report = build_report(&with_comparison_p(bundle(true), 0.0001));
    let text = &report
        .section(SectionKey::SurgeComparison)
        .unwrap()
        .takeaway_text;
    assert!(text.contains("statistically significant"), "{text}");
    assert!(text.contains("p < 0.001"), "{text}");
    assert!(text.starts_with("Surge rides"), "{text}");
}

#[test]
fn html_is_self_contained_and_escaped() {
    let mut b = bundle(true);
    b.comparisons[0].label_b = "<script>alert(1)</script>".into();
    b.comparisons[0].histogram_a = vec![HistogramBin {
        lower_pct: 25.0,
        count: 3,
    }];
    let html = render_html(&build_report(&b));
    for needle in [
        "http://", "https://", "xmlns", "<script", "src=", "href=", "@import",
    ] {
        assert!(!html.contains(needle), "found {needle}");
    }
    assert!(html.contains("&lt;script&gt;"));
    assert_eq!(html.matches("<section").count(), 6);
    assert!(html.contains("<svg"));
}

#[test]
fn rebuild_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let b1 = bundle(true);
    let b2 = bundle(true);
    let m1 = write_report_dir(&build_report(&b1), &b1, dir_a.path()).unwrap();
    let m2 = write_report_dir(&build_report(&b2), &b2, dir_b.path()).unwrap();
    assert_eq!(m1, m2);
    for name in m1.files.keys().map(String::as_str).chain(["manifest.json"]) {
        assert_eq!(
            std::fs::read(dir_a.path().join(name)).unwrap(),
            std::fs::read(dir_b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn report_id_tracks_digest() {
    let a = build_report(&bundle(true));
    let b = build_report(&bundle(false));
    assert_ne!(a.pipeline_digest, b.pipeline_digest);
    assert_ne!(a.report_id, b.report_id);
    assert!(a.report_id.starts_with("rpt_"));
    assert_eq!(a.generated_at, bundle(true).manifest.data_as_of);
}

#[test]
fn csv_headers_and_values_round_trip() {
    let b = bundle(true);
    let files = export_csv(&b);
    let get = |name: &str| {
        files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, body)| body.as_bytes())
            .unwrap()
    };

    let mut rdr = csv::Reader::from_reader(get("summary.csv"));
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, SUMMARY_COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "All");
    let all = b.summary("all").unwrap();
    assert_eq!(rows[0][2].parse::<usize>().unwrap(), all.n_rides);
    let rate: f64 = rows[0][9].parse().unwrap();
    assert!((rate - all.take_rate_mean_of_ratios).abs() <= 0.005);

    let mut rdr = csv::Reader::from_reader(get("regions.csv"));
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, REGION_COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "CO");

    let weekly = csv::Reader::from_reader(get("take_rate_over_time.csv"))
        .records()
        .count();
    assert_eq!(weekly, b.weekly_series.points.len());
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "summary.csv",
            "regions.csv",
            "take_rate_over_time.csv",
            "perception_vs_actual.csv",
            "comparisons.csv",
            "rate_per_mile.csv"
        ]
    );
}

#[test]
fn report_json_round_trips() {
    let report = build_report(&bundle(true));
    let json = serde_json::to_string(&report).unwrap();
    let back: Report = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
