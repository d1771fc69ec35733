//! Organizer-facing reports built from a pipeline bundle.
//!
//! Each report has six sections in a fixed order. A section whose input is
//! missing is kept and marked as insufficient data. Wording comes from a
//! versioned template file; templates only ever receive aggregate values.

mod csv_export;
mod html;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::compare::ComparisonResult;
use crate::digest::{sha256_hex, DigestBuilder};
use crate::filter::FilterSpec;
use crate::perception::PerceptionComparison;
use crate::pipeline::{Bundle, PipelineError, SUMMARY_GROUP_ALL};
use crate::series::{DistanceBin, WeekPoint};
use crate::summary::AggregateSummary;

pub use csv_export::{export_csv, REGION_COLUMNS, SUMMARY_COLUMNS};
pub use html::{render_html, render_text};

const TEMPLATES_JSON: &str = include_str!("../../templates/takeaways.json");

#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    pub template_version: String,
    pub titles: BTreeMap<String, String>,
    pub takeaways: BTreeMap<String, String>,
}

impl Templates {
    pub fn builtin() -> Templates {
        serde_json::from_str(TEMPLATES_JSON).expect("bundled templates parse")
    }

    fn title(&self, key: SectionKey) -> String {
        self.titles
            .get(key.as_str())
            .cloned()
            .unwrap_or_else(|| key.as_str().replace('_', " "))
    }

    fn fill(&self, template: &str, slots: &[(&str, String)]) -> String {
        let mut text = self.takeaways.get(template).cloned().unwrap_or_default();
        for (name, value) in slots {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKey {
    SummaryTable,
    TakeRateOverTime,
    PerceptionVsActual,
    AirportComparison,
    SurgeComparison,
    RatePerMile,
}

impl SectionKey {
    pub const ORDER: [SectionKey; 6] = [
        SectionKey::SummaryTable,
        SectionKey::TakeRateOverTime,
        SectionKey::PerceptionVsActual,
        SectionKey::AirportComparison,
        SectionKey::SurgeComparison,
        SectionKey::RatePerMile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionKey::SummaryTable => "summary_table",
            SectionKey::TakeRateOverTime => "take_rate_over_time",
            SectionKey::PerceptionVsActual => "perception_vs_actual",
            SectionKey::AirportComparison => "airport_comparison",
            SectionKey::SurgeComparison => "surge_comparison",
            SectionKey::RatePerMile => "rate_per_mile",
        }
    }
}

/// Typed data behind each figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FigureSeries {
    SummaryTable { rows: Vec<AggregateSummary> },
    TimeSeries { points: Vec<WeekPoint> },
    Perception(PerceptionComparison),
    Comparison(ComparisonResult),
    RatePerMile { bins: Vec<DistanceBin> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub key: SectionKey,
    pub title: String,
    /// `None` when the section has insufficient data.
    pub figure_series: Option<FigureSeries>,
    pub takeaway_text: String,
    pub insufficient_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    /// Data as-of time of the bundle, so a rebuild is byte-identical.
    pub generated_at: Option<DateTime<Utc>>,
    pub filter: FilterSpec,
    pub pipeline_digest: String,
    pub template_version: String,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn section(&self, key: SectionKey) -> Option<&Section> {
        self.sections.iter().find(|s| s.key == key)
    }
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn p_text(p: f64) -> String {
    if p < 0.001 {
        "p < 0.001".to_string()
    } else {
        format!("p = {p:.3}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(f2).unwrap_or_else(|| "n/a".into())
}

fn bin_label(b: &DistanceBin) -> String {
    format!("{}-{} mile", b.lower_miles, b.upper_miles)
}

pub fn report_id_for(pipeline_digest: &str, template_version: &str) -> String {
    let d = DigestBuilder::new()
        .part("pipeline", pipeline_digest.as_bytes())
        .part("templates", template_version.as_bytes())
        .finish();
    format!("rpt_{}", &d[..16])
}

pub fn build_report(bundle: &Bundle) -> Report {
    build_report_with(bundle, &Templates::builtin())
}

pub fn build_report_with(bundle: &Bundle, templates: &Templates) -> Report {
    let insufficient = |key: SectionKey, reason: &str| Section {
        key,
        title: templates.title(key),
        figure_series: None,
        takeaway_text: templates.fill("insufficient_data", &[("reason", reason.to_string())]),
        insufficient_data: true,
    };
    let section = |key: SectionKey, figure: FigureSeries, text: String| Section {
        key,
        title: templates.title(key),
        figure_series: Some(figure),
        takeaway_text: text,
        insufficient_data: false,
    };

    let mut sections = Vec::with_capacity(6);

    sections.push(match bundle.summary(SUMMARY_GROUP_ALL) {
        Some(all) => section(
            SectionKey::SummaryTable,
            FigureSeries::SummaryTable {
                rows: bundle.summaries.clone(),
            },
            templates.fill(
                "summary_table",
                &[
                    ("n_rides", all.n_rides.to_string()),
                    ("n_drivers", all.n_drivers.to_string()),
                    ("take_rate_ratio_of_means", f2(all.take_rate_ratio_of_means)),
                    ("take_rate_mean_of_ratios", f2(all.take_rate_mean_of_ratios)),
                    ("mean_rider_price_usd", f2(all.mean_rider_price_usd)),
                    ("mean_base_pay_usd", f2(all.mean_base_pay_usd)),
                    ("mean_tips_usd", f2(all.mean_tips_usd)),
                ],
            ),
        ),
        None => insufficient(SectionKey::SummaryTable, "no rides passed cleaning"),
    });

    let points = &bundle.weekly_series.points;
    sections.push(match (bundle.weekly_series.peak(), points.last()) {
        (Some(peak), Some(last)) => section(
            SectionKey::TakeRateOverTime,
            FigureSeries::TimeSeries {
                points: points.clone(),
            },
            templates.fill(
                "take_rate_over_time",
                &[
                    ("peak_rate", f2(peak.mean_take_rate_pct)),
                    ("peak_week", peak.iso_week.clone()),
                    ("last_rate", f2(last.mean_take_rate_pct)),
                    ("last_week", last.iso_week.clone()),
                ],
            ),
        ),
        _ => insufficient(SectionKey::TakeRateOverTime, "no dated rides"),
    });

    let p = &bundle.perception;
    sections.push(if p.is_empty() {
        insufficient(
            SectionKey::PerceptionVsActual,
            "no survey responses from drivers with analyzable rides",
        )
    } else {
        section(
            SectionKey::PerceptionVsActual,
            FigureSeries::Perception(p.clone()),
            templates.fill(
                "perception_vs_actual",
                &[
                    ("n_respondents", p.n_respondents.to_string()),
                    ("mean_estimated_pct", fmt_opt(p.mean_estimated_pct)),
                    ("mean_fair_pct", fmt_opt(p.mean_fair_pct)),
                    ("actual_pct", fmt_opt(p.actual_pct)),
                ],
            ),
        )
    });

    for (key, label) in [
        (SectionKey::AirportComparison, "airport"),
        (SectionKey::SurgeComparison, "surge"),
    ] {
        sections.push(match bundle.comparison(label) {
            Some(c) if !c.is_degenerate() => {
                let template = if c.significant_at_05 {
                    "comparison_significant"
                } else {
                    "comparison_not_significant"
                };
                let mut label_a = c.label_a.clone();
                if let Some(first) = label_a.get_mut(0..1) {
                    first.make_ascii_uppercase();
                }
                section(
                    key,
                    FigureSeries::Comparison(c.clone()),
                    templates.fill(
                        template,
                        &[
                            ("label_a", label_a),
                            ("label_b", c.label_b.clone()),
                            ("mode_a", fmt_opt(c.mode_a)),
                            ("mode_b", fmt_opt(c.mode_b)),
                            ("mean_a", fmt_opt(c.mean_a)),
                            ("mean_b", fmt_opt(c.mean_b)),
                            ("p_value", c.p_value.map(p_text).unwrap_or_default()),
                        ],
                    ),
                )
            }
            _ => insufficient(key, &format!("need both {label} and non-{label} rides")),
        });
    }

    let bins = &bundle.rate_per_mile.bins;
    let best = bins
        .iter()
        .max_by(|a, b| a.mean_pay_per_mile_usd.total_cmp(&b.mean_pay_per_mile_usd));
    let worst = bins
        .iter()
        .min_by(|a, b| a.mean_pay_per_mile_usd.total_cmp(&b.mean_pay_per_mile_usd));
    sections.push(match (best, worst) {
        (Some(best), Some(worst)) => section(
            SectionKey::RatePerMile,
            FigureSeries::RatePerMile { bins: bins.clone() },
            templates.fill(
                "rate_per_mile",
                &[
                    ("best_bin", bin_label(best)),
                    ("best_rate", f2(best.mean_pay_per_mile_usd)),
                    ("worst_bin", bin_label(worst)),
                    ("worst_rate", f2(worst.mean_pay_per_mile_usd)),
                ],
            ),
        ),
        _ => insufficient(SectionKey::RatePerMile, "no rides with a usable distance"),
    });

    Report {
        report_id: report_id_for(bundle.digest(), &templates.template_version),
        generated_at: bundle.manifest.data_as_of,
        filter: bundle.manifest.filter.clone(),
        pipeline_digest: bundle.digest().to_string(),
        template_version: templates.template_version.clone(),
        sections,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub report_id: String,
    pub pipeline_digest: String,
    pub files: BTreeMap<String, String>,
}

/// Writes `report.json`, `report.html`, `report.txt`, `csv/*.csv` and a
/// manifest of file digests into `dir`.
pub fn write_report_dir(
    report: &Report,
    bundle: &Bundle,
    dir: &Path,
) -> Result<ReportManifest, PipelineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    let csv_dir = dir.join("csv");
    fs::create_dir_all(&csv_dir).map_err(io(&csv_dir))?;

    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("report.json".into(), {
            let mut b = serde_json::to_vec_pretty(report).expect("report serializes");
            b.push(b'\n');
            b
        }),
        ("report.html".into(), render_html(report).into_bytes()),
        ("report.txt".into(), render_text(report).into_bytes()),
    ];
    for (name, body) in export_csv(bundle) {
        files.push((format!("csv/{name}"), body.into_bytes()));
    }
    let mut manifest = ReportManifest {
        report_id: report.report_id.clone(),
        pipeline_digest: report.pipeline_digest.clone(),
        files: BTreeMap::new(),
    };
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests;
