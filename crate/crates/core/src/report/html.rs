//! Self-contained HTML (inline CSS and SVG, no external references) and a
//! plain-text rendering.

use std::fmt::Write as _;

use super::{f2, FigureSeries, Report, Section};
use crate::compare::{ComparisonResult, HistogramBin};
use crate::perception::PerceptionComparison;
use crate::series::{DistanceBin, WeekPoint};
use crate::summary::AggregateSummary;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 28.0;
const MARGIN_TOP: f64 = 12.0;
const COLOR_A: &str = "#c0392b";
const COLOR_B: &str = "#2c6e9b";

const STYLE: &str = "body{font-family:system-ui,sans-serif;max-width:760px;margin:2em auto;color:#222}\
h1{font-size:1.6em}h2{font-size:1.2em;margin-top:2em;border-bottom:1px solid #ccc}\
.takeaway{background:#f5f5f0;border-left:4px solid #c0392b;padding:.6em 1em}\
.insufficient{color:#777;font-style:italic}\
table{border-collapse:collapse;font-size:.85em}td,th{border:1px solid #ccc;padding:.25em .5em;text-align:right}\
th:first-child,td:first-child{text-align:left}svg text{font-size:10px;fill:#444}";

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    y_max: f64,
}

impl Frame {
    fn plot_w() -> f64 {
        WIDTH - MARGIN_LEFT - 8.0
    }

    fn plot_h() -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_TOP + Self::plot_h() * (1.0 - (v / self.y_max).clamp(0.0, 1.0))
    }

    fn open(&self, out: &mut String, label: &str, unit: &str) {
        let _ = write!(
            out,
            r#"<svg role="img" aria-label="{}" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#,
            escape(label)
        );
        let base = self.y(0.0);
        let _ = write!(
            out,
            r##"<line x1="{MARGIN_LEFT}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="#999"/>"##,
            WIDTH - 8.0
        );
        for i in 0..=4 {
            let v = self.y_max * i as f64 / 4.0;
            let y = self.y(v);
            let _ = write!(
                out,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#eee"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}{unit}</text>"##,
                WIDTH - 8.0,
                MARGIN_LEFT - 4.0,
                y + 3.0,
                v
            );
        }
    }
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for step in [1.0, 2.0, 5.0, 10.0] {
        if v <= step * mag {
            return step * mag;
        }
    }
    10.0 * mag
}

fn line_chart(points: &[WeekPoint]) -> String {
    let y_max = nice_max(
        points
            .iter()
            .map(|p| p.mean_take_rate_pct)
            .fold(0.0, f64::max),
    );
    let frame = Frame { y_max };
    let mut out = String::new();
    frame.open(&mut out, "weekly mean take rate", "%");
    let n = points.len().max(2) as f64 - 1.0;
    let x = |i: usize| MARGIN_LEFT + Frame::plot_w() * i as f64 / n;
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{:.1},{:.1}", x(i), frame.y(p.mean_take_rate_pct)))
        .collect();
    let _ = write!(
        out,
        r#"<polyline fill="none" stroke="{COLOR_A}" stroke-width="1.5" points="{}"/>"#,
        path.join(" ")
    );
    let mut last_year = None;
    for (i, p) in points.iter().enumerate() {
        let year = &p.iso_week[..4];
        if last_year != Some(year) {
            last_year = Some(year);
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{:.1}">{year}</text>"#,
                x(i),
                HEIGHT - 10.0
            );
        }
    }
    out.push_str("</svg>");
    out
}

fn bar_chart(label: &str, bars: &[(String, f64, &str)], unit: &str) -> String {
    let y_max = nice_max(bars.iter().map(|b| b.1).fold(0.0, f64::max));
    let frame = Frame { y_max };
    let mut out = String::new();
    frame.open(&mut out, label, unit);
    let slot = Frame::plot_w() / bars.len().max(1) as f64;
    for (i, (name, value, color)) in bars.iter().enumerate() {
        let x = MARGIN_LEFT + slot * i as f64 + slot * 0.15;
        let y = frame.y(*value);
        let _ = write!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{color}"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            slot * 0.7,
            frame.y(0.0) - y,
            x + slot * 0.35,
            HEIGHT - 10.0,
            escape(name),
            x + slot * 0.35,
            y - 3.0,
            f2(*value)
        );
    }
    out.push_str("</svg>");
    out
}

fn density(hist: &[HistogramBin]) -> Vec<(f64, f64)> {
    let total: usize = hist.iter().map(|b| b.count).sum();
    hist.iter()
        .map(|b| (b.lower_pct, b.count as f64 / total.max(1) as f64))
        .collect()
}

fn histogram_chart(c: &ComparisonResult) -> String {
    let a = density(&c.histogram_a);
    let b = density(&c.histogram_b);
    let lo = a
        .iter()
        .chain(&b)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = a.iter().chain(&b).map(|p| p.0).fold(0.0, f64::max) + c.bin_width;
    let y_max = nice_max(a.iter().chain(&b).map(|p| p.1 * 100.0).fold(0.0, f64::max));
    let frame = Frame { y_max };
    let mut out = String::new();
    frame.open(
        &mut out,
        &format!("{} vs {} take-rate histogram", c.label_a, c.label_b),
        "%",
    );
    let x = |v: f64| MARGIN_LEFT + Frame::plot_w() * (v - lo) / (hi - lo);
    let w = (x(c.bin_width) - x(0.0)).max(0.5);
    for (series, color) in [(&b, COLOR_B), (&a, COLOR_A)] {
        for (lower, share) in series {
            let y = frame.y(share * 100.0);
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="{color}" fill-opacity="0.55"/>"#,
                x(*lower),
                frame.y(0.0) - y
            );
        }
    }
    for (mode, color) in [(c.mode_a, COLOR_A), (c.mode_b, COLOR_B)] {
        if let Some(m) = mode {
            let _ = write!(
                out,
                r#"<line x1="{0:.1}" y1="{MARGIN_TOP}" x2="{0:.1}" y2="{1:.1}" stroke="{color}" stroke-dasharray="3,2"/>"#,
                x(m),
                frame.y(0.0)
            );
        }
    }
    let step = nice_max((hi - lo) / 8.0);
    let mut tick = (lo / step).ceil() * step;
    while tick <= hi {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{tick:.0}%</text>"#,
            x(tick),
            HEIGHT - 10.0
        );
        tick += step;
    }
    let _ = write!(
        out,
        r#"<rect x="{0:.1}" y="14" width="10" height="10" fill="{COLOR_A}"/><text x="{1:.1}" y="23">{2}</text><rect x="{0:.1}" y="30" width="10" height="10" fill="{COLOR_B}"/><text x="{1:.1}" y="39">{3}</text>"#,
        WIDTH - 130.0,
        WIDTH - 115.0,
        escape(&c.label_a),
        escape(&c.label_b)
    );
    out.push_str("</svg>");
    out
}

fn summary_table(rows: &[AggregateSummary]) -> String {
    let mut out = String::from(
        "<table><thead><tr><th>Type</th><th>Drivers</th><th>Rides</th><th>Distance (miles)</th>\
<th>Duration (minutes)</th><th>Ride Price ($)</th><th>Fees ($)</th><th>Base Pay ($)</th>\
<th>Tips ($)</th><th>Take Rate (Average) (%)</th><th>Take Rate (Ratio of Means) (%)</th></tr></thead><tbody>",
    );
    for r in rows {
        let _ = write!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape(&r.group),
            r.n_drivers,
            r.n_rides,
            f2(r.mean_distance_miles),
            f2(r.mean_duration_minutes),
            f2(r.mean_rider_price_usd),
            f2(r.mean_fees_usd),
            f2(r.mean_base_pay_usd),
            f2(r.mean_tips_usd),
            f2(r.take_rate_mean_of_ratios),
            f2(r.take_rate_ratio_of_means)
        );
    }
    out.push_str("</tbody></table>");
    out
}

fn perception_chart(p: &PerceptionComparison) -> String {
    bar_chart(
        "estimated, fair and actual take rate",
        &[
            (
                "Estimated".into(),
                p.mean_estimated_pct.unwrap_or(0.0),
                COLOR_B,
            ),
            ("Fair".into(), p.mean_fair_pct.unwrap_or(0.0), "#7f8c8d"),
            ("Actual".into(), p.actual_pct.unwrap_or(0.0), COLOR_A),
        ],
        "%",
    )
}

fn rate_chart(bins: &[DistanceBin]) -> String {
    let bars: Vec<(String, f64, &str)> = bins
        .iter()
        .map(|b| {
            (
                format!("{}-{} mi", b.lower_miles, b.upper_miles),
                b.mean_pay_per_mile_usd,
                COLOR_B,
            )
        })
        .collect();
    bar_chart("driver pay per mile by distance", &bars, "")
}

fn figure_html(figure: &FigureSeries) -> String {
    match figure {
        FigureSeries::SummaryTable { rows } => summary_table(rows),
        FigureSeries::TimeSeries { points } => line_chart(points),
        FigureSeries::Perception(p) => perception_chart(p),
        FigureSeries::Comparison(c) => histogram_chart(c),
        FigureSeries::RatePerMile { bins } => rate_chart(bins),
    }
}

fn section_html(out: &mut String, s: &Section) {
    let _ = write!(
        out,
        r#"<section id="{}"><h2>{}</h2>"#,
        s.key.as_str(),
        escape(&s.title)
    );
    match &s.figure_series {
        Some(fig) => {
            out.push_str("<figure>");
            out.push_str(&figure_html(fig));
            out.push_str("</figure>");
            let _ = write!(
                out,
                r#"<p class="takeaway">{}</p>"#,
                escape(&s.takeaway_text)
            );
        }
        None => {
            let _ = write!(
                out,
                r#"<p class="insufficient">{}</p>"#,
                escape(&s.takeaway_text)
            );
        }
    }
    out.push_str("</section>\n");
}

pub fn render_html(report: &Report) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>Take-rate report {}</title><style>{STYLE}</style></head><body>\n",
        escape(&report.report_id)
    );
    let _ = writeln!(
        out,
        "<h1>Take-rate report</h1><p>Report {} &middot; data through {} &middot; pipeline {}</p>",
        escape(&report.report_id),
        report
            .generated_at
            .map(|t| t.format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| "n/a".into()),
        escape(&report.pipeline_digest[..report.pipeline_digest.len().min(12)]),
    );
    for s in &report.sections {
        section_html(&mut out, s);
    }
    out.push_str("</body></html>\n");
    out
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "TAKE-RATE REPORT {}", report.report_id);
    let _ = writeln!(out, "pipeline digest: {}", report.pipeline_digest);
    for (i, s) in report.sections.iter().enumerate() {
        let _ = writeln!(out, "\n{}. {}", i + 1, s.title);
        let _ = writeln!(out, "{}", s.takeaway_text);
        if let Some(FigureSeries::SummaryTable { rows }) = &s.figure_series {
            for r in rows {
                let _ = writeln!(
                    out,
                    "  {:<16} drivers {:>4}  rides {:>7}  take rate {:>6}% (ratio of means {}%)",
                    r.group,
                    r.n_drivers,
                    r.n_rides,
                    f2(r.take_rate_mean_of_ratios),
                    f2(r.take_rate_ratio_of_means)
                );
            }
        }
    }
    out
}
