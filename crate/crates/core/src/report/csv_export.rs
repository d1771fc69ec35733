//! CSV exports, one file per report section.

use crate::pipeline::Bundle;
use crate::summary::AggregateSummary;

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "Type",
    "Drivers",
    "Rides",
    "Distance (miles)",
    "Duration (minutes)",
    "Ride Price ($)",
    "Fees ($)",
    "Base Pay ($)",
    "Tips ($)",
    "Take Rate (Average) (%)",
    "Take Rate (Ratio of Means) (%)",
];

pub const REGION_COLUMNS: [&str; 11] = [
    "Group",
    "# of Drivers",
    "# of Rides",
    "Distance (miles)",
    "Duration (minutes)",
    "Customer Charge ($)",
    "Fees ($)",
    "Base Pay ($)",
    "Tips ($)",
    "Take Rate (%)",
    "Take Rate (Ratio of Means) (%)",
];

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f2).unwrap_or_default()
}

fn summary_record(label: &str, s: &AggregateSummary) -> Vec<String> {
    vec![
        label.to_string(),
        s.n_drivers.to_string(),
        s.n_rides.to_string(),
        f2(s.mean_distance_miles),
        f2(s.mean_duration_minutes),
        f2(s.mean_rider_price_usd),
        f2(s.mean_fees_usd),
        f2(s.mean_base_pay_usd),
        f2(s.mean_tips_usd),
        f2(s.take_rate_mean_of_ratios),
        f2(s.take_rate_ratio_of_means),
    ]
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn title_case(group: &str) -> String {
    let mut s = group.to_string();
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// Returns `(file name, CSV text)` pairs. Empty summary groups never appear
/// because the pipeline omits them.
pub fn export_csv(bundle: &Bundle) -> Vec<(String, String)> {
    let mut files = Vec::new();

    let table1: Vec<Vec<String>> = bundle
        .summaries
        .iter()
        .filter(|s| !s.group.starts_with("region:"))
        .map(|s| summary_record(&title_case(&s.group), s))
        .collect();
    files.push(("summary.csv".to_string(), to_csv(&SUMMARY_COLUMNS, table1)));

    let table2: Vec<Vec<String>> = bundle
        .summaries
        .iter()
        .filter_map(|s| {
            s.group
                .strip_prefix("region:")
                .map(|tag| summary_record(tag, s))
        })
        .collect();
    files.push(("regions.csv".to_string(), to_csv(&REGION_COLUMNS, table2)));

    let weekly = bundle
        .weekly_series
        .points
        .iter()
        .map(|p| {
            vec![
                p.iso_week.clone(),
                p.week_start.to_string(),
                f2(p.mean_take_rate_pct),
                p.n_rides.to_string(),
            ]
        })
        .collect();
    files.push((
        "take_rate_over_time.csv".to_string(),
        to_csv(
            &["ISO Week", "Week Start", "Take Rate (%)", "Rides"],
            weekly,
        ),
    ));

    let p = &bundle.perception;
    let perception = if p.is_empty() {
        Vec::new()
    } else {
        vec![vec![
            p.n_respondents.to_string(),
            opt(p.mean_estimated_pct),
            opt(p.mean_fair_pct),
            opt(p.actual_pct),
        ]]
    };
    files.push((
        "perception_vs_actual.csv".to_string(),
        to_csv(
            &[
                "Respondents",
                "Estimated Take Rate (%)",
                "Fair Take Rate (%)",
                "Actual Take Rate (%)",
            ],
            perception,
        ),
    ));

    let comparisons = bundle
        .comparisons
        .iter()
        .map(|c| {
            vec![
                c.label_a.clone(),
                c.label_b.clone(),
                c.n_a.to_string(),
                c.n_b.to_string(),
                opt(c.mean_a),
                opt(c.mean_b),
                opt(c.mode_a),
                opt(c.mode_b),
                c.bin_width.to_string(),
                c.p_value.map(|p| format!("{p:.6}")).unwrap_or_default(),
                c.significant_at_05.to_string(),
            ]
        })
        .collect();
    files.push((
        "comparisons.csv".to_string(),
        to_csv(
            &[
                "Group A",
                "Group B",
                "Rides A",
                "Rides B",
                "Mean A (%)",
                "Mean B (%)",
                "Mode A (%)",
                "Mode B (%)",
                "Bin Width (pp)",
                "p-value",
                "Significant (p<0.05)",
            ],
            comparisons,
        ),
    ));

    let bins = bundle
        .rate_per_mile
        .bins
        .iter()
        .map(|b| {
            vec![
                b.lower_miles.to_string(),
                b.upper_miles.to_string(),
                f2(b.mean_pay_per_mile_usd),
                b.n_rides.to_string(),
            ]
        })
        .collect();
    files.push((
        "rate_per_mile.csv".to_string(),
        to_csv(
            &["From (miles)", "To (miles)", "Pay per Mile ($)", "Rides"],
            bins,
        ),
    ));

    files
}
