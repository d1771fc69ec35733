//! Per-group summary statistics in the layout organizers read.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clean::RetainedRide;

/// Column means over the retained rides of one group, plus both take-rate
/// aggregations side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub group: String,
    pub n_drivers: usize,
    pub n_rides: usize,
    pub mean_distance_miles: f64,
    pub mean_duration_minutes: f64,
    pub mean_rider_price_usd: f64,
    pub mean_fees_usd: f64,
    pub mean_base_pay_usd: f64,
    pub mean_tips_usd: f64,
    /// Average of per-ride take rates.
    pub take_rate_mean_of_ratios: f64,
    /// Total fees over total tip-exclusive rider price.
    pub take_rate_ratio_of_means: f64,
}

/// Summarizes one group. Returns `None` for an empty group.
pub fn summarize_group<'a, I>(group: &str, rides: I) -> Option<AggregateSummary>
where
    I: IntoIterator<Item = &'a RetainedRide>,
{
    let mut drivers = BTreeSet::new();
    let mut n = 0usize;
    let (mut distance, mut duration, mut rate_sum) = (0.0f64, 0.0f64, 0.0f64);
    let (mut price, mut fees, mut base, mut tips) = (0i128, 0i128, 0i128, 0i128);
    for ride in rides {
        let a = &ride.activity;
        let cents = |v: Option<crate::money::Usd>| v.map_or(0, |u| u.cents()) as i128;
        n += 1;
        drivers.insert(a.driver_id.as_str());
        distance += a.distance_miles.unwrap_or(0.0);
        duration += a.duration_minutes.unwrap_or(0.0);
        rate_sum += ride.take_rate_pct;
        price += cents(a.rider_price_usd);
        fees += cents(a.platform_fees_usd);
        base += cents(a.base_pay_usd);
        tips += cents(a.tips_usd);
    }
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let dollars = |cents: i128| cents as f64 / 100.0 / nf;
    let fare = price - tips;
    Some(AggregateSummary {
        group: group.to_string(),
        n_drivers: drivers.len(),
        n_rides: n,
        mean_distance_miles: distance / nf,
        mean_duration_minutes: duration / nf,
        mean_rider_price_usd: dollars(price),
        mean_fees_usd: dollars(fees),
        mean_base_pay_usd: dollars(base),
        mean_tips_usd: dollars(tips),
        take_rate_mean_of_ratios: rate_sum / nf,
        // every retained ride has a positive tip-exclusive price, so fare > 0
        take_rate_ratio_of_means: fees as f64 * 100.0 / fare as f64,
    })
}

/// Groups rides by `key` (a ride may belong to several groups, or none) and
/// summarizes each non-empty group. Without a key, one `"all"` group.
pub fn summarize<F>(retained: &[RetainedRide], key: Option<F>) -> Vec<AggregateSummary>
where
    F: Fn(&RetainedRide) -> Vec<String>,
{
    let Some(key) = key else {
        return summarize_group("all", retained).into_iter().collect();
    };
    let mut groups: BTreeMap<String, Vec<&RetainedRide>> = BTreeMap::new();
    for ride in retained {
        for label in key(ride) {
            groups.entry(label).or_default().push(ride);
        }
    }
    groups
        .into_iter()
        .filter_map(|(label, rides)| summarize_group(&label, rides))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::fixtures::ride;
    use crate::clean::clean;

    #[test]
    fn single_ride_means_equal_its_fields() {
        let r = ride("a", "d1", 2471, 744, 282);
        let (retained, _) = clean([&r]);
        let s = summarize_group("all", &retained).unwrap();
        assert_eq!(s.n_rides, 1);
        assert_eq!(s.n_drivers, 1);
        assert_eq!(s.mean_rider_price_usd, 24.71);
        assert_eq!(s.mean_fees_usd, 7.44);
        assert_eq!(s.mean_tips_usd, 2.82);
        assert_eq!(s.mean_base_pay_usd, 14.45);
        assert_eq!(s.mean_distance_miles, 8.0);
        assert_eq!(s.take_rate_mean_of_ratios, s.take_rate_ratio_of_means);
    }

    #[test]
    fn four_rides_hand_computed() {
        // price, fees, tips in cents
        let rows = [
            ride("a", "d1", 2000, 500, 0),
            ride("b", "d1", 3000, 600, 500),
            ride("c", "d2", 1500, 450, 0),
            ride("d", "d3", 4100, 1000, 100),
        ];
        let (retained, _) = clean(&rows);
        let s = summarize_group("all", &retained).unwrap();
        assert_eq!(s.n_drivers, 3);
        assert_eq!(s.n_rides, 4);
        // (20 + 30 + 15 + 41) / 4
        assert!((s.mean_rider_price_usd - 26.50).abs() < 1e-9);
        // (5 + 6 + 4.5 + 10) / 4
        assert!((s.mean_fees_usd - 6.375).abs() < 1e-9);
        // (0 + 5 + 0 + 1) / 4
        assert!((s.mean_tips_usd - 1.50).abs() < 1e-9);
        // rates 25, 24, 30, 25 → 26
        assert!((s.take_rate_mean_of_ratios - 26.0).abs() < 1e-9);
        // 2550 / (10600 - 600) = 25.5 %
        assert!((s.take_rate_ratio_of_means - 25.5).abs() < 1e-9);
    }

    #[test]
    fn keyed_groups_skip_empty() {
        let rows = [ride("a", "d1", 2000, 500, 0), ride("b", "d2", 2000, 500, 0)];
        let (retained, _) = clean(&rows);
        let out = summarize(
            &retained,
            Some(|r: &RetainedRide| {
                if r.activity.driver_id == "d1" {
                    vec!["one".to_string()]
                } else {
                    vec![]
                }
            }),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].group, "one");
        let all = summarize(&retained, None::<fn(&RetainedRide) -> Vec<String>>);
        assert_eq!(all[0].n_rides, 2);
    }
}
