//! Fixtures and independent oracles for tests.
//!
//! The oracles here deliberately avoid the library's own helpers: they
//! recompute from raw record fields with the most direct method available
//! (plain sums, subset enumeration, random permutation) so that agreement
//! means something.

use chrono::{DateTime, Duration, TimeZone, Utc};
use farelens_core::activity::{ActivityStatus, ActivityType, RideActivity};
use farelens_core::money::Usd;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 5, 1, 12, 0, 0).unwrap()
}

/// A complete, analyzable rideshare record. `base_pay` absorbs the remainder
/// so that `price - tips = base + fees`.
pub fn ride(
    id: &str,
    driver: &str,
    price_cents: i64,
    fees_cents: i64,
    tips_cents: i64,
) -> RideActivity {
    ride_at(id, driver, t0(), price_cents, fees_cents, tips_cents)
}

pub fn ride_at(
    id: &str,
    driver: &str,
    start: DateTime<Utc>,
    price_cents: i64,
    fees_cents: i64,
    tips_cents: i64,
) -> RideActivity {
    RideActivity {
        activity_id: id.to_string(),
        driver_id: driver.to_string(),
        activity_type: ActivityType::Rideshare,
        status: ActivityStatus::Completed,
        start_time: Some(start),
        end_time: Some(start + Duration::minutes(20)),
        distance_miles: Some(8.0),
        duration_minutes: Some(20.0),
        start_zip: Some("80202".into()),
        end_zip: Some("80203".into()),
        rider_price_usd: Some(Usd::from_cents(price_cents)),
        platform_fees_usd: Some(Usd::from_cents(fees_cents)),
        base_pay_usd: Some(Usd::from_cents(
            (price_cents - tips_cents - fees_cents).max(0),
        )),
        tips_usd: Some(Usd::from_cents(tips_cents)),
        bonus_usd: Some(Usd::ZERO),
        surge_flag: false,
        source_payload_digest: String::new(),
    }
    .seal()
}

/// Expected per-reason counts of [`defect_fixture`].
pub const DEFECT_COUNTS: DefectCounts = DefectCounts {
    negative_take_rate: 12,
    non_rideshare: 8,
    cancelled: 5,
    missing_fields: 3,
    retained: 72,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DefectCounts {
    pub negative_take_rate: usize,
    pub non_rideshare: usize,
    pub cancelled: usize,
    pub missing_fields: usize,
    pub retained: usize,
}

/// 100 rows with disjoint defects: 12 negative-fee rides, 8 deliveries,
/// 5 cancelled rides and 3 rides missing a required field. The remaining 72
/// are clean. Rows are interleaved so defects are not contiguous.
pub fn defect_fixture() -> Vec<RideActivity> {
    let mut rows = Vec::with_capacity(100);
    for i in 0..100i64 {
        let start = t0() + Duration::hours(i * 7);
        let mut r = ride_at(
            &format!("fx-{i:03}"),
            &format!("drv-{}", i % 6),
            start,
            2000 + i * 13,
            500 + i * 3,
            i % 4 * 50,
        );
        match i % 10 {
            // 0 and 5 land on 20 rows; the first 12 of them get negative fees
            0 | 5 if i < 60 => {
                r.platform_fees_usd = Some(Usd::from_cents(-150 - i));
                r.base_pay_usd = Some(Usd::from_cents(2000 + i * 13 - i % 4 * 50 + 150 + i));
            }
            1 if i < 80 => r.activity_type = ActivityType::Delivery,
            2 if i < 50 => r.status = ActivityStatus::Cancelled,
            3 if i < 30 => match i {
                3 => r.tips_usd = None,
                13 => r.distance_miles = None,
                _ => r.end_time = None,
            },
            _ => {}
        }
        rows.push(r.seal());
    }
    rows
}

/// A random record that may hit any exclusion rule, used to property-test
/// the cleaning partition.
pub fn random_activity<R: Rng>(rng: &mut R, id: usize) -> RideActivity {
    let price = rng.gen_range(-500..6000);
    let tips = rng.gen_range(0..800);
    let fees = rng.gen_range(-600..3000);
    let start = t0() + Duration::minutes(rng.gen_range(0..500_000));
    let mut r = ride_at(
        &format!("r{id}"),
        &format!("d{}", rng.gen_range(0..7)),
        start,
        price,
        fees,
        tips,
    );
    r.base_pay_usd = Some(Usd::from_cents(rng.gen_range(0..4000)));
    if rng.gen_bool(0.1) {
        r.activity_type = if rng.gen_bool(0.5) {
            ActivityType::Delivery
        } else {
            ActivityType::Other
        };
    }
    if rng.gen_bool(0.1) {
        r.status = ActivityStatus::Cancelled;
    }
    if rng.gen_bool(0.1) {
        match rng.gen_range(0..8) {
            0 => r.start_time = None,
            1 => r.end_time = None,
            2 => r.distance_miles = None,
            3 => r.duration_minutes = None,
            4 => r.rider_price_usd = None,
            5 => r.platform_fees_usd = None,
            6 => r.base_pay_usd = None,
            _ => r.tips_usd = None,
        }
    }
    if rng.gen_bool(0.05) {
        // tip-exclusive fare of exactly zero
        r.tips_usd = r.rider_price_usd;
    }
    r.surge_flag = rng.gen_bool(0.3);
    r.seal()
}

/// A random analyzable ride (positive fare, fees between 0 and the fare).
pub fn random_valid_ride<R: Rng>(rng: &mut R, id: usize, n_drivers: usize) -> RideActivity {
    let fare = rng.gen_range(300..8000);
    let tips = if rng.gen_bool(0.4) {
        rng.gen_range(0..1500)
    } else {
        0
    };
    let fees = rng.gen_range(0..=fare);
    let start = t0() + Duration::minutes(rng.gen_range(0..200_000));
    let mut r = ride_at(
        &format!("v{id}"),
        &format!("d{}", rng.gen_range(0..n_drivers)),
        start,
        fare + tips,
        fees,
        tips,
    );
    r.distance_miles = Some(rng.gen_range(0.2..40.0));
    r.duration_minutes = Some(rng.gen_range(2.0..90.0));
    r.seal()
}

/// Column means recomputed from raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub n_drivers: usize,
    pub n_rides: usize,
    pub mean_distance: f64,
    pub mean_duration: f64,
    pub mean_price: f64,
    pub mean_fees: f64,
    pub mean_base: f64,
    pub mean_tips: f64,
    pub mean_of_ratios: f64,
    pub ratio_of_means: f64,
}

/// Brute-force summary over rides that are already known to be analyzable.
pub fn oracle_summary(rides: &[RideActivity]) -> Option<OracleSummary> {
    if rides.is_empty() {
        return None;
    }
    let n = rides.len() as f64;
    let mut drivers: Vec<&str> = rides.iter().map(|r| r.driver_id.as_str()).collect();
    drivers.sort();
    drivers.dedup();
    let cents = |f: fn(&RideActivity) -> Option<Usd>| -> Vec<f64> {
        rides.iter().map(|r| f(r).unwrap().cents() as f64).collect()
    };
    let price = cents(|r| r.rider_price_usd);
    let fees = cents(|r| r.platform_fees_usd);
    let base = cents(|r| r.base_pay_usd);
    let tips = cents(|r| r.tips_usd);
    let total = |v: &[f64]| v.iter().sum::<f64>();
    let mut ratio_sum = 0.0;
    for i in 0..rides.len() {
        ratio_sum += fees[i] / (price[i] - tips[i]) * 100.0;
    }
    Some(OracleSummary {
        n_drivers: drivers.len(),
        n_rides: rides.len(),
        mean_distance: rides.iter().map(|r| r.distance_miles.unwrap()).sum::<f64>() / n,
        mean_duration: rides
            .iter()
            .map(|r| r.duration_minutes.unwrap())
            .sum::<f64>()
            / n,
        mean_price: total(&price) / 100.0 / n,
        mean_fees: total(&fees) / 100.0 / n,
        mean_base: total(&base) / 100.0 / n,
        mean_tips: total(&tips) / 100.0 / n,
        mean_of_ratios: ratio_sum / n,
        ratio_of_means: total(&fees) / (total(&price) - total(&tips)) * 100.0,
    })
}

fn rank_sum_stat(pooled: &[f64], chosen: &[bool]) -> f64 {
    // U of the chosen group by direct pair counting (ties count one half).
    let mut u = 0.0;
    for (i, &x) in pooled.iter().enumerate() {
        if !chosen[i] {
            continue;
        }
        for (j, &y) in pooled.iter().enumerate() {
            if chosen[j] {
                continue;
            }
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided permutation p-value of the U statistic by enumerating every
/// way to choose `a.len()` of the pooled values. Practical up to about 20
/// pooled values.
pub fn permutation_p_exact(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, n) = (a.len(), pooled.len());
    assert!(n <= 24, "enumeration oracle is exponential");
    let center = (na * b.len()) as f64 / 2.0;
    let observed = {
        let chosen: Vec<bool> = (0..n).map(|i| i < na).collect();
        (rank_sum_stat(&pooled, &chosen) - center).abs()
    };
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let chosen: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        total += 1;
        if (rank_sum_stat(&pooled, &chosen) - center).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Two-sided Monte Carlo permutation p-value of the U statistic.
pub fn permutation_p_monte_carlo<R: Rng>(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    rng: &mut R,
) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let na = a.len();
    let center = (na * b.len()) as f64 / 2.0;
    let u_of = |v: &[f64]| {
        let mut u = 0.0;
        for &x in &v[..na] {
            for &y in &v[na..] {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    };
    let observed = (u_of(&pooled) - center).abs();
    let mut extreme = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(rng);
        if (u_of(&pooled) - center).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / resamples as f64
}
