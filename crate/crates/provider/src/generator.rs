//! Deterministic synthetic gig histories.
//!
//! Every record satisfies `rider_price - tips = base_pay + platform_fees`
//! in integer cents, so downstream take-rate math has a closed form.

use chrono::{DateTime, Duration, TimeZone, Utc};
use farelens_core::activity::{ActivityStatus, ActivityType, RideActivity};
use farelens_core::classify::DEFAULT_AIRPORT_ZIP;
use farelens_core::digest::DigestBuilder;
use farelens_core::money::Usd;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fee_model::FeeModel;

/// Ordinary (non-airport) postal codes rides start and end in.
const CITY_ZIPS: [&str; 12] = [
    "80202", "80203", "80204", "80205", "80206", "80207", "80209", "80210", "80211", "80218",
    "80220", "80223",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateSpan {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub n_rides: usize,
    pub date_span: DateSpan,
    pub surge_probability: f64,
    pub airport_probability: f64,
    pub delivery_probability: f64,
    pub cancel_probability: f64,
    pub fee_model: FeeModel,
    pub airport_zip: String,
    /// Added to the take rate of surge rides in variable fee segments.
    pub surge_uplift_pp: f64,
    /// Added to the take rate of airport rides in variable fee segments.
    pub airport_uplift_pp: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_rides: 200,
            date_span: DateSpan {
                start: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
                end: Utc.with_ymd_and_hms(2024, 12, 31, 23, 59, 59).unwrap(),
            },
            surge_probability: 0.2,
            airport_probability: 0.12,
            delivery_probability: 0.05,
            cancel_probability: 0.03,
            fee_model: FeeModel::default(),
            airport_zip: DEFAULT_AIRPORT_ZIP.to_string(),
            surge_uplift_pp: 8.0,
            airport_uplift_pp: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("{0} must be within [0, 1]")]
    Probability(&'static str),
    #[error("date span is empty")]
    EmptySpan,
    #[error("fee model is invalid or does not cover the date span")]
    FeeModel,
    #[error("airport zip must have 5 characters")]
    AirportZip,
    #[error("uplifts must be finite")]
    Uplift,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, p) in [
            ("surge_probability", self.surge_probability),
            ("airport_probability", self.airport_probability),
            ("delivery_probability", self.delivery_probability),
            ("cancel_probability", self.cancel_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ParamsError::Probability(name));
            }
        }
        if self.date_span.end <= self.date_span.start {
            return Err(ParamsError::EmptySpan);
        }
        if !self.fee_model.is_valid()
            || !self
                .fee_model
                .covers(self.date_span.start, self.date_span.end)
        {
            return Err(ParamsError::FeeModel);
        }
        if self.airport_zip.chars().count() != 5 {
            return Err(ParamsError::AirportZip);
        }
        if !self.surge_uplift_pp.is_finite() || !self.airport_uplift_pp.is_finite() {
            return Err(ParamsError::Uplift);
        }
        Ok(())
    }
}

fn rng_for(account_id: &str, seed: u64, stream: &str) -> ChaCha8Rng {
    let d = DigestBuilder::new()
        .part("account", account_id.as_bytes())
        .part("seed", &seed.to_le_bytes())
        .part("stream", stream.as_bytes())
        .finish();
    let mut key = [0u8; 32];
    hex::decode_to_slice(&d, &mut key).expect("digest is 64 hex chars");
    ChaCha8Rng::from_seed(key)
}

fn activity_id(account_id: &str, slot: &str) -> String {
    let d = DigestBuilder::new()
        .part("account", account_id.as_bytes())
        .part("slot", slot.as_bytes())
        .finish();
    format!("gig_{}", &d[..20])
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Draws {
    distance: LogNormal<f64>,
    tip: LogNormal<f64>,
}

impl Draws {
    fn new() -> Self {
        Draws {
            // median 6 miles
            distance: LogNormal::new(6f64.ln(), 0.6).expect("valid"),
            // median 4 dollars when a tip is given
            tip: LogNormal::new(4f64.ln(), 0.6).expect("valid"),
        }
    }
}

fn make_ride(
    rng: &mut ChaCha8Rng,
    draws: &Draws,
    params: &GeneratorParams,
    account_id: &str,
    id: String,
    start: DateTime<Utc>,
) -> RideActivity {
    let activity_type = if rng.gen_bool(params.delivery_probability) {
        ActivityType::Delivery
    } else {
        ActivityType::Rideshare
    };
    let status = if rng.gen_bool(params.cancel_probability) {
        ActivityStatus::Cancelled
    } else {
        ActivityStatus::Completed
    };
    let surge = rng.gen_bool(params.surge_probability);
    let airport = rng.gen_bool(params.airport_probability);

    let distance = (draws.distance.sample(rng)).clamp(0.3, 80.0);
    let distance = (distance * 100.0).round() / 100.0;
    let duration = distance * rng.gen_range(1.8..3.2) + rng.gen_range(2.0..6.0);
    let duration = (duration * 10.0).round() / 10.0;

    let mut fare_dollars = 3.0 + 1.9 * distance + 0.30 * duration;
    if surge {
        fare_dollars *= rng.gen_range(1.25..1.9);
    }
    let mut fare = (fare_dollars * 100.0).round() as i64;

    let fee_at = params
        .fee_model
        .at(start)
        .expect("validated fee model covers the span");
    let fees = if fee_at.flat {
        // Round the fare to a multiple that makes the flat rate exact in cents.
        let bp = (fee_at.mean_pct * 100.0).round() as i64;
        let step = if bp == 0 { 1 } else { 10_000 / gcd(bp, 10_000) };
        fare = ((fare + step / 2) / step).max(1) * step;
        fare * bp / 10_000
    } else {
        let mut rate = fee_at.mean_pct;
        if surge {
            rate += params.surge_uplift_pp;
        }
        if airport {
            rate += params.airport_uplift_pp;
        }
        let noise = Normal::new(0.0, fee_at.dispersion_pp).expect("finite dispersion");
        let rate = (rate + noise.sample(rng)).clamp(0.0, 95.0);
        (fare as f64 * rate / 100.0).round() as i64
    };
    let tips = if activity_type == ActivityType::Rideshare && rng.gen_bool(0.45) {
        (draws.tip.sample(rng).min(60.0) * 100.0).round() as i64
    } else {
        0
    };

    let city = |rng: &mut ChaCha8Rng| CITY_ZIPS[rng.gen_range(0..CITY_ZIPS.len())].to_string();
    let (start_zip, end_zip) = if airport {
        if rng.gen_bool(0.5) {
            (params.airport_zip.clone(), city(rng))
        } else {
            (city(rng), params.airport_zip.clone())
        }
    } else {
        (city(rng), city(rng))
    };

    RideActivity {
        activity_id: id,
        driver_id: account_id.to_string(),
        activity_type,
        status,
        start_time: Some(start),
        end_time: Some(start + Duration::milliseconds((duration * 60_000.0) as i64)),
        distance_miles: Some(distance),
        duration_minutes: Some(duration),
        start_zip: Some(start_zip),
        end_zip: Some(end_zip),
        rider_price_usd: Some(Usd::from_cents(fare + tips)),
        platform_fees_usd: Some(Usd::from_cents(fees)),
        base_pay_usd: Some(Usd::from_cents(fare - fees)),
        tips_usd: Some(Usd::from_cents(tips)),
        bonus_usd: Some(Usd::ZERO),
        surge_flag: surge,
        source_payload_digest: String::new(),
    }
    .seal()
}

/// The full backfill history of one account, ordered by start time.
pub fn generate_history(
    account_id: &str,
    params: &GeneratorParams,
    seed: u64,
) -> Vec<RideActivity> {
    let mut rng = rng_for(account_id, seed, "history");
    let draws = Draws::new();
    let span_secs = (params.date_span.end - params.date_span.start)
        .num_seconds()
        .max(1);
    let mut starts: Vec<DateTime<Utc>> = (0..params.n_rides)
        .map(|_| params.date_span.start + Duration::seconds(rng.gen_range(0..span_secs)))
        .collect();
    starts.sort();
    starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let id = activity_id(account_id, &format!("h{i}"));
            make_ride(&mut rng, &draws, params, account_id, id, start)
        })
        .collect()
}

/// Rides for simulated day `day` after the end of the history span.
pub fn generate_day(
    account_id: &str,
    params: &GeneratorParams,
    seed: u64,
    day: u32,
    n_rides: usize,
) -> Vec<RideActivity> {
    let mut rng = rng_for(account_id, seed, &format!("day{day}"));
    let draws = Draws::new();
    let day_start = params.date_span.end + Duration::days(day as i64 - 1) + Duration::seconds(1);
    let mut offsets: Vec<i64> = (0..n_rides).map(|_| rng.gen_range(0..86_400)).collect();
    offsets.sort();
    offsets
        .into_iter()
        .enumerate()
        .map(|(i, off)| {
            let id = activity_id(account_id, &format!("d{day}-{i}"));
            make_ride(
                &mut rng,
                &draws,
                params,
                account_id,
                id,
                day_start + Duration::seconds(off),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use farelens_core::take_rate::TakeRate;

    fn params(n: usize) -> GeneratorParams {
        GeneratorParams {
            n_rides: n,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_history("acct_x", &params(50), 7);
        let b = generate_history("acct_x", &params(50), 7);
        assert_eq!(a, b);
        assert_ne!(a, generate_history("acct_x", &params(50), 8));
        assert_ne!(a, generate_history("acct_y", &params(50), 7));
    }

    #[test]
    fn accounting_identity_holds() {
        for r in generate_history("acct_x", &params(500), 3) {
            let price = r.rider_price_usd.unwrap().cents();
            let tips = r.tips_usd.unwrap().cents();
            let base = r.base_pay_usd.unwrap().cents();
            let fees = r.platform_fees_usd.unwrap().cents();
            assert_eq!(price - tips, base + fees, "{}", r.activity_id);
            assert!(base >= 0 && fees >= 0);
            r.validate().unwrap();
        }
    }

    #[test]
    fn flat_era_is_exact_and_variable_era_varies() {
        let p = params(400);
        let rides = generate_history("acct_x", &p, 11);
        let cutover = FeeModel::default_cutover();
        let (pre, post): (Vec<_>, Vec<_>) =
            rides.iter().partition(|r| r.start_time.unwrap() < cutover);
        assert!(!pre.is_empty() && !post.is_empty());
        for r in &pre {
            assert_eq!(r.take_rate(), TakeRate::Percent(25.0), "{}", r.activity_id);
        }
        let rates: Vec<f64> = post
            .iter()
            .filter_map(|r| r.take_rate().percent())
            .collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let sd =
            (rates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
        assert!(sd > 4.0, "post-cutover dispersion {sd}");
    }

    #[test]
    fn ids_are_unique_and_times_sorted() {
        let rides = generate_history("acct_x", &params(300), 5);
        let mut ids: Vec<_> = rides.iter().map(|r| &r.activity_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 300);
        assert!(rides.windows(2).all(|w| w[0].start_time <= w[1].start_time));
    }

    #[test]
    fn validation() {
        let mut p = params(1);
        p.surge_probability = 1.5;
        assert_eq!(
            p.validate(),
            Err(ParamsError::Probability("surge_probability"))
        );
        let mut p = params(1);
        p.date_span.end = p.date_span.start;
        assert_eq!(p.validate(), Err(ParamsError::EmptySpan));
        assert!(params(0).validate().is_ok());
        assert!(generate_history("a", &params(0), 1).is_empty());
    }

    #[test]
    fn day_rides_follow_history() {
        let p = params(20);
        let day = generate_day("acct_x", &p, 1, 1, 5);
        assert_eq!(day.len(), 5);
        assert!(day.iter().all(|r| r.start_time.unwrap() > p.date_span.end));
        assert_eq!(day, generate_day("acct_x", &p, 1, 1, 5));
        assert_ne!(
            day[0].activity_id,
            generate_day("acct_x", &p, 1, 2, 5)[0].activity_id
        );
    }
}
