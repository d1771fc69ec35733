//! Take rate: the share of the tip-exclusive rider price kept by the platform.

use serde::{Deserialize, Serialize};

use crate::activity::RideActivity;
use crate::money::{MoneyError, Usd};

/// A take rate in percent, or `Undefined` when the tip-exclusive price is not
/// positive. Serializes as a JSON number or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TakeRate {
    Percent(f64),
    Undefined,
}

impl TakeRate {
    pub fn percent(self) -> Option<f64> {
        match self {
            TakeRate::Percent(p) => Some(p),
            TakeRate::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, TakeRate::Percent(_))
    }

    /// Rounded to the 0.01 percentage point used for reporting.
    pub fn rounded(self) -> Option<f64> {
        self.percent().map(round2)
    }
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// `fees / (rider_price - tips) * 100`, undefined when the denominator is ≤ 0.
pub fn compute_take_rate(fees: Usd, rider_price: Usd, tips: Usd) -> TakeRate {
    let denominator = rider_price.cents() - tips.cents();
    if denominator <= 0 {
        return TakeRate::Undefined;
    }
    TakeRate::Percent(fees.cents() as f64 * 100.0 / denominator as f64)
}

/// Same as [`compute_take_rate`] for decimal-dollar inputs. Non-finite inputs
/// are a contract violation.
pub fn compute_take_rate_dollars(
    fees: f64,
    rider_price: f64,
    tips: f64,
) -> Result<TakeRate, MoneyError> {
    Ok(compute_take_rate(
        Usd::from_dollars(fees)?,
        Usd::from_dollars(rider_price)?,
        Usd::from_dollars(tips)?,
    ))
}

/// A take rate attached to its activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeRateRecord {
    pub activity_id: String,
    pub take_rate_pct: TakeRate,
}

impl RideActivity {
    /// Take rate of this record; undefined when any input is missing.
    pub fn take_rate(&self) -> TakeRate {
        match (self.platform_fees_usd, self.rider_price_usd, self.tips_usd) {
            (Some(fees), Some(price), Some(tips)) => compute_take_rate(fees, price, tips),
            _ => TakeRate::Undefined,
        }
    }
}
