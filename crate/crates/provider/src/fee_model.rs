//! Piecewise take-rate schedule used by the generator.

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// One piece of the schedule. Between `start` and `end` the mean take rate
/// moves linearly from `start_mean_pct` to `end_mean_pct`; rides draw
/// around it with standard deviation `dispersion_pp`. A segment with zero
/// dispersion and equal endpoints is a flat commission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeSegment {
    pub start: DateTime<Utc>,
    /// Exclusive; `None` means open-ended.
    pub end: Option<DateTime<Utc>>,
    pub start_mean_pct: f64,
    pub end_mean_pct: f64,
    pub dispersion_pp: f64,
}

impl FeeSegment {
    pub fn is_flat(&self) -> bool {
        self.dispersion_pp == 0.0 && self.start_mean_pct == self.end_mean_pct
    }

    fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && self.end.is_none_or(|end| t < end)
    }

    fn mean_at(&self, t: DateTime<Utc>) -> f64 {
        match self.end {
            Some(end) if self.start_mean_pct != self.end_mean_pct => {
                let span = (end - self.start).num_seconds() as f64;
                let pos = (t - self.start).num_seconds() as f64 / span;
                self.start_mean_pct
                    + (self.end_mean_pct - self.start_mean_pct) * pos.clamp(0.0, 1.0)
            }
            _ => self.start_mean_pct,
        }
    }
}

/// What the schedule says for one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeeAt {
    pub mean_pct: f64,
    pub dispersion_pp: f64,
    pub flat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeModel {
    pub segments: Vec<FeeSegment>,
}

fn utc(y: i32, m: u32, d: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
}

impl FeeModel {
    /// Flat commission before `cutover`, then a jump to a higher variable
    /// rate that eases back over two years and then holds.
    pub fn era_switching(cutover: DateTime<Utc>) -> FeeModel {
        let eased = cutover + chrono::Duration::days(730);
        FeeModel {
            segments: vec![
                FeeSegment {
                    start: utc(1970, 1, 1),
                    end: Some(cutover),
                    start_mean_pct: 25.0,
                    end_mean_pct: 25.0,
                    dispersion_pp: 0.0,
                },
                FeeSegment {
                    start: cutover,
                    end: Some(eased),
                    start_mean_pct: 33.0,
                    end_mean_pct: 24.0,
                    dispersion_pp: 8.0,
                },
                FeeSegment {
                    start: eased,
                    end: None,
                    start_mean_pct: 24.0,
                    end_mean_pct: 24.0,
                    dispersion_pp: 8.0,
                },
            ],
        }
    }

    pub fn default_cutover() -> DateTime<Utc> {
        utc(2022, 1, 1)
    }

    /// A single flat commission at all times.
    pub fn flat(rate_pct: f64) -> FeeModel {
        FeeModel {
            segments: vec![FeeSegment {
                start: utc(1970, 1, 1),
                end: None,
                start_mean_pct: rate_pct,
                end_mean_pct: rate_pct,
                dispersion_pp: 0.0,
            }],
        }
    }

    pub fn at(&self, t: DateTime<Utc>) -> Option<FeeAt> {
        self.segments.iter().find(|s| s.contains(t)).map(|s| FeeAt {
            mean_pct: s.mean_at(t),
            dispersion_pp: s.dispersion_pp,
            flat: s.is_flat(),
        })
    }

    /// True when every instant of `[from, to]` falls in some segment.
    pub fn covers(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> bool {
        let mut segments: Vec<&FeeSegment> = self.segments.iter().collect();
        segments.sort_by_key(|s| s.start);
        let mut reached = from;
        for s in segments {
            if s.start > reached {
                break;
            }
            match s.end {
                None => return true,
                Some(end) if end > reached => reached = end,
                Some(_) => {}
            }
            if reached > to {
                return true;
            }
        }
        false
    }

    pub fn is_valid(&self) -> bool {
        !self.segments.is_empty()
            && self.segments.iter().all(|s| {
                s.end.is_none_or(|e| e > s.start)
                    && [s.start_mean_pct, s.end_mean_pct, s.dispersion_pp]
                        .iter()
                        .all(|v| v.is_finite() && *v >= 0.0)
                    && s.start_mean_pct <= 100.0
                    && s.end_mean_pct <= 100.0
            })
    }
}

impl Default for FeeModel {
    fn default() -> Self {
        FeeModel::era_switching(FeeModel::default_cutover())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_shape() {
        let m = FeeModel::default();
        let before = m.at(utc(2021, 6, 1)).unwrap();
        assert!(before.flat);
        assert_eq!(before.mean_pct, 25.0);
        let jump = m.at(utc(2022, 1, 1)).unwrap();
        assert!(!jump.flat);
        assert_eq!(jump.mean_pct, 33.0);
        assert_eq!(jump.dispersion_pp, 8.0);
        let mid = m.at(utc(2023, 1, 1)).unwrap().mean_pct;
        assert!((mid - 28.5).abs() < 0.05, "{mid}");
        assert_eq!(m.at(utc(2024, 6, 1)).unwrap().mean_pct, 24.0);
    }

    #[test]
    fn coverage() {
        let m = FeeModel::default();
        assert!(m.covers(utc(2019, 1, 1), utc(2024, 12, 31)));
        let gap = FeeModel {
            segments: vec![FeeSegment {
                start: utc(2020, 1, 1),
                end: Some(utc(2021, 1, 1)),
                start_mean_pct: 20.0,
                end_mean_pct: 20.0,
                dispersion_pp: 0.0,
            }],
        };
        assert!(gap.covers(utc(2020, 2, 1), utc(2020, 12, 1)));
        assert!(!gap.covers(utc(2019, 2, 1), utc(2020, 12, 1)));
        assert!(!gap.covers(utc(2020, 2, 1), utc(2021, 2, 1)));
    }
}
