use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use farelens_core::filter::{Category, DateRange, FilterSpec};
use serde::{Deserialize, Serialize};

use super::error::ApiError;

pub const DEFAULT_PAGE_LIMIT: usize = 500;
pub const MAX_PAGE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PageQuery {
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
    pub next_offset: Option<usize>,
}

impl PageQuery {
    pub fn apply<T>(&self, all: Vec<T>) -> Result<Page<T>, ApiError> {
        let limit = self.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
        if limit == 0 || limit > MAX_PAGE_LIMIT {
            return Err(ApiError::invalid(
                "invalid_page",
                format!("limit must be 1 to {MAX_PAGE_LIMIT}"),
            ));
        }
        let offset = self.offset.unwrap_or(0);
        let total = all.len();
        let items: Vec<T> = all.into_iter().skip(offset).take(limit).collect();
        let end = offset.saturating_add(items.len());
        Ok(Page {
            items,
            offset,
            limit,
            total,
            next_offset: (end < total).then_some(end),
        })
    }
}

/// Query-string form of a filter: comma lists and RFC 3339 or `YYYY-MM-DD` dates.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FilterQuery {
    pub affiliation_ids: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub categories: Option<String>,
}

fn parse_instant(s: &str, end_of_day: bool) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| ApiError::invalid("invalid_filter", format!("{s:?} is not a date")))?;
    let time = if end_of_day {
        NaiveTime::from_hms_milli_opt(23, 59, 59, 999).expect("valid time")
    } else {
        NaiveTime::MIN
    };
    Ok(date.and_time(time).and_utc())
}

fn list(s: &Option<String>) -> Option<Vec<String>> {
    s.as_ref().map(|v| {
        v.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect()
    })
}

impl FilterQuery {
    pub fn to_filter(&self) -> Result<FilterSpec, ApiError> {
        let date_range = match (&self.from, &self.to) {
            (None, None) => None,
            (Some(f), Some(t)) => Some(DateRange {
                from: parse_instant(f, false)?,
                to: parse_instant(t, true)?,
            }),
            _ => {
                return Err(ApiError::invalid(
                    "invalid_filter",
                    "from and to must be given together",
                ))
            }
        };
        let categories = match list(&self.categories) {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| match n.as_str() {
                        "airport" => Ok(Category::Airport),
                        "surge" => Ok(Category::Surge),
                        other => Err(ApiError::invalid(
                            "invalid_filter",
                            format!("unknown category {other:?}"),
                        )),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(FilterSpec {
            affiliation_ids: list(&self.affiliation_ids),
            date_range,
            categories,
        })
    }
}
