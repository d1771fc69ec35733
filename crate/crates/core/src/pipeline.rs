//! The reproducible cleaning-and-analysis run.
//!
//! A run is a pure function of `(snapshot content, filter, config, version)`.
//! Its digest is computed from those inputs alone, so a cache keyed by the
//! digest can answer a rerun without recomputing anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::RideActivity;
use crate::classify::{classify_airport, DEFAULT_AIRPORT_ZIP};
use crate::clean::{clean, CleaningReport, RetainedRide};
use crate::compare::{compare_airport, compare_surge, ComparisonResult, DEFAULT_MODE_BIN_WIDTH};
use crate::digest::{sha256_hex, DigestBuilder};
use crate::filter::{Category, FilterSpec};
use crate::perception::{perception_vs_actual, PerceptionComparison};
use crate::series::{
    rate_per_mile, weekly_series, DistanceRateSeries, TimeSeries, DEFAULT_DISTANCE_EDGES,
};
use crate::snapshot::{Snapshot, SurveyAnswers};
use crate::summary::{summarize_group, AggregateSummary};

/// Bumped whenever any pipeline output could change for the same inputs.
pub const PIPELINE_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub airport_zips: BTreeSet<String>,
    pub mode_bin_width: f64,
    pub distance_bin_edges: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            airport_zips: [DEFAULT_AIRPORT_ZIP.to_string()].into(),
            mode_bin_width: DEFAULT_MODE_BIN_WIDTH,
            distance_bin_edges: DEFAULT_DISTANCE_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("snapshot {0} not found")]
    SnapshotNotFound(String),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("bundle I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bundle file {path} is not valid: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline_version: String,
    /// Digest of the run inputs; the cache key.
    pub digest: String,
    pub snapshot_id: String,
    pub filter: FilterSpec,
    pub config: PipelineConfig,
    pub data_as_of: Option<DateTime<Utc>>,
    /// How weekly means weight observations.
    pub weekly_weighting: String,
    /// SHA-256 of every other file in the bundle.
    pub files: BTreeMap<String, String>,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub manifest: Manifest,
    pub cleaning_report: CleaningReport,
    pub summaries: Vec<AggregateSummary>,
    pub weekly_series: TimeSeries,
    pub comparisons: Vec<ComparisonResult>,
    pub perception: PerceptionComparison,
    pub rate_per_mile: DistanceRateSeries,
    /// Human-readable notes, e.g. requested groups that were empty.
    pub notices: Vec<String>,
}

pub const SUMMARY_GROUP_ALL: &str = "all";
pub const SUMMARY_GROUP_SURGE: &str = "surge";
pub const SUMMARY_GROUP_AIRPORT: &str = "airport";

pub fn pipeline_digest(snapshot_id: &str, filter: &FilterSpec, config: &PipelineConfig) -> String {
    DigestBuilder::new()
        .part("version", PIPELINE_VERSION.as_bytes())
        .part("snapshot", snapshot_id.as_bytes())
        .json("filter", &filter.canonical())
        .json("config", config)
        .finish()
}

fn validate_config(config: &PipelineConfig) -> Result<(), PipelineError> {
    if !(config.mode_bin_width.is_finite() && config.mode_bin_width > 0.0) {
        return Err(PipelineError::Config(
            "mode_bin_width must be positive".into(),
        ));
    }
    if config.airport_zips.is_empty() {
        return Err(PipelineError::Config(
            "airport_zips must not be empty".into(),
        ));
    }
    let e = &config.distance_bin_edges;
    // negated form so NaN edges are rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let unordered = e.windows(2).any(|w| !(w[0] < w[1]));
    if e.len() < 2 || unordered {
        return Err(PipelineError::Config(
            "distance_bin_edges must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Runs cleaning and every analysis over the filtered snapshot.
pub fn run_pipeline(
    snapshot: &Snapshot,
    filter: &FilterSpec,
    config: &PipelineConfig,
) -> Result<Bundle, PipelineError> {
    validate_config(config)?;
    let filter = filter.canonical();
    let snapshot_id = snapshot.snapshot_id();
    let digest = pipeline_digest(&snapshot_id, &filter, config);

    let affiliation: BTreeMap<&str, Option<&str>> = snapshot
        .drivers
        .iter()
        .map(|d| (d.driver_id.as_str(), d.affiliation_id.as_deref()))
        .collect();
    let region: BTreeMap<&str, Option<&str>> = snapshot
        .affiliations
        .iter()
        .map(|a| (a.affiliation_id.as_str(), a.region_tag.as_deref()))
        .collect();
    let affiliation_of = |driver: &str| affiliation.get(driver).copied().flatten();

    let in_scope = |a: &RideActivity| -> bool {
        if let Some(ids) = &filter.affiliation_ids {
            match affiliation_of(&a.driver_id) {
                Some(aff) if ids.iter().any(|id| id == aff) => {}
                _ => return false,
            }
        }
        if let Some(range) = &filter.date_range {
            match a.start_time {
                Some(t) if range.contains(t) => {}
                _ => return false,
            }
        }
        true
    };
    let scoped: Vec<&RideActivity> = snapshot.activities.iter().filter(|a| in_scope(a)).collect();
    let (mut retained, cleaning_report) = clean(scoped);

    if let Some(categories) = &filter.categories {
        retained.retain(|r| {
            categories.iter().any(|c| match c {
                Category::Airport => classify_airport(&r.activity, &config.airport_zips),
                Category::Surge => r.activity.surge_flag,
            })
        });
    }

    let mut notices = Vec::new();
    let summaries = build_summaries(
        &retained,
        config,
        |d| affiliation_of(d).and_then(|aff| region.get(aff).copied().flatten()),
        &mut notices,
    );

    let in_filter_drivers: BTreeSet<&str> = snapshot
        .drivers
        .iter()
        .map(|d| d.driver_id.as_str())
        .filter(|d| match &filter.affiliation_ids {
            Some(ids) => affiliation_of(d).is_some_and(|aff| ids.iter().any(|id| id == aff)),
            None => true,
        })
        .collect();
    let responses: Vec<SurveyAnswers> = snapshot
        .survey_responses
        .iter()
        .filter(|r| in_filter_drivers.contains(r.driver_id.as_str()))
        .cloned()
        .collect();
    let perception = perception_vs_actual(&responses, &retained);
    if perception.is_empty() {
        notices.push("perception: no survey respondent has analyzable rides".into());
    }

    let comparisons = vec![
        compare_airport(&retained, &config.airport_zips, config.mode_bin_width),
        compare_surge(&retained, config.mode_bin_width),
    ];
    for c in &comparisons {
        if c.is_degenerate() {
            notices.push(format!(
                "comparison {} vs {}: one side is empty",
                c.label_a, c.label_b
            ));
        }
    }

    let rate_per_mile = rate_per_mile(&retained, &config.distance_bin_edges)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut bundle = Bundle {
        manifest: Manifest {
            pipeline_version: PIPELINE_VERSION.to_string(),
            digest,
            snapshot_id,
            filter,
            config: config.clone(),
            data_as_of: retained.iter().filter_map(|r| r.activity.end_time).max(),
            weekly_weighting: "per-ride".to_string(),
            files: BTreeMap::new(),
        },
        cleaning_report,
        summaries,
        weekly_series: weekly_series(&retained),
        comparisons,
        perception,
        rate_per_mile,
        notices,
    };
    bundle.manifest.files = bundle
        .files()
        .into_iter()
        .filter(|(name, _)| *name != MANIFEST_FILE)
        .map(|(name, bytes)| (name.to_string(), sha256_hex(&bytes)))
        .collect();
    Ok(bundle)
}

fn build_summaries<'a>(
    retained: &'a [RetainedRide],
    config: &PipelineConfig,
    region_of: impl Fn(&str) -> Option<&'a str>,
    notices: &mut Vec<String>,
) -> Vec<AggregateSummary> {
    let mut out = Vec::new();
    let mut push =
        |label: &str, rides: Vec<&RetainedRide>, notices: &mut Vec<String>| match summarize_group(
            label, rides,
        ) {
            Some(s) => out.push(s),
            None => notices.push(format!("summary group {label:?} is empty and was omitted")),
        };
    push(SUMMARY_GROUP_ALL, retained.iter().collect(), notices);
    push(
        SUMMARY_GROUP_SURGE,
        retained.iter().filter(|r| r.activity.surge_flag).collect(),
        notices,
    );
    push(
        SUMMARY_GROUP_AIRPORT,
        retained
            .iter()
            .filter(|r| classify_airport(&r.activity, &config.airport_zips))
            .collect(),
        notices,
    );
    let mut regions: BTreeMap<&str, Vec<&RetainedRide>> = BTreeMap::new();
    for ride in retained {
        if let Some(tag) = region_of(&ride.activity.driver_id) {
            regions.entry(tag).or_default().push(ride);
        }
    }
    for (tag, rides) in regions {
        push(&format!("region:{tag}"), rides, notices);
    }
    out
}

pub const MANIFEST_FILE: &str = "manifest.json";
const CLEANING_FILE: &str = "cleaning_report.json";
const SUMMARIES_FILE: &str = "summaries.json";
const WEEKLY_FILE: &str = "weekly_series.json";
const COMPARISONS_FILE: &str = "comparisons.json";
const PERCEPTION_FILE: &str = "perception.json";
const RATE_FILE: &str = "rate_per_mile.json";
const NOTICES_FILE: &str = "notices.json";

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("bundle part serializes");
    bytes.push(b'\n');
    bytes
}

impl Bundle {
    pub fn digest(&self) -> &str {
        &self.manifest.digest
    }

    /// The serialized files making up this bundle.
    pub fn files(&self) -> Vec<(&'static str, Vec<u8>)> {
        vec![
            (CLEANING_FILE, pretty(&self.cleaning_report)),
            (SUMMARIES_FILE, pretty(&self.summaries)),
            (WEEKLY_FILE, pretty(&self.weekly_series)),
            (COMPARISONS_FILE, pretty(&self.comparisons)),
            (PERCEPTION_FILE, pretty(&self.perception)),
            (RATE_FILE, pretty(&self.rate_per_mile)),
            (NOTICES_FILE, pretty(&self.notices)),
            (MANIFEST_FILE, pretty(&self.manifest)),
        ]
    }

    pub fn summary(&self, group: &str) -> Option<&AggregateSummary> {
        self.summaries.iter().find(|s| s.group == group)
    }

    pub fn comparison(&self, label_a: &str) -> Option<&ComparisonResult> {
        self.comparisons.iter().find(|c| c.label_a == label_a)
    }

    /// Writes the bundle as a directory of JSON files. The manifest is
    /// written last so a directory with a manifest is complete.
    pub fn write_dir(&self, dir: &Path) -> Result<(), PipelineError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, bytes) in self.files() {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Bundle, PipelineError> {
        fn load<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T, PipelineError> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_slice(&bytes).map_err(|source| PipelineError::Decode { path, source })
        }
        Ok(Bundle {
            manifest: load(dir, MANIFEST_FILE)?,
            cleaning_report: load(dir, CLEANING_FILE)?,
            summaries: load(dir, SUMMARIES_FILE)?,
            weekly_series: load(dir, WEEKLY_FILE)?,
            comparisons: load(dir, COMPARISONS_FILE)?,
            perception: load(dir, PERCEPTION_FILE)?,
            rate_per_mile: load(dir, RATE_FILE)?,
            notices: load(dir, NOTICES_FILE)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    Miss,
}

/// Bundle directories under `root/<digest>/`.
#[derive(Debug, Clone)]
pub struct BundleCache {
    root: PathBuf,
}

impl BundleCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BundleCache { root: root.into() }
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.root.join(digest)
    }

    pub fn lookup(&self, digest: &str) -> Option<Bundle> {
        let dir = self.path_for(digest);
        if !dir.join(MANIFEST_FILE).is_file() {
            return None;
        }
        Bundle::read_dir(&dir)
            .ok()
            .filter(|b| b.manifest.digest == digest)
    }

    /// Returns the cached bundle for these inputs, or runs and stores it.
    pub fn run(
        &self,
        snapshot: &Snapshot,
        filter: &FilterSpec,
        config: &PipelineConfig,
    ) -> Result<(Bundle, PathBuf, CacheStatus), PipelineError> {
        validate_config(config)?;
        let digest = pipeline_digest(&snapshot.snapshot_id(), filter, config);
        let dir = self.path_for(&digest);
        if let Some(bundle) = self.lookup(&digest) {
            return Ok((bundle, dir, CacheStatus::Hit));
        }
        let bundle = run_pipeline(snapshot, filter, config)?;
        bundle.write_dir(&dir)?;
        Ok((bundle, dir, CacheStatus::Miss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::fixtures::ride;
    use crate::money::Usd;
    use crate::snapshot::{AffiliationMeta, DriverMeta};

    fn snapshot() -> Snapshot {
        let mut activities = Vec::new();
        for i in 0..6 {
            let driver = if i % 2 == 0 { "d1" } else { "d2" };
            let mut r = ride(&format!("r{i}"), driver, 2000 + 100 * i, 500 + 20 * i, 0);
            r.surge_flag = i == 1 || i == 4;
            if i == 2 {
                r.end_zip = Some("80249".into());
            }
            activities.push(r.seal());
        }
        Snapshot {
            activities,
            drivers: vec![
                DriverMeta {
                    driver_id: "d1".into(),
                    affiliation_id: Some("aff-a".into()),
                },
                DriverMeta {
                    driver_id: "d2".into(),
                    affiliation_id: Some("aff-b".into()),
                },
            ],
            affiliations: vec![
                AffiliationMeta {
                    affiliation_id: "aff-a".into(),
                    name: "A".into(),
                    region_tag: Some("CO".into()),
                },
                AffiliationMeta {
                    affiliation_id: "aff-b".into(),
                    name: "B".into(),
                    region_tag: None,
                },
            ],
            survey_responses: vec![SurveyAnswers {
                driver_id: "d1".into(),
                estimated_take_rate_pct: 50.0,
                fair_take_rate_pct: 20.0,
            }],
        }
    }

    #[test]
    fn digest_is_deterministic_and_content_sensitive() {
        let s = snapshot();
        let cfg = PipelineConfig::default();
        let a = run_pipeline(&s, &FilterSpec::default(), &cfg).unwrap();
        let b = run_pipeline(&s, &FilterSpec::default(), &cfg).unwrap();
        assert_eq!(a, b);

        let mut edited = s.clone();
        edited.activities[0].tips_usd = Some(Usd::from_cents(1));
        edited.activities[0].rider_price_usd = Some(Usd::from_cents(2001));
        let c = run_pipeline(&edited, &FilterSpec::default(), &cfg).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn digest_ignores_input_order() {
        let s = snapshot();
        let mut shuffled = s.clone();
        shuffled.activities.reverse();
        shuffled.drivers.reverse();
        let cfg = PipelineConfig::default();
        let a = run_pipeline(&s, &FilterSpec::default(), &cfg).unwrap();
        let b = run_pipeline(&shuffled, &FilterSpec::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affiliation_filter_keeps_only_that_group() {
        let filter = FilterSpec {
            affiliation_ids: Some(vec!["aff-a".into()]),
            ..Default::default()
        };
        let b = run_pipeline(&snapshot(), &filter, &PipelineConfig::default()).unwrap();
        let all = b.summary(SUMMARY_GROUP_ALL).unwrap();
        assert_eq!(all.n_drivers, 1);
        assert_eq!(all.n_rides, 3);
        assert_eq!(b.cleaning_report.input_count, 3);
        assert_eq!(b.perception.n_respondents, 1);
        assert!(b.summary("region:CO").is_some());
    }

    #[test]
    fn standard_groups_and_comparisons_present() {
        let b = run_pipeline(
            &snapshot(),
            &FilterSpec::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(b.summary(SUMMARY_GROUP_SURGE).unwrap().n_rides, 2);
        assert_eq!(b.summary(SUMMARY_GROUP_AIRPORT).unwrap().n_rides, 1);
        assert_eq!(b.comparison("airport").unwrap().n_a, 1);
        assert_eq!(b.comparison("surge").unwrap().n_a, 2);
        assert_eq!(b.manifest.files.len(), 7);
    }

    #[test]
    fn cache_hit_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let cache = BundleCache::new(dir.path());
        let s = snapshot();
        let cfg = PipelineConfig::default();
        let (b1, p1, st1) = cache.run(&s, &FilterSpec::default(), &cfg).unwrap();
        let (b2, p2, st2) = cache.run(&s, &FilterSpec::default(), &cfg).unwrap();
        assert_eq!(st1, CacheStatus::Miss);
        assert_eq!(st2, CacheStatus::Hit);
        assert_eq!(p1, p2);
        assert_eq!(b1, b2);
        for (name, hash) in &b2.manifest.files {
            assert_eq!(&sha256_hex(&fs::read(p2.join(name)).unwrap()), hash);
        }
    }

    #[test]
    fn empty_snapshot_reports_notices() {
        let b = run_pipeline(
            &Snapshot::default(),
            &FilterSpec::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(b.summaries.is_empty());
        assert!(b.perception.is_empty());
        assert!(b.comparisons.iter().all(|c| c.is_degenerate()));
        assert!(!b.notices.is_empty());
    }
}
