//! Pipeline configuration: one JSON document describing a whole run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use editshock_core::did::{Transform, Variant, WindowRunSpec, YearSpec};
use editshock_core::metrics::MetricKind;
use editshock_core::mobility::ChangepointParams;
use editshock_core::profile::LanguageProfile;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is not valid: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding the history dumps.
    pub dumps: PathBuf,
    /// Google Community Mobility Reports CSV; optional when every language has
    /// a changepoint override.
    #[serde(default)]
    pub mobility_csv: Option<PathBuf>,
    /// Page-id exclusion list per language code.
    #[serde(default)]
    pub exclusion_lists: BTreeMap<String, PathBuf>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestParams {
    /// Inclusive date range of the written metrics.
    pub coverage_start: NaiveDate,
    pub coverage_end: NaiveDate,
    /// Days an event may arrive after later-dated events.
    pub ordering_tolerance_days: u64,
}

impl Default for IngestParams {
    fn default() -> Self {
        IngestParams {
            coverage_start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            coverage_end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
            ordering_tolerance_days: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// Points further than `mad_k · MAD` from their monthly median are replaced.
    pub mad_k: f64,
    /// Trailing window of the plotted rolling average.
    pub rolling_window: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            mad_k: 5.0,
            rolling_window: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DidParams {
    pub window_len: usize,
    pub baseline_len: usize,
    pub n_windows: usize,
    pub years: YearSpec,
    /// Response transform for count metrics.
    pub transform: Transform,
    pub metrics: Vec<MetricKind>,
    /// Also run the 14-day and ±7-day changepoint variants.
    pub robustness: bool,
}

impl Default for DidParams {
    fn default() -> Self {
        DidParams {
            window_len: 7,
            baseline_len: 30,
            n_windows: 120,
            years: YearSpec::default(),
            transform: Transform::Log1p,
            metrics: MetricKind::ALL.to_vec(),
            robustness: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestParams {
    /// Fetch API band counts during ingest and compare them with the dumps.
    pub enabled: bool,
    pub requests_per_second: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Default for RestParams {
    fn default() -> Self {
        RestParams {
            enabled: false,
            requests_per_second: 10.0,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Dump snapshot identifier, e.g. `2021-01`.
    pub snapshot: String,
    pub languages: Vec<LanguageProfile>,
    /// Reference language of the regression.
    pub baseline_language: String,
    pub paths: Paths,
    #[serde(default)]
    pub ingest: IngestParams,
    #[serde(default)]
    pub metrics: MetricParams,
    #[serde(default)]
    pub changepoints: ChangepointParams,
    #[serde(default)]
    pub did: DidParams,
    #[serde(default)]
    pub rest: RestParams,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

impl PipelineConfig {
    /// Reads, validates, and resolves relative paths against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.dumps);
        if let Some(p) = self.paths.mobility_csv.as_mut() {
            fix(p);
        }
        self.paths.exclusion_lists.values_mut().for_each(fix);
        fix(&mut self.paths.cache_dir);
        fix(&mut self.paths.output_dir);
    }

    /// Range checks on every parameter; no file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        check(!self.snapshot.trim().is_empty(), || "snapshot must be set".into())?;
        check(!self.languages.is_empty(), || "languages must not be empty".into())?;
        let mut codes = BTreeSet::new();
        for l in &self.languages {
            check(codes.insert(l.code.as_str()), || format!("language {} listed twice", l.code))?;
            l.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        check(codes.contains(self.baseline_language.as_str()), || {
            format!("baseline language {} is not among the languages", self.baseline_language)
        })?;
        for code in self.paths.exclusion_lists.keys() {
            check(codes.contains(code.as_str()), || format!("exclusion list for unknown language {code}"))?;
        }

        let ing = &self.ingest;
        check(ing.coverage_start <= ing.coverage_end, || "ingest coverage is empty".into())?;
        check(ing.ordering_tolerance_days <= 31, || "ordering_tolerance_days must be at most 31".into())?;

        let m = &self.metrics;
        check(m.mad_k.is_finite() && m.mad_k > 0.0, || format!("mad_k must be positive, got {}", m.mad_k))?;
        check((1..=90).contains(&m.rolling_window), || "rolling_window must be within 1..=90".into())?;

        let c = &self.changepoints;
        check(c.search_start <= c.search_end, || "changepoint search window is empty".into())?;
        check((1..=31).contains(&c.smoothing_window), || "smoothing_window must be within 1..=31".into())?;
        check((1..=90).contains(&c.min_segment), || "min_segment must be within 1..=90".into())?;
        check((1..=20).contains(&c.max_changepoints), || "max_changepoints must be within 1..=20".into())?;
        check(c.band > 0.0 && c.band < 1.0, || format!("normality band must be within (0, 1), got {}", c.band))?;

        let d = &self.did;
        check((1..=60).contains(&d.window_len), || "window_len must be within 1..=60".into())?;
        check((1..=365).contains(&d.baseline_len), || "baseline_len must be within 1..=365".into())?;
        check((1..=366).contains(&d.n_windows), || "n_windows must be within 1..=366".into())?;
        check(!d.years.treated.is_empty() && !d.years.control.is_empty(), || {
            "did years need at least one treated and one control year".into()
        })?;
        let treated: BTreeSet<i32> = d.years.treated.iter().copied().collect();
        check(d.years.control.iter().all(|y| !treated.contains(y)), || "a year cannot be both treated and control".into())?;
        check(!d.metrics.is_empty(), || "did metrics must not be empty".into())?;

        let r = &self.rest;
        check(r.requests_per_second > 0.0 && r.requests_per_second <= 100.0, || {
            "requests_per_second must be within (0, 100]".into()
        })?;
        check(r.start <= r.end, || "rest date range is empty".into())?;
        Ok(())
    }

    /// Keeps only the listed languages, in config order.
    pub fn restrict_languages(&mut self, codes: &[String]) -> Result<(), ConfigError> {
        for c in codes {
            check(self.languages.iter().any(|l| &l.code == c), || format!("--languages names unknown language {c}"))?;
        }
        self.languages.retain(|l| codes.contains(&l.code));
        Ok(())
    }

    pub fn language(&self, code: &str) -> Option<&LanguageProfile> {
        self.languages.iter().find(|l| l.code == code)
    }

    pub fn run_spec(&self, baseline: usize) -> WindowRunSpec {
        WindowRunSpec {
            window_len: self.did.window_len,
            baseline_len: self.did.baseline_len,
            n_windows: self.did.n_windows,
            years: self.did.years.clone(),
            transform: self.did.transform,
            baseline,
            changepoint_shift: 0,
        }
    }

    /// Variants a `did` run produces when none is requested explicitly.
    pub fn variants(&self) -> Vec<Variant> {
        if self.did.robustness {
            Variant::ALL.to_vec()
        } else {
            vec![Variant::Base]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "schema_version": 1,
            "snapshot": "2021-01",
            "baseline_language": "da",
            "languages": [
                {"code": "da", "timezone": "Europe/Copenhagen", "size_class": "small"},
                {"code": "en", "timezone": "UTC", "size_class": "large"}
            ],
            "paths": {"dumps": "dumps", "cache_dir": "cache", "output_dir": "out"}
        }"#
        .to_owned()
    }

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, minimal()).unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.dumps, dir.path().join("dumps"));
        assert_eq!((cfg.did.window_len, cfg.did.baseline_len, cfg.did.n_windows), (7, 30, 120));
        assert_eq!(cfg.metrics.mad_k, 5.0);
        assert_eq!(cfg.did.metrics.len(), 8);
        assert_eq!(cfg.variants().len(), 4);
    }

    #[test]
    fn rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let cases = [
            (r#""schema_version": 1"#, r#""schema_version": 2"#),
            (r#""baseline_language": "da""#, r#""baseline_language": "fi""#),
            (r#""timezone": "UTC""#, r#""timezone": "Mars/Olympus""#),
            (r#""output_dir": "out"}"#, r#""output_dir": "out"}, "did": {"window_len": 0}"#),
            (r#""output_dir": "out"}"#, r#""output_dir": "out"}, "metrics": {"mad_k": -1}"#),
            (r#""output_dir": "out"}"#, r#""output_dir": "out"}, "did": {"years": {"treated": [2020], "control": [2020]}}"#),
            (r#""output_dir": "out"}"#, r#""output_dir": "out"}, "bogus": 1"#),
        ];
        for (from, to) in cases {
            fs::write(&p, minimal().replace(from, to)).unwrap();
            assert!(PipelineConfig::load(&p).is_err(), "{to}");
        }
    }

    #[test]
    fn language_filter() {
        let mut cfg: PipelineConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.restrict_languages(&["en".into()]).unwrap();
        assert_eq!(cfg.languages.len(), 1);
        assert!(cfg.restrict_languages(&["xx".into()]).is_err());
    }
}
