//! The pipeline stages. Each stage reads only files written by earlier stages
//! (plus the raw inputs named in the config) and writes its outputs
//! atomically, so stages can be re-run independently.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Datelike, Days, NaiveDate};
use editshock_core::did::{run_window_sequence, EffectRecord, LanguageInput, Variant, WindowRunSpec};
use editshock_core::dump::{load_exclusion_list, open_dump_stream, StreamStats};
use editshock_core::metrics::{
    monthly_mad_replace, read_metrics_csv, rolling_mean, write_metrics_csv, Band, DailyAggregator, DailyMetrics,
    MetricKind, MetricSeries,
};
use editshock_core::mobility::{
    aggregate_weighted, detect_changepoints, load_google_mobility, ChangepointMethod, ChangepointRecord,
    MobilityObservation,
};
use editshock_core::plot::{activity_svg, effects_svg, MarkerKind, YearSeries};
use editshock_core::profile::LanguageProfile;
use editshock_core::rest::{compare_band_sources, DiscrepancyReport, RestClient, RestSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("missing input files:\n  {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  "))]
    Missing(Vec<PathBuf>),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Result of a stage that did not fail outright.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    /// Problems that left some outputs incomplete.
    pub partial: Vec<String>,
}

impl Outcome {
    pub fn merge(&mut self, other: Outcome) {
        self.partial.extend(other.partial);
    }

    pub fn exit_code(&self) -> i32 {
        if self.partial.is_empty() {
            0
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Restrict `did` and `plot` to one variant.
    pub variant: Option<Variant>,
    /// Bypass the REST cache.
    pub refresh: bool,
}

/// Output file locations under the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_owned() }
    }
    pub fn metrics_csv(&self, code: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{code}.csv"))
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn band_report(&self, code: &str) -> PathBuf {
        self.root.join("bands").join(format!("{code}.json"))
    }
    pub fn changepoints(&self) -> PathBuf {
        self.root.join("changepoints.json")
    }
    pub fn effects_csv(&self, variant: Variant, metric: MetricKind) -> PathBuf {
        self.root.join("effects").join(variant.label()).join(format!("{metric}.csv"))
    }
    pub fn did_report(&self, variant: Variant) -> PathBuf {
        self.root.join("effects").join(variant.label()).join("report.json")
    }
    pub fn activity_svg(&self, code: &str) -> PathBuf {
        self.root.join("plots").join("activity").join(format!("{code}.svg"))
    }
    pub fn effects_svg(&self, variant: Variant, metric: MetricKind, code: &str) -> PathBuf {
        self.root
            .join("plots")
            .join("effects")
            .join(variant.label())
            .join(metric.to_string())
            .join(format!("{code}.svg"))
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let err = |source| PipelineError::Write {
        path: path.to_owned(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(err)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).map_err(err)?;
    f.sync_all().map_err(err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn require(paths: &[PathBuf]) -> Result<(), PipelineError> {
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Missing(missing))
    }
}

// ---------------------------------------------------------------- ingest

/// Dump files for one language, in name order. Matches both the published
/// naming (`<snapshot>.<code>wiki.<period>.tsv.bz2`) and plain `<code>wiki.*`.
pub fn dump_files(dir: &Path, snapshot: &str, code: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::Input(format!("cannot list dump directory {}: {e}", dir.display())))?;
    let published = format!("{snapshot}.{code}wiki.");
    let plain = format!("{code}wiki.");
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            p.is_file() && (name.starts_with(&published) || name.starts_with(&plain))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Input(format!(
            "no dump files for {code} in {} (expected {published}* or {plain}*)",
            dir.display()
        )));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestLanguageReport {
    pub language: String,
    pub files: Vec<String>,
    #[serde(flatten)]
    pub stats: StreamStats,
    pub events: u64,
    pub excluded_events: u64,
    pub days: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
    /// Replaced points per metric.
    pub outliers: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub snapshot: String,
    pub coverage_start: NaiveDate,
    pub coverage_end: NaiveDate,
    pub languages: Vec<IngestLanguageReport>,
}

fn ingest_language(cfg: &PipelineConfig, profile: &LanguageProfile, layout: &Layout) -> Result<IngestLanguageReport, PipelineError> {
    let started = Instant::now();
    let files = dump_files(&cfg.paths.dumps, &cfg.snapshot, &profile.code)?;
    let excluded = match cfg.paths.exclusion_lists.get(&profile.code) {
        Some(p) => load_exclusion_list(p).map_err(|e| PipelineError::Input(e.to_string()))?,
        None => HashSet::new(),
    };
    let mut agg = DailyAggregator::new(cfg.ingest.ordering_tolerance_days);
    let mut stats = StreamStats::default();
    let mut excluded_events = 0;
    for file in &files {
        let mut stream = open_dump_stream(file, profile).map_err(|e| PipelineError::Input(e.to_string()))?;
        for event in stream.by_ref() {
            let event = event.map_err(|e| PipelineError::Input(e.to_string()))?;
            if excluded.contains(&event.page_id) {
                excluded_events += 1;
                continue;
            }
            agg.push(&event)
                .map_err(|e| PipelineError::Input(format!("{}: {}: {e}", profile.code, file.display())))?;
        }
        stats += stream.stats();
    }
    let (start, end) = (cfg.ingest.coverage_start, cfg.ingest.coverage_end);
    // A dump without article edits yields no rows rather than a zero-filled range.
    let coverage = (stats.events() > excluded_events).then_some((start, end));
    let daily: Vec<DailyMetrics> = agg
        .finish(coverage)
        .into_iter()
        .filter(|m| (start..=end).contains(&m.date))
        .collect();

    let mut flags: BTreeMap<NaiveDate, Vec<MetricKind>> = BTreeMap::new();
    let mut outliers = BTreeMap::new();
    for kind in MetricKind::ALL {
        let replaced = monthly_mad_replace(&MetricSeries::from_daily(&profile.code, kind, &daily), cfg.metrics.mad_k);
        outliers.insert(kind.to_string(), replaced.outlier_flags.len());
        for d in replaced.outlier_flags {
            flags.entry(d).or_default().push(kind);
        }
    }
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &daily, &flags).map_err(|e| PipelineError::Input(e.to_string()))?;
    write_atomic(&layout.metrics_csv(&profile.code), &buf)?;
    log::info!(
        "{}: {} lines, {} events in {:.1}s",
        profile.code,
        stats.lines_read,
        stats.events(),
        started.elapsed().as_secs_f64()
    );
    Ok(IngestLanguageReport {
        language: profile.code.clone(),
        files: files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        events: stats.events() - excluded_events,
        stats,
        excluded_events,
        days: daily.len(),
        first_date: daily.first().map(|m| m.date),
        last_date: daily.last().map(|m| m.date),
        outliers,
    })
}

fn band_reports(cfg: &PipelineConfig, opts: &RunOptions, layout: &Layout) -> Outcome {
    let mut outcome = Outcome::default();
    let mut settings = RestSettings::new(&cfg.paths.cache_dir);
    settings.requests_per_second = cfg.rest.requests_per_second;
    settings.refresh = opts.refresh;
    let client = RestClient::new(settings);
    for profile in &cfg.languages {
        let path = layout.metrics_csv(&profile.code);
        let daily = match fs::File::open(&path).map_err(|e| e.to_string()).and_then(|f| read_metrics_csv(f).map_err(|e| e.to_string())) {
            Ok(d) => d,
            Err(e) => {
                outcome.partial.push(format!("{}: band comparison skipped: {e}", profile.code));
                continue;
            }
        };
        let mut reports: Vec<DiscrepancyReport> = Vec::new();
        for band in Band::ALL {
            match client.fetch_editors_by_activity(&profile.code, band, cfg.rest.start, cfg.rest.end) {
                Ok(points) => {
                    let series = MetricSeries::from_daily(&profile.code, MetricKind::Editors(band), &daily);
                    reports.push(compare_band_sources(&points, &series));
                }
                Err(e) => outcome.partial.push(format!("{}: {}: {e}", profile.code, band.api_label())),
            }
        }
        if let Err(e) = write_json(&layout.band_report(&profile.code), &reports) {
            outcome.partial.push(e.to_string());
        }
    }
    outcome
}

/// Streams every language's dumps into a daily metrics CSV and writes an
/// ingest report.
pub fn cmd_ingest(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Outcome, PipelineError> {
    let layout = Layout::new(&cfg.paths.output_dir);
    if !cfg.paths.dumps.is_dir() {
        return Err(PipelineError::Missing(vec![cfg.paths.dumps.clone()]));
    }
    let results: Vec<Result<IngestLanguageReport, PipelineError>> = cfg
        .languages
        .par_iter()
        .map(|p| ingest_language(cfg, p, &layout))
        .collect();
    let mut languages = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rep) => languages.push(rep),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(PipelineError::Input(errors.join("\n")));
    }
    write_json(
        &layout.ingest_report(),
        &IngestReport {
            snapshot: cfg.snapshot.clone(),
            coverage_start: cfg.ingest.coverage_start,
            coverage_end: cfg.ingest.coverage_end,
            languages,
        },
    )?;
    if cfg.rest.enabled {
        return Ok(band_reports(cfg, opts, &layout));
    }
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- changepoints

/// Detects (or echoes configured) mobility and normality changepoints.
pub fn cmd_changepoints(cfg: &PipelineConfig) -> Result<Outcome, PipelineError> {
    let layout = Layout::new(&cfg.paths.output_dir);
    let params = &cfg.changepoints;
    let needs_mobility = cfg.languages.iter().any(|l| l.changepoint_override.is_none());
    let observations: Vec<MobilityObservation> = if needs_mobility {
        let path = cfg
            .paths
            .mobility_csv
            .clone()
            .ok_or_else(|| PipelineError::Input("paths.mobility_csv is required unless every language has a changepoint override".into()))?;
        require(std::slice::from_ref(&path))?;
        let f = fs::File::open(&path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        load_google_mobility(f).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?
    } else {
        Vec::new()
    };

    let mut outcome = Outcome::default();
    let records: Vec<ChangepointRecord> = cfg
        .languages
        .iter()
        .map(|l| {
            let mut rec = ChangepointRecord {
                language: l.code.clone(),
                mobility_date: None,
                normality_date: None,
                method: ChangepointMethod::Detected,
                category: params.category,
                error: None,
            };
            if let Some(pair) = l.changepoint_override {
                rec.method = ChangepointMethod::Override;
                rec.mobility_date = Some(pair.mobility_date);
                rec.normality_date = pair.normality_date;
                return rec;
            }
            if l.mobility_countries.is_empty() {
                rec.error = Some("no mobility countries configured".into());
                return rec;
            }
            let weighted = aggregate_weighted(&observations, l, params.category);
            for w in &weighted.warnings {
                log::warn!("{w}");
            }
            match detect_changepoints(&weighted.points(), params) {
                Ok(pair) => {
                    rec.mobility_date = Some(pair.mobility_date);
                    rec.normality_date = pair.normality_date;
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();
    for r in &records {
        if let Some(e) = &r.error {
            outcome.partial.push(format!("{}: changepoint detection failed: {e}", r.language));
        }
    }
    write_json(&layout.changepoints(), &records)?;
    Ok(outcome)
}

fn read_changepoints(layout: &Layout) -> Result<Vec<ChangepointRecord>, PipelineError> {
    let path = layout.changepoints();
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

fn read_daily(path: &Path) -> Result<Vec<DailyMetrics>, PipelineError> {
    let f = fs::File::open(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    read_metrics_csv(f).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- did

/// One row of an effects CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub language: String,
    pub metric: String,
    pub variant: String,
    pub n: usize,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub delta: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub percent: f64,
    pub n_rows: usize,
}

impl EffectRow {
    pub fn record(&self) -> EffectRecord {
        EffectRecord {
            n: self.n,
            delta: self.delta,
            se: self.se,
            ci_lo: self.ci_lo,
            ci_hi: self.ci_hi,
            n_rows: self.n_rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFailureEntry {
    pub metric: String,
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidReport {
    pub variant: String,
    pub baseline_language: String,
    pub languages: Vec<String>,
    /// Languages left out because they have no mobility changepoint.
    pub excluded_languages: Vec<String>,
    pub window_len: usize,
    pub changepoint_shift: i64,
    pub failures: Vec<WindowFailureEntry>,
}

fn shift_date(d: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        d + Days::new(days as u64)
    } else {
        d - Days::new(days.unsigned_abs())
    }
}

/// Estimates effect series per metric, language and variant.
pub fn cmd_did(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Outcome, PipelineError> {
    let layout = Layout::new(&cfg.paths.output_dir);
    let mut inputs = vec![layout.changepoints()];
    inputs.extend(cfg.languages.iter().map(|l| layout.metrics_csv(&l.code)));
    require(&inputs)?;
    let records = read_changepoints(&layout)?;

    let mut outcome = Outcome::default();
    let mut used: Vec<(&LanguageProfile, NaiveDate)> = Vec::new();
    let mut excluded = Vec::new();
    for l in &cfg.languages {
        match records.iter().find(|r| r.language == l.code).and_then(|r| r.mobility_date) {
            Some(cp) => used.push((l, cp)),
            None => {
                outcome.partial.push(format!("{}: no mobility changepoint; left out of the regression", l.code));
                excluded.push(l.code.clone());
            }
        }
    }
    let baseline = used
        .iter()
        .position(|(l, _)| l.code == cfg.baseline_language)
        .ok_or_else(|| PipelineError::Input(format!("baseline language {} has no changepoint or was filtered out", cfg.baseline_language)))?;

    let daily: Vec<Vec<DailyMetrics>> = used
        .par_iter()
        .map(|(l, _)| read_daily(&layout.metrics_csv(&l.code)))
        .collect::<Result<_, _>>()?;

    let variants = opts.variant.map(|v| vec![v]).unwrap_or_else(|| cfg.variants());
    let base_spec = cfg.run_spec(baseline);
    for variant in variants {
        let spec: WindowRunSpec = variant.apply(&base_spec);
        let mut failures = Vec::new();
        for &metric in &cfg.did.metrics {
            let series: Vec<MetricSeries> = used
                .iter()
                .zip(&daily)
                .map(|((l, _), d)| monthly_mad_replace(&MetricSeries::from_daily(&l.code, metric, d), cfg.metrics.mad_k))
                .collect();
            let lang_inputs: Vec<LanguageInput> = used
                .iter()
                .zip(&series)
                .map(|((l, cp), s)| LanguageInput {
                    code: l.code.clone(),
                    series: s,
                    changepoint: *cp,
                })
                .collect();
            let run = run_window_sequence(&lang_inputs, &spec, metric);
            for f in &run.failures {
                failures.push(WindowFailureEntry {
                    metric: metric.to_string(),
                    n: f.n,
                    message: f.message.clone(),
                });
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            for (s, (_, cp)) in run.series.iter().zip(&used) {
                let cp = shift_date(*cp, spec.changepoint_shift);
                for r in &s.records {
                    let start = cp + Days::new(r.n as u64);
                    w.serialize(EffectRow {
                        language: s.language.clone(),
                        metric: metric.to_string(),
                        variant: variant.label().to_owned(),
                        n: r.n,
                        window_start: start,
                        window_end: start + Days::new(spec.window_len as u64 - 1),
                        delta: r.delta,
                        se: r.se,
                        ci_lo: r.ci_lo,
                        ci_hi: r.ci_hi,
                        percent: r.percent(),
                        n_rows: r.n_rows,
                    })
                    .map_err(|e| PipelineError::Input(e.to_string()))?;
                }
            }
            let bytes = w.into_inner().map_err(|e| PipelineError::Input(e.to_string()))?;
            write_atomic(&layout.effects_csv(variant, metric), &bytes)?;
        }
        for f in &failures {
            outcome
                .partial
                .push(format!("{variant}: {} window {} aborted: {}", f.metric, f.n, f.message));
        }
        write_json(
            &layout.did_report(variant),
            &DidReport {
                variant: variant.label().to_owned(),
                baseline_language: cfg.baseline_language.clone(),
                languages: used.iter().map(|(l, _)| l.code.clone()).collect(),
                excluded_languages: excluded.clone(),
                window_len: spec.window_len,
                changepoint_shift: spec.changepoint_shift,
                failures,
            },
        )?;
    }
    Ok(outcome)
}

pub fn read_effects_csv(path: &Path) -> Result<Vec<EffectRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<EffectRow>, _>>()
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- plot

/// Draws activity curves with changepoint markers and effect curves with
/// confidence bands.
pub fn cmd_plot(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Outcome, PipelineError> {
    let layout = Layout::new(&cfg.paths.output_dir);
    let variant = opts.variant.unwrap_or(Variant::Base);
    let mut inputs = vec![layout.changepoints()];
    inputs.extend(cfg.languages.iter().map(|l| layout.metrics_csv(&l.code)));
    inputs.extend(cfg.did.metrics.iter().map(|m| layout.effects_csv(variant, *m)));
    require(&inputs)?;
    let records = read_changepoints(&layout)?;
    let mut years: Vec<i32> = cfg.did.years.all().into_iter().map(|(y, _)| y).collect();
    years.sort_unstable();

    for l in &cfg.languages {
        let daily = read_daily(&layout.metrics_csv(&l.code))?;
        let volume = monthly_mad_replace(&MetricSeries::from_daily(&l.code, MetricKind::EditVolume, &daily), cfg.metrics.mad_k);
        let rolled = rolling_mean(&volume, cfg.metrics.rolling_window);
        let per_year: Vec<YearSeries> = years
            .iter()
            .map(|&y| YearSeries {
                year: y,
                points: rolled
                    .iter()
                    .filter(|(d, _)| d.year() == y)
                    .filter_map(|(d, v)| v.map(|v| (d, v)))
                    .collect(),
            })
            .collect();
        let mut markers = Vec::new();
        if let Some(pair) = records.iter().find(|r| r.language == l.code).and_then(|r| r.pair()) {
            markers.push((MarkerKind::Mobility, pair.mobility_date));
            if let Some(n) = pair.normality_date {
                markers.push((MarkerKind::Normality, n));
            }
        }
        let title = format!("{}: edit volume, {}-day rolling mean", l.code, cfg.metrics.rolling_window);
        write_atomic(&layout.activity_svg(&l.code), activity_svg(&title, "edits per day", &per_year, &markers).as_bytes())?;
    }

    for &metric in &cfg.did.metrics {
        let rows = read_effects_csv(&layout.effects_csv(variant, metric))?;
        let mut by_lang: BTreeMap<&str, Vec<EffectRecord>> = BTreeMap::new();
        for r in &rows {
            by_lang.entry(&r.language).or_default().push(r.record());
        }
        for l in &cfg.languages {
            let recs = by_lang.get(l.code.as_str()).cloned().unwrap_or_default();
            let title = format!("{}: {metric} effect by window ({variant})", l.code);
            write_atomic(&layout.effects_svg(variant, metric, &l.code), effects_svg(&title, &recs).as_bytes())?;
        }
    }
    Ok(Outcome::default())
}

/// Every stage in order; stops at the first fatal error.
pub fn cmd_all(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Outcome, PipelineError> {
    let mut outcome = cmd_ingest(cfg, opts)?;
    outcome.merge(cmd_changepoints(cfg)?);
    outcome.merge(cmd_did(cfg, opts)?);
    outcome.merge(cmd_plot(cfg, opts)?);
    Ok(outcome)
}
