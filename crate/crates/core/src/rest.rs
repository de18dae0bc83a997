//! Client for the Wikimedia statistics REST API (daily editors by activity
//! level), with an on-disk cache and a shared rate limit.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::metrics::{median, Band, MetricKind, MetricSeries};

pub const DEFAULT_BASE_URL: &str = "https://wikimedia.org/api/rest_v1";
/// Overrides the endpoint base URL, e.g. to point tests at a local server.
pub const BASE_URL_ENV: &str = "EDITSHOCK_REST_BASE_URL";
pub const USER_AGENT: &str = concat!(
    "editshock/",
    env!("CARGO_PKG_VERSION"),
    " (research pipeline; daily editor counts by activity level)"
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiEditorPoint {
    pub language: String,
    pub band: Band,
    pub date: NaiveDate,
    pub count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RestError {
    #[error("request to {url} failed: {message}")]
    Fetch { url: String, message: String },
    #[error("unexpected response from {url}: {message}")]
    Parse { url: String, message: String },
    #[error("response for {language} {band} lacks {} dates: {}", .dates.len(), list_dates(.dates))]
    MissingDates {
        language: String,
        band: String,
        dates: Vec<NaiveDate>,
    },
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn list_dates(dates: &[NaiveDate]) -> String {
    let mut s: Vec<String> = dates.iter().take(10).map(|d| d.to_string()).collect();
    if dates.len() > 10 {
        s.push("...".into());
    }
    s.join(", ")
}

/// Performs one GET and returns the body.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, user_agent: &str) -> Result<String, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport { agent }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, user_agent: &str) -> Result<String, String> {
        let mut resp = self
            .agent
            .get(url)
            .header("User-Agent", user_agent)
            .header("Accept", "application/json")
            .call()
            .map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Spaces requests at least `1 / requests_per_second` apart across all
/// threads sharing the limiter.
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        assert!(requests_per_second > 0.0, "rate must be positive");
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / requests_per_second),
            next_slot: Mutex::new(None),
        }
    }

    /// Blocks until the caller may issue a request; returns the granted time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = clock.now();
            let at = slot.map_or(now, |s| s.max(now));
            *slot = Some(at + self.interval);
            at
        };
        let now = clock.now();
        if wait > now {
            clock.sleep(wait - now);
        }
        wait
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestSettings {
    pub base_url: String,
    pub cache_dir: PathBuf,
    pub requests_per_second: f64,
    pub refresh: bool,
    pub user_agent: String,
}

impl RestSettings {
    /// Defaults, with the base URL taken from the environment when set.
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        RestSettings {
            base_url: std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_owned()),
            cache_dir: cache_dir.into(),
            requests_per_second: 10.0,
            refresh: false,
            user_agent: USER_AGENT.to_owned(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheDocument {
    key: String,
    url: String,
    points: Vec<ApiEditorPoint>,
}

#[derive(Deserialize)]
struct ApiResponse {
    items: Vec<ApiItem>,
}

#[derive(Deserialize)]
struct ApiItem {
    results: Vec<ApiResult>,
}

#[derive(Deserialize)]
struct ApiResult {
    timestamp: String,
    editors: i64,
}

pub struct RestClient {
    settings: RestSettings,
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    requests: AtomicU64,
}

impl RestClient {
    pub fn new(settings: RestSettings) -> Self {
        Self::with_parts(settings, Box::new(HttpTransport::new(Duration::from_secs(60))), Arc::new(SystemClock::default()))
    }

    pub fn with_parts(settings: RestSettings, transport: Box<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        let limiter = RateLimiter::new(settings.requests_per_second);
        RestClient {
            settings,
            transport,
            clock,
            limiter,
            requests: AtomicU64::new(0),
        }
    }

    /// Network requests issued so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn settings(&self) -> &RestSettings {
        &self.settings
    }

    fn url(&self, language: &str, band: Band, start: NaiveDate, end: NaiveDate) -> String {
        // The endpoint's end bound is exclusive.
        let end_excl = end + Days::new(1);
        format!(
            "{}/metrics/editors/aggregate/{}.wikipedia.org/user/content/{}/daily/{}/{}",
            self.settings.base_url.trim_end_matches('/'),
            language,
            band.api_label(),
            start.format("%Y%m%d"),
            end_excl.format("%Y%m%d"),
        )
    }

    fn cache_key(language: &str, band: Band, start: NaiveDate, end: NaiveDate) -> String {
        format!(
            "editors-aggregate_{language}_{}_{}_{}",
            band.suffix(),
            start.format("%Y%m%d"),
            end.format("%Y%m%d")
        )
    }

    pub fn cache_path(&self, language: &str, band: Band, start: NaiveDate, end: NaiveDate) -> PathBuf {
        self.settings
            .cache_dir
            .join(format!("{}.json", Self::cache_key(language, band, start, end)))
    }

    /// Daily registered-editor counts for one band over `start..=end`.
    ///
    /// Cached responses are served without touching the network unless the
    /// client was configured to refresh.
    pub fn fetch_editors_by_activity(
        &self,
        language: &str,
        band: Band,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Vec<ApiEditorPoint>, RestError> {
        if start > end {
            return Ok(Vec::new());
        }
        let path = self.cache_path(language, band, start, end);
        let cached = read_cache(&path)?;
        if !self.settings.refresh {
            if let Some(points) = cached {
                return Ok(points);
            }
        }

        let url = self.url(language, band, start, end);
        self.limiter.acquire(self.clock.as_ref());
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = match self.transport.get(&url, &self.settings.user_agent) {
            Ok(b) => b,
            Err(message) => {
                if let Some(points) = cached {
                    log::warn!("refresh of {url} failed ({message}); using cached copy");
                    return Ok(points);
                }
                return Err(RestError::Fetch { url, message });
            }
        };
        let points = parse_response(&body, &url, language, band, start, end)?;
        write_cache(
            &path,
            &CacheDocument {
                key: Self::cache_key(language, band, start, end),
                url,
                points: points.clone(),
            },
        )?;
        Ok(points)
    }
}

fn parse_response(
    body: &str,
    url: &str,
    language: &str,
    band: Band,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<ApiEditorPoint>, RestError> {
    let parse_err = |message: String| RestError::Parse {
        url: url.to_owned(),
        message,
    };
    let resp: ApiResponse = serde_json::from_str(body).map_err(|e| parse_err(e.to_string()))?;
    let mut by_date = std::collections::BTreeMap::new();
    for r in resp.items.iter().flat_map(|i| &i.results) {
        let date = r
            .timestamp
            .get(..10)
            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| parse_err(format!("bad timestamp {:?}", r.timestamp)))?;
        let count = u64::try_from(r.editors).map_err(|_| parse_err(format!("negative editor count {}", r.editors)))?;
        if (start..=end).contains(&date) {
            by_date.insert(date, count);
        }
    }
    let missing: Vec<NaiveDate> = start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !by_date.contains_key(d))
        .collect();
    if !missing.is_empty() {
        return Err(RestError::MissingDates {
            language: language.to_owned(),
            band: band.api_label().to_owned(),
            dates: missing,
        });
    }
    Ok(by_date
        .into_iter()
        .map(|(date, count)| ApiEditorPoint {
            language: language.to_owned(),
            band,
            date,
            count,
        })
        .collect())
}

fn read_cache(path: &Path) -> Result<Option<Vec<ApiEditorPoint>>, RestError> {
    let cache_err = |source| RestError::Cache {
        path: path.to_owned(),
        source,
    };
    match fs::read(path) {
        Ok(bytes) => {
            let doc: CacheDocument = serde_json::from_slice(&bytes).map_err(|e| cache_err(e.into()))?;
            Ok(Some(doc.points))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(cache_err(e)),
    }
}

fn write_cache(path: &Path, doc: &CacheDocument) -> Result<(), RestError> {
    let cache_err = |source| RestError::Cache {
        path: path.to_owned(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(cache_err)?;
    // Unique temp name so concurrent writers never clobber a half-written file.
    let tmp = dir.join(format!(
        ".{}.{}.{:?}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("cache"),
        std::process::id(),
        std::thread::current().id()
    ));
    let mut f = fs::File::create(&tmp).map_err(cache_err)?;
    serde_json::to_writer_pretty(&mut f, doc).map_err(|e| cache_err(e.into()))?;
    f.write_all(b"\n").map_err(cache_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(cache_err)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub date: NaiveDate,
    pub api: f64,
    pub dump: f64,
    /// `api − dump`.
    pub diff: f64,
    /// `diff / dump`, absent when the dump count is zero.
    pub rel_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub language: String,
    pub band: Option<Band>,
    pub rows: Vec<Discrepancy>,
    /// Summary of `diff`; absent without overlapping dates.
    pub summary: Option<DiffSummary>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-date differences between API counts and a dump-derived band series,
/// over the dates both cover. API points for other bands are ignored.
pub fn compare_band_sources(api_points: &[ApiEditorPoint], dump_series: &MetricSeries) -> DiscrepancyReport {
    let band = match dump_series.kind {
        MetricKind::Editors(b) => Some(b),
        _ => None,
    };
    let mut rows: Vec<Discrepancy> = api_points
        .iter()
        .filter(|p| band.is_none_or(|b| b == p.band))
        .filter_map(|p| {
            let dump = dump_series.get(p.date).flatten()?;
            let api = p.count as f64;
            let diff = api - dump;
            Some(Discrepancy {
                date: p.date,
                api,
                dump,
                diff,
                rel_diff: (dump != 0.0).then(|| diff / dump),
            })
        })
        .collect();
    rows.sort_by_key(|r| r.date);
    let summary = (!rows.is_empty()).then(|| {
        let mut d: Vec<f64> = rows.iter().map(|r| r.diff).collect();
        d.sort_by(f64::total_cmp);
        DiffSummary {
            n: d.len(),
            mean: d.iter().sum::<f64>() / d.len() as f64,
            min: d[0],
            q25: quantile(&d, 0.25),
            median: median(&d).unwrap_or(f64::NAN),
            q75: quantile(&d, 0.75),
            max: d[d.len() - 1],
        }
    });
    DiscrepancyReport {
        language: dump_series.language.clone(),
        band,
        rows,
        summary,
    }
}
