//! Synthetic revision logs and mobility series with known ground truth.
//!
//! Every random draw comes from a [`CounterRng`] keyed by the seed and the
//! draw's coordinates (language, day), so output is a pure function of the
//! configuration and does not depend on generation order or platform.

use std::collections::BTreeSet;
use std::io::{self, Write};

use chrono::{DateTime, Days, NaiveDate, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;
use rand::rand_core::impls::fill_bytes_via_next;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dump::{format_dump_row, RevisionEvent, UserKind};
use crate::metrics::{MetricKind, MetricSeries};
use crate::mobility::MobilityCategory;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 evaluated at `key + counter · γ`: output `i` depends only on the
/// key and `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: mix(seed), counter: 0 }
    }

    /// Independent stream for the coordinates `ids` under `seed`.
    pub fn stream(seed: u64, ids: &[u64]) -> Self {
        let key = ids
            .iter()
            .fold(mix(seed), |k, &id| mix(k ^ mix(id.wrapping_add(GAMMA))));
        CounterRng { key, counter: 0 }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        fill_bytes_via_next(self, dst)
    }
}

fn poisson(rng: &mut CounterRng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive finite rate");
    d.sample(rng) as u64
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("{field} must be a finite value >= 0, got {value}")]
    NegativeRate { field: &'static str, value: f64 },
    #[error("{field} must lie in [0, {max}), got {value}")]
    Probability { field: &'static str, value: f64, max: f64 },
    #[error("coverage {start}..{end} is empty")]
    EmptyCoverage { start: NaiveDate, end: NaiveDate },
    #[error("shock multiplier must be positive, got {0}")]
    Multiplier(f64),
    #[error("shock ends {end} before it starts {start}")]
    ShockRange { start: NaiveDate, end: NaiveDate },
    #[error("unknown timezone {0:?}")]
    Timezone(String),
}

/// Scales the daily edit intensity of some languages over a date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub multiplier: f64,
    pub affected_languages: BTreeSet<String>,
}

impl ShockSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(SynthError::Multiplier(self.multiplier));
        }
        if self.start_date > self.end_date {
            return Err(SynthError::ShockRange {
                start: self.start_date,
                end: self.end_date,
            });
        }
        Ok(())
    }

    fn factor(&self, language: &str, date: NaiveDate) -> f64 {
        if self.affected_languages.contains(language) && (self.start_date..=self.end_date).contains(&date) {
            self.multiplier
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLanguage {
    pub code: String,
    pub timezone: String,
    /// Mean non-bot edits per day.
    pub lambda: f64,
    /// Mean brand-new registered editors per day.
    pub newcomer_rate: f64,
    /// Chance that any edit is an identity revert.
    pub revert_prob: f64,
    /// Expected share of bot edits among all edits.
    pub bot_fraction: f64,
}

impl SynthLanguage {
    pub fn new(code: &str, timezone: &str, lambda: f64) -> Self {
        SynthLanguage {
            code: code.to_owned(),
            timezone: timezone.to_owned(),
            lambda,
            newcomer_rate: lambda / 100.0,
            revert_prob: 0.05,
            bot_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub languages: Vec<SynthLanguage>,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.start > self.end {
            return Err(SynthError::EmptyCoverage {
                start: self.start,
                end: self.end,
            });
        }
        for l in &self.languages {
            for (field, value) in [("lambda", l.lambda), ("newcomer_rate", l.newcomer_rate)] {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(SynthError::NegativeRate { field, value });
                }
            }
            for (field, value, max) in [("revert_prob", l.revert_prob, 1.0 + f64::EPSILON), ("bot_fraction", l.bot_fraction, 1.0)] {
                if !(0.0..max).contains(&value) {
                    return Err(SynthError::Probability { field, value, max: max.min(1.0) });
                }
            }
            l.timezone
                .parse::<Tz>()
                .map_err(|_| SynthError::Timezone(l.timezone.clone()))?;
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.end.signed_duration_since(self.start).num_days() as usize + 1
    }

    fn date(&self, day: usize) -> NaiveDate {
        self.start + Days::new(day as u64)
    }
}

/// The injected effect, recorded alongside the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `ln(multiplier)`, absent without a shock.
    pub log_effect: Option<f64>,
    pub shock: Option<ShockSpec>,
}

impl GroundTruth {
    fn of(shock: Option<&ShockSpec>) -> Self {
        GroundTruth {
            log_effect: shock.map(|s| s.multiplier.ln()),
            shock: shock.cloned(),
        }
    }
}

/// The first draw of every (language, day) stream is the daily non-bot
/// edit count, so count-only and full-log generation agree exactly.
fn day_rng(config: &SynthConfig, lang: usize, day: usize) -> CounterRng {
    CounterRng::stream(config.seed, &[lang as u64, day as u64])
}

fn human_rate(config: &SynthConfig, lang: usize, day: usize, shock: Option<&ShockSpec>) -> f64 {
    let l = &config.languages[lang];
    l.lambda * shock.map_or(1.0, |s| s.factor(&l.code, config.date(day)))
}

/// Daily non-bot edit counts for one language, without materializing events.
pub fn daily_edit_counts(config: &SynthConfig, lang: usize, shock: Option<&ShockSpec>) -> Vec<u64> {
    (0..config.n_days())
        .map(|day| poisson(&mut day_rng(config, lang, day), human_rate(config, lang, day, shock)))
        .collect()
}

/// Edit-volume series for every language, drawn exactly as
/// [`gen_revision_log`] would.
pub fn edit_volume_series(config: &SynthConfig, shock: Option<&ShockSpec>) -> (Vec<MetricSeries>, GroundTruth) {
    let series = (0..config.languages.len())
        .map(|lang| {
            let values = daily_edit_counts(config, lang, shock)
                .into_iter()
                .map(|c| Some(c as f64))
                .collect();
            MetricSeries::new(config.languages[lang].code.clone(), MetricKind::EditVolume, config.start, values)
        })
        .collect();
    (series, GroundTruth::of(shock))
}

const ANONYMOUS_SHARE: f64 = 0.2;
const NEWCOMER_ID_BASE: u64 = 1 << 40;

fn local_instant(tz: &Tz, date: NaiveDate, secs: u32) -> DateTime<Utc> {
    let t = NaiveTime::from_num_seconds_from_midnight_opt(secs, 0).expect("seconds within a day");
    let local = date.and_time(t);
    tz.from_local_datetime(&local)
        .earliest()
        // Inside a DST gap: the wall-clock hour does not exist, move past it.
        .or_else(|| tz.from_local_datetime(&(local + chrono::Duration::hours(1))).earliest())
        .expect("DST gaps last at most an hour")
        .with_timezone(&Utc)
}

/// All events of one language on one day, ordered by timestamp.
pub fn day_events(config: &SynthConfig, lang: usize, day: usize, shock: Option<&ShockSpec>) -> Vec<RevisionEvent> {
    let l = &config.languages[lang];
    let tz: Tz = l.timezone.parse().expect("validated timezone");
    let date = config.date(day);
    let mut rng = day_rng(config, lang, day);
    let humans = poisson(&mut rng, human_rate(config, lang, day, shock));
    let bots = poisson(&mut rng, l.lambda * l.bot_fraction / (1.0 - l.bot_fraction));
    let newcomers = poisson(&mut rng, l.newcomer_rate).min(humans);
    let pool = ((l.lambda / 4.0) as u64).max(20);

    let mut events = Vec::with_capacity((humans + bots) as usize);
    for i in 0..humans + bots {
        let (user_kind, user_id) = if i >= humans {
            (UserKind::Bot, Some(rng.random_range(1..=5u64)))
        } else if i < newcomers {
            let id = NEWCOMER_ID_BASE + ((lang as u64) << 32) + ((day as u64) << 12) + i;
            (UserKind::Registered, Some(id))
        } else if rng.random::<f64>() < ANONYMOUS_SHARE {
            (UserKind::Anonymous, None)
        } else {
            (UserKind::Registered, Some(100 + rng.random_range(0..pool)))
        };
        let secs = rng.random_range(0..86_400u32);
        let byte_delta = rng.random_range(-400..=1200i64);
        events.push(RevisionEvent {
            language: l.code.clone(),
            timestamp: local_instant(&tz, date, secs),
            local_date: date,
            user_kind,
            user_id,
            is_identity_revert: rng.random::<f64>() < l.revert_prob,
            byte_delta,
            page_id: rng.random_range(1..=50_000u64),
        });
    }
    events.sort_by_key(|e| e.timestamp);
    events
}

/// A generated log per language, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLog {
    pub events: Vec<Vec<RevisionEvent>>,
    pub truth: GroundTruth,
}

/// Generates a full revision log. Daily non-bot edit counts are
/// `Poisson(λ · multiplier)` inside the shock and `Poisson(λ)` elsewhere.
pub fn gen_revision_log(config: &SynthConfig, shock: Option<&ShockSpec>) -> SynthLog {
    let events = (0..config.languages.len())
        .map(|lang| {
            (0..config.n_days())
                .flat_map(|day| day_events(config, lang, day, shock))
                .collect()
        })
        .collect();
    SynthLog {
        events,
        truth: GroundTruth::of(shock),
    }
}

/// Streams one language's log straight to dump TSV; returns the line count.
pub fn write_language_dump<W: Write>(
    mut w: W,
    config: &SynthConfig,
    lang: usize,
    shock: Option<&ShockSpec>,
) -> io::Result<u64> {
    let wiki_db = format!("{}wiki", config.languages[lang].code);
    let mut lines = 0;
    for day in 0..config.n_days() {
        for e in day_events(config, lang, day, shock) {
            writeln!(w, "{}", format_dump_row(&e, &wiki_db))?;
            lines += 1;
        }
    }
    w.flush()?;
    Ok(lines)
}

/// Writes events as dump TSV lines.
pub fn write_dump<'a, W: Write>(mut w: W, events: impl IntoIterator<Item = &'a RevisionEvent>, wiki_db: &str) -> io::Result<u64> {
    let mut lines = 0;
    for e in events {
        writeln!(w, "{}", format_dump_row(e, wiki_db))?;
        lines += 1;
    }
    w.flush()?;
    Ok(lines)
}

/// Daily series equal to 0 before `step_date` and `step_size` from it on,
/// plus Gaussian noise with standard deviation `noise_sd`.
pub fn gen_mobility(
    start: NaiveDate,
    days: usize,
    step_date: NaiveDate,
    step_size: f64,
    noise_sd: f64,
    seed: u64,
) -> Vec<(NaiveDate, f64)> {
    let noise = (noise_sd > 0.0).then(|| Normal::new(0.0, noise_sd).expect("finite sd"));
    (0..days)
        .map(|i| {
            let date = start + Days::new(i as u64);
            let level = if date >= step_date { step_size } else { 0.0 };
            let eps = noise
                .as_ref()
                .map_or(0.0, |n| n.sample(&mut CounterRng::stream(seed, &[i as u64])));
            (date, level + eps)
        })
        .collect()
}

/// Writes country-level rows in the Google Community Mobility Reports layout.
/// Every category column carries the same value.
pub fn write_mobility_csv<W: Write>(w: W, countries: &[(&str, &[(NaiveDate, f64)])]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "country_region_code",
        "country_region",
        "sub_region_1",
        "sub_region_2",
        "metro_area",
        "iso_3166_2_code",
        "census_fips_code",
        "place_id",
        "date",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(MobilityCategory::ALL.iter().map(|c| c.column()));
    out.write_record(&header)?;
    for (code, points) in countries {
        for (date, v) in *points {
            let mut rec = vec![code.to_string(), code.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), date.to_string()];
            rec.extend(MobilityCategory::ALL.iter().map(|_| format!("{v:.3}")));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}
